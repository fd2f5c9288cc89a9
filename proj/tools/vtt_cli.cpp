// vtt: command-line front end for dataset building, training, generation,
// evaluation and diagnosis.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "vtt/vtt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vtt;

namespace {

constexpr int kExitError = 1;
constexpr int kExitValidation = 2;

// Raised for input that fails validation (build-dataset exits 2 on these).
struct ValidationFailure : Error {
  using Error::Error;
};

void echo(const std::string& command, const json& config) {
  std::cout << json{{"command", command}, {"config", config}}.dump() << std::endl;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

SplitRatios parse_ratios(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kConfig, "--ratios expects three numbers a,b,c, got '" + s + "'");
    }
  }
  if (v.size() != 3) throw Error(ErrorKind::kConfig, "--ratios expects three numbers a,b,c, got '" + s + "'");
  return {v[0], v[1], v[2]};
}

json ratios_json(const SplitRatios& r) { return {r.train, r.val, r.test}; }

void print_stats(const DatasetManifest& m) {
  std::cout << std::left << std::setw(8) << "split" << std::right << std::setw(9) << "samples" << std::setw(9)
            << "states" << std::setw(8) << "trans" << std::setw(8) << "uniq_t" << std::setw(8) << "words"
            << std::setw(7) << "cats" << std::setw(8) << "topics" << std::setw(9) << "avg_len" << '\n';
  auto row = [&](const std::string& name, const DatasetStats& st) {
    std::size_t words = 0, sentences = 0;
    for (auto [len, count] : st.sentence_length_hist) {
      words += len * count;
      sentences += count;
    }
    std::cout << std::left << std::setw(8) << name << std::right << std::setw(9) << st.n_samples << std::setw(9)
              << st.n_states << std::setw(8) << st.n_transformations << std::setw(8)
              << st.n_unique_transformations << std::setw(8) << st.word_freq.size() << std::setw(7)
              << st.n_categories << std::setw(8) << st.n_topics << std::setw(9) << std::fixed
              << std::setprecision(2) << (sentences ? double(words) / double(sentences) : 0.0) << '\n';
  };
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) row(to_string(s), compute_stats(m, s));
  row("total", compute_stats(m));
}

// Model and training settings shared by train and grid.
struct TrainFlags {
  std::string preset = "paper";
  std::string config;
  std::optional<int> epochs, batch_size, warmup, d_model, heads, enc_layers, dec_layers;
  std::optional<double> lr, alpha, beta, mask_ratio, sample_ratio, weight_decay;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> diff_fusion, rep_source, diff_first;
  bool no_diff = false, no_mtm = false, no_aux = false;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "paper|desk defaults")->check(CLI::IsMember({"paper", "desk"}));
    app->add_option("--config", config, "JSON file with optional \"model\" and \"train\" objects");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--warmup", warmup, "warmup steps");
    app->add_option("--lr", lr, "peak learning rate");
    app->add_option("--alpha", alpha, "category loss weight");
    app->add_option("--beta", beta, "topic loss weight");
    app->add_option("--mask-ratio", mask_ratio);
    app->add_option("--sample-ratio", sample_ratio);
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--seed", seed);
    app->add_option("--d-model", d_model);
    app->add_option("--heads", heads);
    app->add_option("--enc-layers", enc_layers);
    app->add_option("--dec-layers", dec_layers);
    app->add_option("--diff-fusion", diff_fusion)->check(CLI::IsMember({"early", "late"}));
    app->add_option("--rep-source", rep_source)->check(CLI::IsMember({"diff", "state", "sum"}));
    app->add_option("--diff-first", diff_first)->check(CLI::IsMember({"wrap", "zero"}));
    app->add_flag("--no-diff", no_diff, "disable difference features");
    app->add_flag("--no-mtm", no_mtm, "disable masked transformation modeling");
    app->add_flag("--no-aux", no_aux, "disable category/topic losses");
  }

  // Flags over config file over preset.
  std::pair<ModelConfig, TrainConfig> resolve() const {
    ModelConfig m = preset == "desk" ? desk_model_config() : ModelConfig{};
    TrainConfig t = preset == "desk" ? desk_train_config() : TrainConfig{};
    if (!config.empty()) {
      const auto j = read_json_file(config);
      if (j.contains("model")) m = model_config_from_json(j["model"], m);
      if (j.contains("train")) t = train_config_from_json(j["train"], t);
    }
    if (epochs) t.epochs = *epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (warmup) t.warmup_steps = *warmup;
    if (lr) t.lr_peak = *lr;
    if (alpha) t.alpha = *alpha;
    if (beta) t.beta = *beta;
    if (mask_ratio) t.mtm.mask_ratio = *mask_ratio;
    if (sample_ratio) t.mtm.sample_ratio = *sample_ratio;
    if (weight_decay) t.weight_decay = *weight_decay;
    if (seed) t.seed = *seed;
    if (d_model) m.d_model = *d_model;
    if (heads) m.n_heads = *heads;
    if (enc_layers) m.enc_layers = *enc_layers;
    if (dec_layers) m.dec_layers = *dec_layers;
    if (diff_fusion) t.toggles.diff_fusion = parse_diff_fusion(*diff_fusion);
    if (rep_source) t.toggles.rep_source = parse_rep_source(*rep_source);
    if (diff_first) t.toggles.diff_first = parse_diff_first(*diff_first);
    if (no_diff) t.toggles.diff = false;
    if (no_mtm) t.toggles.mtm = false;
    if (no_aux) t.toggles.aux = false;
    if (m.d_model % m.n_heads != 0) throw Error(ErrorKind::kConfig, "d_model must be divisible by heads");
    t.validate();
    return {m, t};
  }
};

struct SamplingFlags {
  int top_k = 100;
  double top_p = 0.9;
  int max_len = 16;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool greedy = false;

  void add(CLI::App* app) {
    app->add_option("--top-k", top_k);
    app->add_option("--top-p", top_p);
    app->add_option("--max-len", max_len);
    app->add_option("--temperature", temperature);
    app->add_option("--seed", seed);
    app->add_flag("--greedy", greedy, "top-1 decoding");
  }

  SamplingConfig resolve() const {
    SamplingConfig c{top_k, top_p, max_len, temperature, seed};
    if (greedy) {
      c.top_k = 1;
      c.top_p = 1.0;
    }
    c.validate();
    return c;
  }
};

json sampling_json(const SamplingConfig& c) {
  return {{"top_k", c.top_k}, {"top_p", c.top_p}, {"max_len", c.max_len}, {"temperature", c.temperature},
          {"seed", c.seed}};
}

struct ModelFiles {
  Checkpoint ckpt;
  std::unique_ptr<TTNetModel> model;
  Vocabulary vocab;
};

ModelFiles load_model(const std::string& path) {
  ModelFiles f{Checkpoint::load(path), nullptr, {}};
  f.model = f.ckpt.build_model();
  f.vocab = f.ckpt.vocabulary();
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual transformation telling: datasets, training, generation and evaluation"};
  app.require_subcommand(1);
  int exit_on_error = kExitError;

  // build-dataset
  std::string ann_path, out_path, ratios_str = "0.794,0.1,0.106";
  std::uint64_t seed = 0;
  bool stats = false;
  auto* build = app.add_subcommand("build-dataset", "Build a manifest from segment annotations");
  build->add_option("--annotations", ann_path, "annotation JSONL")->required();
  build->add_option("--out", out_path, "manifest JSONL to write")->required();
  build->add_option("--ratios", ratios_str, "train,val,test ratios");
  build->add_option("--seed", seed);
  build->add_flag("--stats", stats, "print dataset statistics");
  build->callback([&] {
    exit_on_error = kExitValidation;
    const auto ratios = parse_ratios(ratios_str);
    echo("build-dataset", {{"annotations", ann_path}, {"out", out_path}, {"ratios", ratios_json(ratios)},
                           {"seed", seed}});
    std::vector<VTTSample> samples;
    try {
      samples = build_samples(read_annotations(ann_path));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kIo) throw;
      throw ValidationFailure(e.kind(), e.what());
    }
    const auto manifest = assign_splits(std::move(samples), ratios, seed);
    exit_on_error = kExitError;
    write_manifest(manifest, out_path);
    if (stats) print_stats(manifest);
    std::cout << json{{"samples", manifest.samples.size()}, {"manifest", out_path}}.dump() << '\n';
  });

  // synth
  std::string spec_path, out_dir;
  std::size_t n_samples = 0;
  std::optional<std::uint64_t> synth_seed;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with known transformations");
  synth_cmd->add_option("--spec", spec_path, "synthetic task spec JSON (defaults when omitted)");
  synth_cmd->add_option("--out", out_dir, "output directory")->required();
  synth_cmd->add_option("-n,--samples", n_samples, "number of samples")->required();
  synth_cmd->add_option("--seed", synth_seed);
  std::optional<std::string> synth_ratios;
  synth_cmd->add_option("--ratios", synth_ratios, "train,val,test ratios (overrides the spec)");
  synth_cmd->add_flag("--stats", stats, "print dataset statistics");
  synth_cmd->callback([&] {
    auto spec = spec_path.empty() ? synth::SyntheticTaskSpec{} : synth::load_spec(spec_path);
    if (synth_seed) spec.seed = *synth_seed;
    if (synth_ratios) spec.split = parse_ratios(*synth_ratios);
    echo("synth", {{"spec", synth::to_json(spec)}, {"samples", n_samples}, {"out", out_dir}});
    const auto data = synth::generate(spec, n_samples);
    fs::create_directories(out_dir);
    write_manifest(data.manifest, (fs::path(out_dir) / "manifest.jsonl").string());
    data.store.write((fs::path(out_dir) / "embeddings.bin").string());
    write_json_file((fs::path(out_dir) / "spec.json").string(), synth::to_json(spec));
    if (stats) print_stats(data.manifest);
    std::cout << json{{"samples", data.manifest.samples.size()}, {"out", out_dir}}.dump() << '\n';
  });

  // train
  std::string manifest_path, store_path;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints and a JSONL log");
  train_cmd->add_option("--manifest", manifest_path)->required();
  train_cmd->add_option("--embeddings", store_path)->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_flags.add(train_cmd);
  train_cmd->callback([&] {
    const auto [model_cfg, cfg] = train_flags.resolve();
    echo("train", {{"manifest", manifest_path}, {"embeddings", store_path}, {"out", out_dir},
                   {"model", to_json(model_cfg)}, {"train", to_json(cfg)}});
    const auto manifest = read_manifest(manifest_path);
    const auto store = EmbeddingStore::open(store_path);
    fs::create_directories(out_dir);
    const auto log_path = fs::path(out_dir) / "train_log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw Error(ErrorKind::kIo, "cannot open '" + log_path.string() + "' for writing");
    const auto result = train(manifest, store, model_cfg, cfg, [&](const EpochLog& e) {
      log << e.to_json().dump() << '\n' << std::flush;
      std::cerr << e.to_json().dump() << '\n';
    });
    result.best.save((fs::path(out_dir) / "best.ckpt").string());
    result.last.save((fs::path(out_dir) / "last.ckpt").string());
    write_json_file((fs::path(out_dir) / "config.json").string(),
                    {{"model", to_json(result.last.model)}, {"train", to_json(cfg)}});
    std::cout << json{{"steps", result.last.step},
                      {"final_train_loss", result.log.back().train_loss},
                      {"best", (fs::path(out_dir) / "best.ckpt").string()}}
                     .dump()
              << '\n';
  });

  // generate
  std::string ckpt_path, split_name = "test", setting_name = "full";
  SamplingFlags sampling_flags;
  auto* gen = app.add_subcommand("generate", "Write predicted descriptions for one split");
  gen->add_option("--checkpoint", ckpt_path)->required();
  gen->add_option("--manifest", manifest_path)->required();
  gen->add_option("--embeddings", store_path)->required();
  gen->add_option("--split", split_name)->check(CLI::IsMember({"train", "val", "test"}));
  gen->add_option("--setting", setting_name, "context setting")
      ->check(CLI::IsMember({"full", "adjacent_only", "mask_one_random", "endpoints_only"}));
  gen->add_option("--out", out_path, "predictions JSONL")->required();
  sampling_flags.add(gen);
  gen->callback([&] {
    const auto sampling = sampling_flags.resolve();
    const diag::ContextSetting setting{diag::parse_context_mode(setting_name), sampling.seed};
    echo("generate", {{"checkpoint", ckpt_path}, {"manifest", manifest_path}, {"embeddings", store_path},
                      {"split", split_name}, {"setting", setting_name}, {"sampling", sampling_json(sampling)},
                      {"out", out_path}});
    const auto m = load_model(ckpt_path);
    const auto manifest = read_manifest(manifest_path);
    const auto store = EmbeddingStore::open(store_path);
    const auto samples = manifest.split(parse_split(split_name));
    if (samples.empty()) throw Error(ErrorKind::kCoverage, "split '" + split_name + "' is empty");
    metrics::write_predictions(diag::predict(*m.model, m.vocab, samples, store, sampling, setting), out_path);
    std::cout << json{{"samples", samples.size()}, {"predictions", out_path}}.dump() << '\n';
  });

  // evaluate
  std::string preds_path;
  auto* eval = app.add_subcommand("evaluate", "Score predictions against a manifest split");
  eval->add_option("--predictions", preds_path)->required();
  eval->add_option("--manifest", manifest_path)->required();
  eval->add_option("--split", split_name)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out_path, "report JSON");
  eval->callback([&] {
    echo("evaluate", {{"predictions", preds_path}, {"manifest", manifest_path}, {"split", split_name},
                      {"out", out_path}});
    const auto manifest = read_manifest(manifest_path);
    const auto report =
        metrics::evaluate_corpus(metrics::read_predictions(preds_path), manifest, parse_split(split_name));
    if (!out_path.empty()) write_json_file(out_path, report.to_json());
    std::cout << json{{"pair_count", report.pair_count}, {"corpus", report.corpus}}.dump() << '\n';
  });

  // diagnose
  std::vector<std::string> settings{"adjacent_only"};
  bool seen_unseen = false;
  auto* diagnose = app.add_subcommand("diagnose", "Score a model under restricted context settings");
  diagnose->add_option("--checkpoint", ckpt_path)->required();
  diagnose->add_option("--manifest", manifest_path)->required();
  diagnose->add_option("--embeddings", store_path)->required();
  diagnose->add_option("--split", split_name)->check(CLI::IsMember({"train", "val", "test"}));
  diagnose->add_option("--setting", settings, "settings compared against full (repeatable)")
      ->check(CLI::IsMember({"full", "adjacent_only", "mask_one_random", "endpoints_only"}));
  diagnose->add_flag("--seen-unseen", seen_unseen, "also score seen and unseen combinations");
  diagnose->add_option("--out", out_path, "report JSON");
  sampling_flags.add(diagnose);
  diagnose->callback([&] {
    const auto sampling = sampling_flags.resolve();
    echo("diagnose", {{"checkpoint", ckpt_path}, {"manifest", manifest_path}, {"embeddings", store_path},
                      {"split", split_name}, {"settings", settings}, {"seen_unseen", seen_unseen},
                      {"sampling", sampling_json(sampling)}});
    const auto m = load_model(ckpt_path);
    const auto manifest = read_manifest(manifest_path);
    const auto store = EmbeddingStore::open(store_path);
    const auto split = parse_split(split_name);
    std::vector<diag::ContextMode> modes;
    for (const auto& s : settings) modes.push_back(diag::parse_context_mode(s));
    const auto suite = diag::run_context_suite(*m.model, m.vocab, manifest.split(split), store, sampling, modes,
                                               sampling.seed);
    std::cout << std::left << std::setw(18) << "setting" << std::right;
    for (const char* k : {"bleu4", "rougeL", "meteor", "cider", "cider_drop"}) std::cout << std::setw(11) << k;
    std::cout << '\n' << std::fixed << std::setprecision(2);
    for (const auto& r : suite.rows) {
      std::cout << std::left << std::setw(18) << diag::to_string(r.mode) << std::right;
      for (const char* k : {"bleu4", "rougeL", "meteor", "cider"}) std::cout << std::setw(11) << r.report.get(k);
      std::cout << std::setw(10) << 100.0 * r.relative_drop.at("cider") << "%\n";
    }
    json report{{"settings", suite.to_json()}};
    if (seen_unseen) {
      const auto su = diag::run_seen_unseen(*m.model, m.vocab, manifest, store, split, sampling);
      report["seen_unseen"] = su.to_json();
      std::cout << "seen " << su.partition.seen_sample_ids.size() << " / unseen "
                << su.partition.unseen_sample_ids.size() << '\n';
    }
    if (!out_path.empty()) write_json_file(out_path, report);
  });

  // split
  auto* split_cmd = app.add_subcommand("split", "Reassign topic-stratified splits of a manifest");
  split_cmd->add_option("--manifest", manifest_path)->required();
  split_cmd->add_option("--out", out_path)->required();
  split_cmd->add_option("--ratios", ratios_str, "train,val,test ratios");
  split_cmd->add_option("--seed", seed);
  split_cmd->add_flag("--stats", stats, "print dataset statistics");
  split_cmd->callback([&] {
    const auto ratios = parse_ratios(ratios_str);
    echo("split", {{"manifest", manifest_path}, {"out", out_path}, {"ratios", ratios_json(ratios)}, {"seed", seed}});
    const auto manifest = assign_splits(read_manifest(manifest_path).samples, ratios, seed);
    write_manifest(manifest, out_path);
    if (stats) print_stats(manifest);
    std::cout << json{{"train", manifest.split_size(Split::kTrain)}, {"val", manifest.split_size(Split::kVal)},
                      {"test", manifest.split_size(Split::kTest)}}
                     .dump()
              << '\n';
  });

  // grid
  std::string grid_name;
  TrainFlags grid_flags;
  auto* grid_cmd = app.add_subcommand("grid", "Run an ablation grid; results are appended and resumable");
  grid_cmd->add_option("--grid", grid_name)
      ->required()
      ->check(CLI::IsMember({"components", "aux_tasks", "fusion", "mask_ratio", "sample_ratio"}));
  grid_cmd->add_option("--manifest", manifest_path)->required();
  grid_cmd->add_option("--embeddings", store_path)->required();
  grid_cmd->add_option("--split", split_name)->check(CLI::IsMember({"train", "val", "test"}));
  grid_cmd->add_option("--out", out_path, "results JSONL")->required();
  grid_flags.add(grid_cmd);
  grid_cmd->callback([&] {
    const auto [model_cfg, cfg] = grid_flags.resolve();
    const auto grid = diag::make_grid(grid_name, cfg);
    echo("grid", {{"grid", grid_name}, {"cells", grid.cells.size()}, {"manifest", manifest_path},
                  {"embeddings", store_path}, {"split", split_name}, {"out", out_path},
                  {"model", to_json(model_cfg)}, {"train", to_json(cfg)}});
    const auto manifest = read_manifest(manifest_path);
    const auto store = EmbeddingStore::open(store_path);
    diag::GridData data{&manifest, &store, model_cfg, parse_split(split_name), SamplingConfig::greedy()};
    const auto rows = diag::run_ablation_grid(grid, data, out_path, [](const json& row) {
      std::cout << json{{"key", row["key"]}, {"scores", row.value("scores", json())},
                        {"error", row.value("error", json())}}
                       .dump()
                << std::endl;
    });
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.contains("error");
    if (failed) throw Error(ErrorKind::kInvariant, std::to_string(failed) + " grid cell(s) failed; see " + out_path);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    return e.get_exit_code() ? e.get_exit_code() : kExitError;
  } catch (const ValidationFailure& e) {
    std::cerr << json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump() << '\n';
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump() << '\n';
    return exit_on_error == kExitValidation && e.kind() != ErrorKind::kIo ? kExitValidation : kExitError;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return kExitError;
  }
  return 0;
}
