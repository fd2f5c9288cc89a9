#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtt/common.hpp"
#include "vtt/core.hpp"
#include "vtt/dataset_builder.hpp"
#include "vtt/embedding_store.hpp"
#include "vtt/metrics.hpp"
#include "vtt/model.hpp"
#include "vtt/trainer.hpp"

namespace vtt::diag {

enum class ContextMode { kFull, kAdjacentOnly, kMaskOneRandom, kEndpointsOnly };

inline const char* to_string(ContextMode m) {
  switch (m) {
    case ContextMode::kFull: return "full";
    case ContextMode::kAdjacentOnly: return "adjacent_only";
    case ContextMode::kMaskOneRandom: return "mask_one_random";
    case ContextMode::kEndpointsOnly: return "endpoints_only";
  }
  return "full";
}

inline ContextMode parse_context_mode(const std::string& s) {
  if (s == "full") return ContextMode::kFull;
  if (s == "adjacent_only") return ContextMode::kAdjacentOnly;
  if (s == "mask_one_random") return ContextMode::kMaskOneRandom;
  if (s == "endpoints_only") return ContextMode::kEndpointsOnly;
  throw Error(ErrorKind::kConfig,
              "setting must be full|adjacent_only|mask_one_random|endpoints_only, got '" + s + "'");
}

struct ContextSetting {
  ContextMode mode = ContextMode::kFull;
  std::uint64_t seed = 0;
};

/// One model call. first_transformation indexes the sample's descriptions
/// covered by this input; it covers raw.rows() - 1 of them.
struct ContextInput {
  Matrix raw;
  std::vector<bool> zero_states;
  std::size_t first_transformation = 0;
};

/// Inference-time context restriction. endpoints_only on a 2-state sample is
/// the full setting.
inline std::vector<ContextInput> apply_context_setting(const Matrix& raw, const std::string& sample_id,
                                                       const ContextSetting& setting) {
  const auto n_states = static_cast<std::size_t>(raw.rows());
  if (n_states < 2) throw Error(ErrorKind::kDimension, "sample '" + sample_id + "' needs >= 2 states");
  std::vector<ContextInput> out;
  switch (setting.mode) {
    case ContextMode::kFull:
      out.push_back({raw, {}, 0});
      break;
    case ContextMode::kAdjacentOnly:
      for (std::size_t i = 0; i + 1 < n_states; ++i) {
        out.push_back({raw.middleRows(static_cast<Eigen::Index>(i), 2), {}, i});
      }
      break;
    case ContextMode::kMaskOneRandom: {
      auto rng = make_rng(setting.seed, "diagnose/mask_one/" + sample_id);
      std::vector<bool> zero(n_states, false);
      zero[uniform_index(rng, n_states)] = true;
      out.push_back({raw, zero, 0});
      break;
    }
    case ContextMode::kEndpointsOnly: {
      std::vector<bool> zero(n_states, true);
      zero.front() = false;
      zero.back() = false;
      if (n_states == 2) zero.clear();
      out.push_back({raw, zero, 0});
      break;
    }
  }
  return out;
}

/// Descriptions for every sample in `samples` under a context setting.
inline metrics::Predictions predict(const TTNetModel& model, const Vocabulary& vocab,
                                    const std::vector<const VTTSample*>& samples, const EmbeddingStore& store,
                                    const SamplingConfig& sampling, const ContextSetting& setting = {}) {
  metrics::Predictions preds;
  for (const auto* s : samples) {
    const auto raw = sample_matrix(*s, store);
    std::vector<std::string> texts(s->transformations.size());
    for (const auto& in : apply_context_setting(raw, s->sample_id, setting)) {
      const std::string stream_id =
          setting.mode == ContextMode::kAdjacentOnly ? s->sample_id + "@" + std::to_string(in.first_transformation)
                                                     : s->sample_id;
      const auto gen = model.generate(in.raw, vocab, sampling, stream_id, in.zero_states);
      for (std::size_t k = 0; k < gen.descriptions.size(); ++k) {
        texts.at(in.first_transformation + k) = gen.descriptions[k].text;
      }
    }
    preds[s->sample_id] = std::move(texts);
  }
  return preds;
}

struct ContextSuiteRow {
  ContextMode mode = ContextMode::kFull;
  metrics::MetricReport report;
  std::map<std::string, double> relative_drop;  // (full - setting) / full, per metric
};

struct ContextSuiteResult {
  std::vector<ContextSuiteRow> rows;

  const ContextSuiteRow& row(ContextMode m) const {
    for (const auto& r : rows) {
      if (r.mode == m) return r;
    }
    throw Error(ErrorKind::kMissingKey, std::string("setting '") + to_string(m) + "' not in suite");
  }

  /// One row per setting: corpus scores and relative drop against full.
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      j.push_back({{"setting", to_string(r.mode)}, {"scores", r.report.corpus}, {"relative_drop", r.relative_drop}});
    }
    return j;
  }
};

inline ContextSuiteResult run_context_suite(const TTNetModel& model, const Vocabulary& vocab,
                                            const std::vector<const VTTSample*>& samples,
                                            const EmbeddingStore& store, const SamplingConfig& sampling,
                                            std::vector<ContextMode> modes = {ContextMode::kFull,
                                                                              ContextMode::kAdjacentOnly},
                                            std::uint64_t seed = 0, const metrics::MetricSet& set = {}) {
  if (std::find(modes.begin(), modes.end(), ContextMode::kFull) == modes.end()) {
    modes.insert(modes.begin(), ContextMode::kFull);
  }
  ContextSuiteResult result;
  for (auto m : modes) {
    ContextSuiteRow row;
    row.mode = m;
    row.report = metrics::evaluate_corpus(predict(model, vocab, samples, store, sampling, {m, seed}), samples, set);
    result.rows.push_back(std::move(row));
  }
  const auto& full = result.row(ContextMode::kFull).report.corpus;
  for (auto& r : result.rows) {
    for (const auto& [metric, base] : full) {
      r.relative_drop[metric] = base != 0.0 ? (base - r.report.corpus.at(metric)) / base : 0.0;
    }
  }
  return result;
}

struct AdjacentData {
  DatasetManifest manifest;
  EmbeddingStore store;
};

/// Re-expresses every sample as N two-state samples, for retraining a model
/// that only ever sees adjacent states. Sub-sample k of sample s is "s@k";
/// its states are copied under fresh ids "state@s@k" so ids stay unique.
inline AdjacentData make_adjacent_data(const DatasetManifest& manifest, const EmbeddingStore& store) {
  AdjacentData out{{}, EmbeddingStore(store.dim())};
  std::vector<VTTSample> subs;
  for (const auto& s : manifest.samples) {
    for (std::size_t k = 0; k + 1 < s.states.size(); ++k) {
      VTTSample sub;
      sub.sample_id = s.sample_id + "@" + std::to_string(k);
      for (std::size_t j = k; j <= k + 1; ++j) {
        StateRef st = s.states[j];
        st.state_id = s.states[j].state_id + "@" + sub.sample_id;
        out.store.insert(st.state_id, store.at(s.states[j].state_id));
        sub.states.push_back(std::move(st));
      }
      sub.transformations = {s.transformations[k]};
      sub.category = s.category;
      sub.topic = s.topic;
      sub.split = s.split;
      subs.push_back(std::move(sub));
    }
  }
  out.manifest = DatasetManifest::from_samples(std::move(subs));
  out.manifest.validate();
  return out;
}

struct SeenUnseenResult {
  CombinationSplit partition;
  std::optional<metrics::MetricReport> seen;    // empty partition -> no scores
  std::optional<metrics::MetricReport> unseen;

  nlohmann::json to_json() const {
    auto part = [](const std::set<std::string>& ids, const std::optional<metrics::MetricReport>& r) {
      return nlohmann::json{{"count", ids.size()}, {"scores", r ? nlohmann::json(r->corpus) : nlohmann::json()}};
    };
    return {{"seen", part(partition.seen_sample_ids, seen)}, {"unseen", part(partition.unseen_sample_ids, unseen)}};
  }
};

inline SeenUnseenResult run_seen_unseen(const TTNetModel& model, const Vocabulary& vocab,
                                        const DatasetManifest& manifest, const EmbeddingStore& store,
                                        Split eval_split, const SamplingConfig& sampling,
                                        const metrics::MetricSet& set = {}) {
  SeenUnseenResult r;
  r.partition = split_seen_unseen(manifest, eval_split);
  auto score = [&](const std::set<std::string>& ids) -> std::optional<metrics::MetricReport> {
    if (ids.empty()) return std::nullopt;
    std::vector<const VTTSample*> samples;
    for (const auto& s : manifest.samples) {
      if (ids.count(s.sample_id)) samples.push_back(&s);
    }
    return metrics::evaluate_corpus(predict(model, vocab, samples, store, sampling), samples, set);
  };
  r.seen = score(r.partition.seen_sample_ids);
  r.unseen = score(r.partition.unseen_sample_ids);
  return r;
}

/// One complete training configuration in a sweep.
struct AblationCell {
  nlohmann::json key;  // the varied axes
  TrainConfig train;
};

struct AblationGrid {
  std::vector<AblationCell> cells;
};

inline std::string cell_id(const nlohmann::json& key) { return key.dump(); }

/// diff x mtm x aux on/off: 8 cells.
inline AblationGrid component_grid(const TrainConfig& base) {
  AblationGrid g;
  for (int mask = 0; mask < 8; ++mask) {
    AblationCell c{{}, base};
    c.train.toggles.diff = mask & 1;
    c.train.toggles.mtm = mask & 2;
    c.train.toggles.aux = mask & 4;
    c.key = {{"diff", c.train.toggles.diff}, {"mtm", c.train.toggles.mtm}, {"aux", c.train.toggles.aux}};
    g.cells.push_back(std::move(c));
  }
  return g;
}

/// Auxiliary-task subsets of {category, topic}; a dropped task has weight 0.
inline AblationGrid aux_task_grid(const TrainConfig& base) {
  AblationGrid g;
  for (int mask = 0; mask < 4; ++mask) {
    AblationCell c{{}, base};
    const bool cat = mask & 1, topic = mask & 2;
    c.train.toggles.aux = cat || topic;
    if (!cat) c.train.alpha = 0.0;
    if (!topic) c.train.beta = 0.0;
    c.key = {{"category", cat}, {"topic", topic}};
    g.cells.push_back(std::move(c));
  }
  return g;
}

inline AblationGrid fusion_grid(const TrainConfig& base) {
  AblationGrid g;
  for (auto f : {DiffFusion::kEarly, DiffFusion::kLate}) {
    AblationCell c{{}, base};
    c.train.toggles.diff = true;
    c.train.toggles.diff_fusion = f;
    c.key = {{"diff_fusion", to_string(f)}};
    g.cells.push_back(std::move(c));
  }
  return g;
}

inline AblationGrid mask_ratio_grid(const TrainConfig& base,
                                    const std::vector<double>& ratios = {0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30}) {
  AblationGrid g;
  for (double r : ratios) {
    AblationCell c{{}, base};
    c.train.mtm.mask_ratio = r;
    c.key = {{"mask_ratio", r}};
    g.cells.push_back(std::move(c));
  }
  return g;
}

inline AblationGrid sample_ratio_grid(const TrainConfig& base,
                                      const std::vector<double>& ratios = {0.0, 0.25, 0.5, 0.75, 1.0}) {
  AblationGrid g;
  for (double r : ratios) {
    AblationCell c{{}, base};
    c.train.mtm.sample_ratio = r;
    c.key = {{"sample_ratio", r}};
    g.cells.push_back(std::move(c));
  }
  return g;
}

inline AblationGrid make_grid(const std::string& name, const TrainConfig& base) {
  if (name == "components") return component_grid(base);
  if (name == "aux_tasks") return aux_task_grid(base);
  if (name == "fusion") return fusion_grid(base);
  if (name == "mask_ratio") return mask_ratio_grid(base);
  if (name == "sample_ratio") return sample_ratio_grid(base);
  throw Error(ErrorKind::kConfig,
              "grid must be components|aux_tasks|fusion|mask_ratio|sample_ratio, got '" + name + "'");
}

struct GridData {
  const DatasetManifest* manifest = nullptr;
  const EmbeddingStore* store = nullptr;
  ModelConfig model;
  Split eval_split = Split::kTest;
  SamplingConfig sampling = SamplingConfig::greedy();
};

inline std::vector<nlohmann::json> read_results(const std::string& path) {
  std::vector<nlohmann::json> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      // a partially written last line from an interrupted run is ignored
    }
  }
  return rows;
}

/// Trains and evaluates one model per cell. Rows are
/// {config, scores, runtime_sec} (or {config, error}). With a results path,
/// each finished row is appended as one JSON line and cells already present
/// there are skipped, so an interrupted grid resumes where it stopped.
inline std::vector<nlohmann::json> run_ablation_grid(const AblationGrid& grid, const GridData& data,
                                                     const std::string& results_path = {},
                                                     const std::function<void(const nlohmann::json&)>& on_row = {}) {
  if (!data.manifest || !data.store) throw Error(ErrorKind::kConfig, "grid data not set");
  std::vector<nlohmann::json> rows = results_path.empty() ? std::vector<nlohmann::json>{} : read_results(results_path);
  std::set<std::string> done;
  for (const auto& r : rows) {
    if (r.contains("key") && !r.contains("error")) done.insert(cell_id(r["key"]));
  }
  const auto eval = data.manifest->split(data.eval_split);
  for (const auto& cell : grid.cells) {
    if (done.count(cell_id(cell.key))) continue;
    nlohmann::json row{{"key", cell.key}, {"config", to_json(cell.train)}};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (eval.empty()) {
        throw Error(ErrorKind::kCoverage, std::string("evaluation split '") + to_string(data.eval_split) +
                                              "' is empty");
      }
      auto result = train(*data.manifest, *data.store, data.model, cell.train);
      auto model = result.best.build_model();
      const auto vocab = result.best.vocabulary();
      const auto report =
          metrics::evaluate_corpus(predict(*model, vocab, eval, *data.store, data.sampling), eval);
      row["scores"] = report.corpus;
      row["runtime_sec"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } catch (const std::exception& e) {
      row["error"] = e.what();
    }
    if (!results_path.empty()) {
      std::ofstream out(results_path, std::ios::app);
      out << row.dump() << '\n';
    }
    if (on_row) on_row(row);
    std::erase_if(rows, [&](const nlohmann::json& r) { return r.contains("key") && r["key"] == cell.key; });
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace vtt::diag
