#pragma once

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtt/common.hpp"
#include "vtt/core.hpp"
#include "vtt/embedding_store.hpp"
#include "vtt/model.hpp"
#include "vtt/text_decoder.hpp"

namespace vtt {

enum class DecayShape { kLinear, kCosine };

struct TrainConfig {
  double alpha = 0.025;
  double beta = 0.1;
  double lr_peak = 1e-4;
  int warmup_steps = 2000;
  int epochs = 50;
  int batch_size = 32;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  DecayShape decay = DecayShape::kLinear;
  Reduction reduction = Reduction::kMean;
  MTMPolicy mtm;
  Toggles toggles;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw Error(ErrorKind::kConfig, "alpha and beta must be >= 0");
    if (warmup_steps < 0) throw Error(ErrorKind::kConfig, "warmup_steps must be >= 0");
    if (epochs < 1 || batch_size < 1) throw Error(ErrorKind::kConfig, "epochs and batch_size must be >= 1");
    if (!(lr_peak > 0.0)) throw Error(ErrorKind::kConfig, "lr_peak must be > 0");
    mtm.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"lr_peak", c.lr_peak},
          {"warmup_steps", c.warmup_steps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"decay", c.decay == DecayShape::kLinear ? "linear" : "cosine"},
          {"reduction", c.reduction == Reduction::kMean ? "mean" : "sum"},
          {"mask_ratio", c.mtm.mask_ratio},
          {"sample_ratio", c.mtm.sample_ratio},
          {"toggles", to_json(c.toggles)},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.lr_peak = j.value("lr_peak", c.lr_peak);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  if (j.contains("decay")) {
    const auto d = j["decay"].get<std::string>();
    if (d != "linear" && d != "cosine") throw Error(ErrorKind::kConfig, "decay must be linear|cosine");
    c.decay = d == "linear" ? DecayShape::kLinear : DecayShape::kCosine;
  }
  if (j.contains("reduction")) {
    const auto r = j["reduction"].get<std::string>();
    if (r != "mean" && r != "sum") throw Error(ErrorKind::kConfig, "reduction must be mean|sum");
    c.reduction = r == "mean" ? Reduction::kMean : Reduction::kSum;
  }
  c.mtm.mask_ratio = j.value("mask_ratio", c.mtm.mask_ratio);
  c.mtm.sample_ratio = j.value("sample_ratio", c.mtm.sample_ratio);
  if (j.contains("toggles")) c.toggles = toggles_from_json(j["toggles"], c.toggles);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// Narrow model that trains in seconds to minutes on one CPU core.
inline ModelConfig desk_model_config() {
  ModelConfig c;
  c.d_model = 64;
  c.n_heads = 4;
  c.enc_layers = 2;
  c.dec_layers = 2;
  return c;
}

/// Objective defaults (alpha, beta, MTM, toggles) with a short schedule that
/// suits desk_model_config.
inline TrainConfig desk_train_config() {
  TrainConfig c;
  c.lr_peak = 1e-3;
  c.warmup_steps = 100;
  c.epochs = 300;
  c.batch_size = 16;
  return c;
}

/// Linear warmup from 0 to lr_peak, then linear (or cosine) decay to 0 at
/// total_steps.
inline double lr_schedule(long step, const TrainConfig& cfg, long total_steps) {
  if (total_steps <= cfg.warmup_steps) {
    throw Error(ErrorKind::kConfig, "total_steps (" + std::to_string(total_steps) + ") must exceed warmup_steps (" +
                                        std::to_string(cfg.warmup_steps) + ")");
  }
  if (step < 0 || step > total_steps) throw Error(ErrorKind::kConfig, "step outside [0, total_steps]");
  if (step < cfg.warmup_steps) {
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double frac = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(total_steps - cfg.warmup_steps);
  if (cfg.decay == DecayShape::kCosine) return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  return cfg.lr_peak * (1.0 - frac);
}

/// Softmax cross-entropy of one logits row against a gold index.
inline double cross_entropy(const Matrix& logits, int gold) {
  if (gold < 0 || gold >= logits.cols()) {
    throw Error(ErrorKind::kDimension, "label index " + std::to_string(gold) + " out of range");
  }
  return ag::nll_sum(nullptr, ag::constant(logits.row(0)), {gold})->value(0, 0);
}

/// L_text + alpha * CE(category) + beta * CE(topic); the classification terms
/// are exactly zero when aux is off.
inline double total_loss(double text_loss, const Matrix& category_logits, const Matrix& topic_logits, int category,
                         int topic, double alpha, double beta, bool aux) {
  if (!aux) return text_loss;
  return text_loss + alpha * cross_entropy(category_logits, category) + beta * cross_entropy(topic_logits, topic);
}

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  struct Slot {
    Matrix m;
    Matrix v;
  };

  void step(nn::ParamStore& params, double lr, const TrainConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t_));
    for (auto& [name, entry] : params.entries()) {
      auto& p = *entry.var;
      auto& s = slots_[name];
      if (s.m.size() == 0) {
        s.m = Matrix::Zero(p.value.rows(), p.value.cols());
        s.v = Matrix::Zero(p.value.rows(), p.value.cols());
      }
      if (entry.decay && cfg.weight_decay > 0.0) p.value *= (1.0 - lr * cfg.weight_decay);
      s.m = cfg.adam_beta1 * s.m + (1.0 - cfg.adam_beta1) * p.grad;
      s.v = cfg.adam_beta2 * s.v + (1.0 - cfg.adam_beta2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + cfg.adam_eps);
    }
  }

  long steps() const { return t_; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  void set_steps(long t) { t_ = t; }

 private:
  long t_ = 0;
  std::map<std::string, Slot> slots_;
};

/// Everything needed to rebuild a trained model and resume its optimizer.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::string> vocab;  // content tokens (specials implied)
  std::vector<std::string> categories;
  std::vector<std::string> topics;
  std::map<std::string, Matrix> params;
  std::map<std::string, AdamW::Slot> optimizer;
  long step = 0;
  int epoch = 0;
  std::string rng_state;

  static constexpr char kMagic[4] = {'V', 'T', 'T', 'C'};
  static constexpr std::uint32_t kVersion = 1;

  Vocabulary vocabulary() const { return Vocabulary(vocab); }

  static Checkpoint capture(const TTNetModel& model, const TrainConfig& train, const Vocabulary& vocab,
                            const DatasetManifest& labels, const AdamW* opt, long step, int epoch,
                            const std::string& rng_state) {
    Checkpoint c;
    c.model = model.config();
    c.train = train;
    c.train.toggles = model.toggles();
    c.vocab.assign(vocab.tokens().begin() + 4, vocab.tokens().end());
    c.categories = labels.categories;
    c.topics = labels.topics;
    for (const auto& [name, e] : model.params().entries()) c.params[name] = e.var->value;
    if (opt) c.optimizer = opt->slots();
    c.step = step;
    c.epoch = epoch;
    c.rng_state = rng_state;
    return c;
  }

  std::unique_ptr<TTNetModel> build_model() const {
    auto m = std::make_unique<TTNetModel>(model, train.toggles, train.seed);
    load_into(*m);
    return m;
  }

  void load_into(TTNetModel& m) const {
    for (auto& [name, e] : m.params().entries()) {
      auto it = params.find(name);
      if (it == params.end()) throw Error(ErrorKind::kMissingKey, "checkpoint lacks parameter '" + name + "'");
      if (it->second.rows() != e.var->value.rows() || it->second.cols() != e.var->value.cols()) {
        throw Error(ErrorKind::kDimension, "checkpoint parameter '" + name + "' has the wrong shape");
      }
      e.var->value = it->second;
    }
    if (params.size() != m.params().entries().size()) {
      throw Error(ErrorKind::kInvariant, "checkpoint has parameters the model does not");
    }
  }

  std::string serialize() const {
    nlohmann::json meta = {{"model", to_json(model)}, {"train", to_json(train)}, {"vocab", vocab},
                           {"categories", categories}, {"topics", topics}, {"step", step},
                           {"epoch", epoch}, {"rng_state", rng_state}};
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, 4);
    put(out, kVersion);
    const std::string m = meta.dump();
    put(out, static_cast<std::uint64_t>(m.size()));
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    put(out, static_cast<std::uint64_t>(params.size()));
    for (const auto& [name, value] : params) {
      put(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_matrix(out, value);
      auto it = optimizer.find(name);
      const bool has_opt = it != optimizer.end() && it->second.m.size() > 0;
      put(out, static_cast<std::uint8_t>(has_opt));
      if (has_opt) {
        put_matrix(out, it->second.m);
        put_matrix(out, it->second.v);
      }
    }
    return out.str();
  }

  static Checkpoint deserialize(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
      throw Error(ErrorKind::kParse, "not a checkpoint (bad magic)");
    }
    if (get<std::uint32_t>(in) != kVersion) throw Error(ErrorKind::kParse, "unsupported checkpoint version");
    std::string m(get<std::uint64_t>(in), '\0');
    read_exact(in, m.data(), m.size());
    const auto meta = nlohmann::json::parse(m);
    Checkpoint c;
    c.model = model_config_from_json(meta.at("model"));
    c.train = train_config_from_json(meta.at("train"));
    c.vocab = meta.at("vocab").get<std::vector<std::string>>();
    c.categories = meta.at("categories").get<std::vector<std::string>>();
    c.topics = meta.at("topics").get<std::vector<std::string>>();
    c.step = meta.at("step").get<long>();
    c.epoch = meta.at("epoch").get<int>();
    c.rng_state = meta.at("rng_state").get<std::string>();
    const auto n = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name(get<std::uint32_t>(in), '\0');
      read_exact(in, name.data(), name.size());
      c.params[name] = get_matrix(in);
      if (get<std::uint8_t>(in)) {
        AdamW::Slot s;
        s.m = get_matrix(in);
        s.v = get_matrix(in);
        c.optimizer[name] = std::move(s);
      }
    }
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
  }

  std::uint64_t hash() const { return fnv1a64(serialize()); }

 private:
  template <typename T>
  static void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T get(std::istream& in) {
    T v{};
    read_exact(in, reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  static void read_exact(std::istream& in, char* dst, std::size_t n) {
    if (!in.read(dst, static_cast<std::streamsize>(n))) throw Error(ErrorKind::kParse, "truncated checkpoint");
  }
  static void put_matrix(std::ostream& out, const Matrix& m) {
    put(out, static_cast<std::uint32_t>(m.rows()));
    put(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  static Matrix get_matrix(std::istream& in) {
    const auto r = get<std::uint32_t>(in);
    const auto c = get<std::uint32_t>(in);
    Matrix m(r, c);
    read_exact(in, reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    return m;
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double lr_last = 0.0;
  double wall_sec = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"val_loss", val_loss ? nlohmann::json(*val_loss) : nlohmann::json()},
            {"lr_last", lr_last},
            {"wall_sec", wall_sec}};
  }
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;
};

/// Tokenized, looked-up examples for one split.
inline std::vector<TrainItem> make_items(const std::vector<const VTTSample*>& samples, const EmbeddingStore& store,
                                         const Vocabulary& vocab, const DatasetManifest& labels) {
  std::vector<TrainItem> items;
  items.reserve(samples.size());
  for (const auto* s : samples) {
    for (const auto& st : s->states) {
      if (!store.contains(st.state_id)) {
        throw Error(ErrorKind::kMissingKey,
                    "sample '" + s->sample_id + "': no embedding for state_id '" + st.state_id + "'");
      }
    }
    TrainItem it;
    it.raw = sample_matrix(*s, store);
    for (const auto& t : s->transformations) it.encoded.push_back(vocab.encode(t));
    it.category = static_cast<int>(labels.category_index(s->category));
    it.topic = static_cast<int>(labels.topic_index(s->topic));
    items.push_back(std::move(it));
  }
  return items;
}

inline std::vector<std::string> train_descriptions(const DatasetManifest& manifest) {
  std::vector<std::string> corpus;
  for (const auto* s : manifest.split(Split::kTrain)) {
    corpus.insert(corpus.end(), s->transformations.begin(), s->transformations.end());
  }
  return corpus;
}

inline double evaluate_loss(const TTNetModel& model, const std::vector<TrainItem>& items, const TrainConfig& cfg) {
  LossParts parts;
  model.batch_loss(nullptr, items, cfg.alpha, cfg.beta, cfg.toggles.aux, cfg.reduction, &parts);
  return parts.total;
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Single-worker training loop: per epoch, the train split is shuffled with a
/// seeded stream, split into batches, and each batch takes one AdamW step.
/// The checkpoint with the lowest validation loss is kept (the last one when
/// there is no validation split).
inline TrainResult train(const DatasetManifest& manifest, const EmbeddingStore& store, ModelConfig model_cfg,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto train_samples = manifest.split(Split::kTrain);
  if (train_samples.empty()) throw Error(ErrorKind::kInvariant, "train split is empty");
  const auto vocab = build_vocab(train_descriptions(manifest));
  model_cfg.d_enc = static_cast<int>(store.dim());
  model_cfg.vocab_size = static_cast<int>(vocab.size());
  model_cfg.n_categories = static_cast<int>(manifest.categories.size());
  model_cfg.n_topics = static_cast<int>(manifest.topics.size());

  TTNetModel model(model_cfg, cfg.toggles, cfg.seed);
  auto items = make_items(train_samples, store, vocab, manifest);
  const auto val_items = make_items(manifest.split(Split::kVal), store, vocab, manifest);

  const long batches_per_epoch =
      (static_cast<long>(items.size()) + cfg.batch_size - 1) / static_cast<long>(cfg.batch_size);
  const long total_steps = batches_per_epoch * cfg.epochs;
  lr_schedule(0, cfg, total_steps);  // validates warmup vs total

  auto order_rng = make_rng(cfg.seed, "train/order");
  auto mask_rng = make_rng(cfg.seed, "train/mtm");
  AdamW opt;
  TrainResult result;
  std::optional<double> best_val;
  long step = 0;
  double lr = 0.0;

  auto rng_state = [&] {
    std::ostringstream s;
    s << order_rng << ' ' << mask_rng;
    return s.str();
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, order_rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<TrainItem> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size)); ++k) {
        TrainItem it = items[order[k]];
        if (cfg.toggles.mtm) {
          it.mask_plan = sample_mask_plan(cfg.mtm, model.encoder_rows(static_cast<std::size_t>(it.raw.rows())), true,
                                          mask_rng);
        }
        batch.push_back(std::move(it));
      }
      ++step;
      lr = lr_schedule(step, cfg, total_steps);
      ag::Tape tape;
      model.params().zero_grad();
      auto loss = model.batch_loss(&tape, batch, cfg.alpha, cfg.beta, cfg.toggles.aux, cfg.reduction);
      const double value = loss->value(0, 0);
      if (!std::isfinite(value)) {
        throw Error(ErrorKind::kNumeric, "non-finite loss at step " + std::to_string(step));
      }
      tape.backward(loss);
      opt.step(model.params(), lr, cfg);
      result.step_losses.push_back(value);
      epoch_loss += value;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(batches_per_epoch);
    if (!val_items.empty()) log.val_loss = evaluate_loss(model, val_items, cfg);
    log.lr_last = lr;
    log.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    const bool improved = !val_items.empty() && (!best_val || *log.val_loss < *best_val);
    if (improved) {
      best_val = log.val_loss;
      result.best = Checkpoint::capture(model, cfg, vocab, manifest, &opt, step, epoch, rng_state());
    }
  }
  result.last = Checkpoint::capture(model, cfg, vocab, manifest, &opt, step, cfg.epochs, rng_state());
  if (val_items.empty()) result.best = result.last;
  return result;
}

}  // namespace vtt
