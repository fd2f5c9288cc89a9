#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtt/autograd.hpp"
#include "vtt/context_encoder.hpp"
#include "vtt/core.hpp"
#include "vtt/embedding_store.hpp"
#include "vtt/nn.hpp"
#include "vtt/state_encoding.hpp"
#include "vtt/text_decoder.hpp"

namespace vtt {

/// Where difference features are formed: on model-width features (late) or
/// on raw provider embeddings before projection (early).
enum class DiffFusion { kEarly, kLate };

inline const char* to_string(DiffFusion f) { return f == DiffFusion::kEarly ? "early" : "late"; }
inline DiffFusion parse_diff_fusion(const std::string& s) {
  if (s == "early") return DiffFusion::kEarly;
  if (s == "late") return DiffFusion::kLate;
  throw Error(ErrorKind::kConfig, "diff_fusion must be early|late, got '" + s + "'");
}

struct Toggles {
  bool diff = true;
  bool mtm = true;
  bool aux = true;
  DiffFusion diff_fusion = DiffFusion::kLate;
  RepSource rep_source = RepSource::kDiff;
  DiffFirst diff_first = DiffFirst::kWrap;

  bool operator==(const Toggles&) const = default;
};

inline nlohmann::json to_json(const Toggles& t) {
  return {{"diff", t.diff},
          {"mtm", t.mtm},
          {"aux", t.aux},
          {"diff_fusion", to_string(t.diff_fusion)},
          {"rep_source", to_string(t.rep_source)},
          {"diff_first", to_string(t.diff_first)}};
}

inline Toggles toggles_from_json(const nlohmann::json& j, Toggles t = {}) {
  t.diff = j.value("diff", t.diff);
  t.mtm = j.value("mtm", t.mtm);
  t.aux = j.value("aux", t.aux);
  if (j.contains("diff_fusion")) t.diff_fusion = parse_diff_fusion(j["diff_fusion"].get<std::string>());
  if (j.contains("rep_source")) t.rep_source = parse_rep_source(j["rep_source"].get<std::string>());
  if (j.contains("diff_first")) t.diff_first = parse_diff_first(j["diff_first"].get<std::string>());
  return t;
}

struct ModelConfig {
  int d_enc = 768;
  int d_model = 512;
  int n_heads = 8;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 0;  // 0 means 4 * d_model
  int num_buckets = 32;
  int max_distance = 128;
  int vocab_size = 4;
  int n_categories = 1;
  int n_topics = 1;

  int ff_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_enc", c.d_enc},           {"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers}, {"d_ff", c.d_ff},
          {"num_buckets", c.num_buckets}, {"max_distance", c.max_distance}, {"vocab_size", c.vocab_size},
          {"n_categories", c.n_categories}, {"n_topics", c.n_topics}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.d_enc = j.value("d_enc", c.d_enc);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.num_buckets = j.value("num_buckets", c.num_buckets);
  c.max_distance = j.value("max_distance", c.max_distance);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_categories = j.value("n_categories", c.n_categories);
  c.n_topics = j.value("n_topics", c.n_topics);
  return c;
}

/// (N+1) x dim matrix of a sample's provider embeddings.
inline Matrix sample_matrix(const VTTSample& s, const EmbeddingStore& store) {
  Matrix m(static_cast<Eigen::Index>(s.states.size()), static_cast<Eigen::Index>(store.dim()));
  for (std::size_t i = 0; i < s.states.size(); ++i) {
    const auto v = store.at(s.states[i].state_id);
    for (std::size_t k = 0; k < v.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k];
  }
  return m;
}

/// One training example after lookup and tokenization.
struct TrainItem {
  Matrix raw;                            // (N+1) x d_enc
  std::vector<std::vector<int>> encoded;  // per transformation: [BOS, w..., EOS]
  int category = 0;
  int topic = 0;
  std::vector<bool> mask_plan;           // empty means no masking
};

struct LossParts {
  double text = 0.0;
  double category = 0.0;
  double topic = 0.0;
  double total = 0.0;
  std::size_t tokens = 0;
};

/// State encoder (projection + difference features + type embeddings),
/// context encoder and shared text decoder under one parameter store.
class TTNetModel {
 public:
  TTNetModel(const ModelConfig& cfg, const Toggles& toggles, std::uint64_t seed)
      : cfg_(cfg), toggles_(toggles), params_(seed) {
    projection_ = nn::Linear(params_, "state.projection", cfg.d_enc, cfg.d_model);
    if (toggles.diff) {
      type_state_ = params_.normal("state.type_state", 1, cfg.d_model, 0.02, false);
      type_diff_ = params_.normal("state.type_diff", 1, cfg.d_model, 0.02, false);
    }
    ContextEncoderConfig ec;
    ec.stack = {cfg.d_model, cfg.n_heads, cfg.enc_layers, cfg.ff_width(), cfg.num_buckets, cfg.max_distance, false};
    ec.n_categories = cfg.n_categories;
    ec.n_topics = cfg.n_topics;
    ec.rep_source = toggles.rep_source;
    encoder_ = ContextEncoder(params_, ec);
    DecoderConfig dc;
    dc.stack = {cfg.d_model, cfg.n_heads, cfg.dec_layers, cfg.ff_width(), cfg.num_buckets, cfg.max_distance, true};
    dc.vocab_size = cfg.vocab_size;
    decoder_ = TextDecoder(params_, dc);
  }

  TTNetModel(const TTNetModel&) = delete;
  TTNetModel& operator=(const TTNetModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Toggles& toggles() const { return toggles_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const ContextEncoder& encoder() const { return encoder_; }
  const TextDecoder& decoder() const { return decoder_; }

  std::size_t encoder_rows(std::size_t num_states) const { return num_states * (toggles_.diff ? 2 : 1); }

  ProjectionParams projection_params() const {
    return {projection_.weight->value, projection_.bias->value};
  }
  TypeEmbeddings type_embeddings() const {
    if (!toggles_.diff) return {Matrix::Zero(1, cfg_.d_model), Matrix::Zero(1, cfg_.d_model)};
    return {type_state_->value, type_diff_->value};
  }

  /// Encoder input features. zero_states marks states replaced by zero vectors
  /// (diagnostic settings); their state rows are masked and neighbouring
  /// difference rows are recomputed from the zeroed value.
  ag::Var encoder_features(ag::Tape* tape, const Matrix& raw, const std::vector<bool>& mask_plan,
                           const std::vector<bool>& zero_states = {}) const {
    const auto n_states = static_cast<std::size_t>(raw.rows());
    if (n_states < 2) throw Error(ErrorKind::kDimension, "a sample needs at least 2 states");
    const std::size_t rows = encoder_rows(n_states);
    std::vector<bool> mask = mask_plan.empty() ? std::vector<bool>(rows, false) : mask_plan;
    if (mask.size() != rows) throw Error(ErrorKind::kDimension, "mask plan length does not match encoder rows");
    bool zeroing = false;
    for (std::size_t i = 0; i < zero_states.size(); ++i) {
      if (zero_states[i]) {
        mask[i] = true;
        zeroing = true;
      }
    }
    auto raw_var = ag::constant(raw);
    ag::Var states, diffs;
    if (toggles_.diff && toggles_.diff_fusion == DiffFusion::kEarly) {
      if (zeroing) raw_var = ag::mask_rows(tape, raw_var, zero_states);
      states = encoding::project(tape, raw_var, projection_.weight, projection_.bias);
      if (zeroing) states = ag::mask_rows(tape, states, zero_states);
      diffs = encoding::project(tape, encoding::differences(tape, raw_var, toggles_.diff_first), projection_.weight,
                                projection_.bias);
    } else {
      states = encoding::project(tape, raw_var, projection_.weight, projection_.bias);
      if (zeroing) states = ag::mask_rows(tape, states, zero_states);
      if (toggles_.diff) diffs = encoding::differences(tape, states, toggles_.diff_first);
    }
    return encoding::assemble(tape, states, diffs, type_state_, type_diff_, mask);
  }

  EncoderInput encoder_input(const Matrix& raw, const std::vector<bool>& mask_plan = {},
                             const std::vector<bool>& zero_states = {}) const {
    EncoderInput in;
    in.features = encoder_features(nullptr, raw, mask_plan, zero_states)->value;
    const auto n = static_cast<std::size_t>(raw.rows());
    in.type_ids.assign(n, RowType::kState);
    if (toggles_.diff) in.type_ids.insert(in.type_ids.end(), n, RowType::kDiff);
    in.mask = mask_plan.empty() ? std::vector<bool>(in.type_ids.size(), false) : mask_plan;
    for (std::size_t i = 0; i < zero_states.size(); ++i) {
      if (zero_states[i]) in.mask[i] = true;
    }
    return in;
  }

  ContextVars encode(ag::Tape* tape, const Matrix& raw, const std::vector<bool>& mask_plan = {},
                     const std::vector<bool>& zero_states = {}) const {
    auto features = encoder_features(tape, raw, mask_plan, zero_states);
    return encoder_.forward(tape, features, static_cast<std::size_t>(raw.rows()), toggles_.diff);
  }

  ContextOutput context(const Matrix& raw, const std::vector<bool>& zero_states = {}) const {
    auto out = encode(nullptr, raw, {}, zero_states).values();
    check_finite(out.transformation_reps, "transformation representations");
    return out;
  }

  /// L = L_text + alpha * L_category + beta * L_topic over a batch. L_text is
  /// the per-token mean (or sum) over every transformation in the batch;
  /// classification terms are per-sample means and are skipped (exactly 0)
  /// when aux is off.
  ag::Var batch_loss(ag::Tape* tape, const std::vector<TrainItem>& batch, double alpha, double beta, bool aux,
                     Reduction reduction = Reduction::kMean, LossParts* parts = nullptr) const {
    if (batch.empty()) throw Error(ErrorKind::kDimension, "empty batch");
    std::vector<ag::Var> text_terms, cat_terms, topic_terms;
    std::size_t tokens = 0;
    for (const auto& item : batch) {
      auto ctx = encode(tape, item.raw, item.mask_plan);
      if (static_cast<std::size_t>(ctx.transformation_reps->rows()) != item.encoded.size()) {
        throw Error(ErrorKind::kDimension, "transformation count does not match targets");
      }
      for (std::size_t i = 0; i < item.encoded.size(); ++i) {
        auto rep = ag::gather_rows(tape, ctx.transformation_reps, {static_cast<int>(i)});
        text_terms.push_back(decoder_.sequence_nll(tape, rep, item.encoded[i]));
        tokens += item.encoded[i].size() - 1;
      }
      if (aux) {
        if (item.category < 0 || item.category >= cfg_.n_categories || item.topic < 0 ||
            item.topic >= cfg_.n_topics) {
          throw Error(ErrorKind::kDimension, "label index out of range");
        }
        cat_terms.push_back(ag::nll_sum(tape, ctx.category_logits, {item.category}));
        topic_terms.push_back(ag::nll_sum(tape, ctx.topic_logits, {item.topic}));
      }
    }
    const double text_w = reduction == Reduction::kMean ? 1.0 / static_cast<double>(tokens) : 1.0;
    const double aux_w = 1.0 / static_cast<double>(batch.size());
    std::vector<ag::Var> terms;
    std::vector<double> weights;
    auto text = ag::weighted_sum(tape, text_terms, std::vector<double>(text_terms.size(), text_w));
    terms.push_back(text);
    weights.push_back(1.0);
    ag::Var cat, topic;
    if (aux) {
      cat = ag::weighted_sum(tape, cat_terms, std::vector<double>(cat_terms.size(), aux_w));
      topic = ag::weighted_sum(tape, topic_terms, std::vector<double>(topic_terms.size(), aux_w));
      terms.push_back(cat);
      weights.push_back(alpha);
      terms.push_back(topic);
      weights.push_back(beta);
    }
    auto total = ag::weighted_sum(tape, terms, weights);
    if (parts) {
      parts->text = text->value(0, 0);
      parts->category = aux ? cat->value(0, 0) : 0.0;
      parts->topic = aux ? topic->value(0, 0) : 0.0;
      parts->total = total->value(0, 0);
      parts->tokens = tokens;
    }
    return total;
  }

  GenerationResult generate(const Matrix& raw, const Vocabulary& vocab, const SamplingConfig& cfg,
                            const std::string& sample_id = {}, const std::vector<bool>& zero_states = {}) const {
    return generate_sample(context(raw, zero_states), decoder_, vocab, cfg, sample_id);
  }

 private:
  ModelConfig cfg_;
  Toggles toggles_;
  nn::ParamStore params_;
  nn::Linear projection_;
  ag::Var type_state_;
  ag::Var type_diff_;
  ContextEncoder encoder_;
  TextDecoder decoder_;
};

}  // namespace vtt
