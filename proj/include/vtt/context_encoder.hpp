#pragma once

#include <string>
#include <vector>

#include "vtt/autograd.hpp"
#include "vtt/common.hpp"
#include "vtt/nn.hpp"
#include "vtt/state_encoding.hpp"

namespace vtt {

/// Masked transformation modeling: a sample accepts masking with probability
/// sample_ratio; an accepting sample zeroes each row with probability mask_ratio.
struct MTMPolicy {
  double mask_ratio = 0.15;
  double sample_ratio = 0.5;

  void validate() const {
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0) || !(sample_ratio >= 0.0 && sample_ratio <= 1.0)) {
      throw Error(ErrorKind::kConfig, "MTM ratios must lie in [0, 1]");
    }
  }
};

inline std::vector<bool> sample_mask_plan(const MTMPolicy& policy, std::size_t n_rows, bool training, Rng& rng) {
  std::vector<bool> plan(n_rows, false);
  if (!training) return plan;
  if (!(uniform01(rng) < policy.sample_ratio)) return plan;
  for (std::size_t i = 0; i < n_rows; ++i) plan[i] = uniform01(rng) < policy.mask_ratio;
  return plan;
}

/// Which encoder output row carries transformation i.
enum class RepSource { kDiff, kState, kSum };

inline const char* to_string(RepSource r) {
  switch (r) {
    case RepSource::kDiff: return "diff";
    case RepSource::kState: return "state";
    case RepSource::kSum: return "sum";
  }
  return "diff";
}
inline RepSource parse_rep_source(const std::string& s) {
  if (s == "diff") return RepSource::kDiff;
  if (s == "state") return RepSource::kState;
  if (s == "sum") return RepSource::kSum;
  throw Error(ErrorKind::kConfig, "rep_source must be diff|state|sum, got '" + s + "'");
}

struct ContextEncoderConfig {
  nn::StackConfig stack;
  int n_categories = 1;
  int n_topics = 1;
  RepSource rep_source = RepSource::kDiff;
};

struct ContextOutput {
  Matrix transformation_reps;  // N x d_model
  Matrix global_rep;           // 1 x d_model
  Matrix category_logits;      // 1 x n_categories
  Matrix topic_logits;         // 1 x n_topics
};

/// Same fields as ContextOutput, still attached to the tape.
struct ContextVars {
  ag::Var transformation_reps;
  ag::Var global_rep;
  ag::Var category_logits;
  ag::Var topic_logits;

  ContextOutput values() const {
    return {transformation_reps->value, global_rep->value, category_logits->value, topic_logits->value};
  }
};

class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(nn::ParamStore& ps, const ContextEncoderConfig& cfg) : cfg_(cfg) {
    cfg_.stack.causal = false;
    global_ = ps.normal("encoder.global_token", 1, cfg.stack.d_model, 0.02, false);
    stack_ = nn::TransformerStack(ps, "encoder", cfg_.stack);
    category_head_ = nn::Linear(ps, "aux.category_head", cfg.stack.d_model, cfg.n_categories);
    topic_head_ = nn::Linear(ps, "aux.topic_head", cfg.stack.d_model, cfg.n_topics);
  }

  const ContextEncoderConfig& config() const { return cfg_; }

  /// features: rows laid out as in EncoderInput. pad_to > rows appends zero
  /// rows that are excluded as attention keys.
  ContextVars forward(ag::Tape* tape, const ag::Var& features, std::size_t num_states, bool has_diff,
                      std::size_t pad_to = 0) const {
    const auto rows = static_cast<std::size_t>(features->rows());
    if (num_states < 2) throw Error(ErrorKind::kDimension, "context encoder needs >= 2 states");
    if (rows != num_states * (has_diff ? 2 : 1)) {
      throw Error(ErrorKind::kDimension, "encoder input has " + std::to_string(rows) + " rows for " +
                                             std::to_string(num_states) + " states");
    }
    std::vector<ag::Var> parts{global_, features};
    const std::size_t total = 1 + std::max(rows, pad_to);
    if (total > 1 + rows) parts.push_back(ag::constant(Matrix::Zero(static_cast<Eigen::Index>(total - 1 - rows),
                                                                    features->cols())));
    auto x = ag::concat_rows(tape, parts);
    std::vector<bool> key_valid(total, false);
    std::fill(key_valid.begin(), key_valid.begin() + static_cast<std::ptrdiff_t>(1 + rows), true);
    auto h = stack_.forward(tape, x, key_valid);

    const std::size_t n = num_states - 1;
    std::vector<int> state_rows, diff_rows;
    for (std::size_t i = 0; i < n; ++i) {
      state_rows.push_back(static_cast<int>(1 + i + 1));
      diff_rows.push_back(static_cast<int>(1 + num_states + i + 1));
    }
    RepSource src = has_diff ? cfg_.rep_source : RepSource::kState;
    ContextVars out;
    if (src == RepSource::kDiff) {
      out.transformation_reps = ag::gather_rows(tape, h, diff_rows);
    } else if (src == RepSource::kState) {
      out.transformation_reps = ag::gather_rows(tape, h, state_rows);
    } else {
      out.transformation_reps =
          ag::add(tape, ag::gather_rows(tape, h, state_rows), ag::gather_rows(tape, h, diff_rows));
    }
    out.global_rep = ag::gather_rows(tape, h, {0});
    out.category_logits = category_head_(tape, out.global_rep);
    out.topic_logits = topic_head_(tape, out.global_rep);
    return out;
  }

 private:
  ContextEncoderConfig cfg_;
  ag::Var global_;
  nn::TransformerStack stack_;
  nn::Linear category_head_;
  nn::Linear topic_head_;
};

inline void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorKind::kNumeric, std::string("non-finite values in ") + what);
}

inline ContextOutput encode_context(const EncoderInput& input, const ContextEncoder& encoder,
                                    std::size_t pad_to = 0) {
  if (input.features.rows() != static_cast<Eigen::Index>(input.type_ids.size())) {
    throw Error(ErrorKind::kDimension, "EncoderInput features/type_ids length mismatch");
  }
  auto out = encoder.forward(nullptr, ag::constant(input.features), input.num_states(), input.has_diff(), pad_to)
                 .values();
  check_finite(out.transformation_reps, "transformation representations");
  check_finite(out.global_rep, "global representation");
  return out;
}

/// Encodes samples of different lengths as one right-padded batch.
inline std::vector<ContextOutput> encode_batch(const std::vector<EncoderInput>& inputs,
                                               const ContextEncoder& encoder) {
  std::size_t longest = 0;
  for (const auto& in : inputs) longest = std::max(longest, static_cast<std::size_t>(in.features.rows()));
  std::vector<ContextOutput> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(encode_context(in, encoder, longest));
  return out;
}

}  // namespace vtt
