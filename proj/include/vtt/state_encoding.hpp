#pragma once

#include <string>
#include <vector>

#include "vtt/autograd.hpp"
#include "vtt/nn.hpp"

namespace vtt {

using ag::Matrix;

enum class RowType { kState, kDiff };

/// How the first difference row is formed: v_1 - v_{N+1} (wrap) or zero.
enum class DiffFirst { kWrap, kZero };

inline const char* to_string(DiffFirst d) { return d == DiffFirst::kWrap ? "wrap" : "zero"; }
inline DiffFirst parse_diff_first(const std::string& s) {
  if (s == "wrap") return DiffFirst::kWrap;
  if (s == "zero") return DiffFirst::kZero;
  throw Error(ErrorKind::kConfig, "diff_first must be wrap|zero, got '" + s + "'");
}

/// Context-encoder input. Rows 0..N are projected states, rows N+1..2N+1 are
/// difference features (absent when the difference strategy is disabled).
struct EncoderInput {
  Matrix features;
  std::vector<RowType> type_ids;
  std::vector<bool> mask;

  std::size_t num_states() const {
    std::size_t n = 0;
    for (auto t : type_ids) n += t == RowType::kState;
    return n;
  }
  bool has_diff() const { return num_states() != type_ids.size(); }
  std::size_t num_transformations() const { return num_states() - 1; }
};

struct ProjectionParams {
  Matrix weight;  // d_enc x d_model
  Matrix bias;    // 1 x d_model
};

struct TypeEmbeddings {
  Matrix state;  // 1 x d_model
  Matrix diff;   // 1 x d_model
};

namespace encoding {

inline ag::Var project(ag::Tape* tape, const ag::Var& raw, const ag::Var& weight, const ag::Var& bias) {
  if (raw->cols() != weight->rows()) {
    throw Error(ErrorKind::kDimension, "state width " + std::to_string(raw->cols()) +
                                           " does not match projection input " +
                                           std::to_string(weight->rows()));
  }
  return ag::add_row(tape, ag::matmul(tape, raw, weight), bias);
}

inline ag::Var differences(ag::Tape* tape, const ag::Var& states, DiffFirst first) {
  if (states->rows() < 2) throw Error(ErrorKind::kDimension, "difference features need >= 2 states");
  return ag::row_diff(tape, states, first == DiffFirst::kWrap);
}

/// Adds type embeddings, then zeroes masked rows entirely (no type signal
/// survives on a masked row). `diffs` may be null.
inline ag::Var assemble(ag::Tape* tape, const ag::Var& states, const ag::Var& diffs, const ag::Var& type_state,
                        const ag::Var& type_diff, const std::vector<bool>& mask) {
  const auto n_rows = states->rows() + (diffs ? diffs->rows() : 0);
  if (mask.size() != static_cast<std::size_t>(n_rows)) {
    throw Error(ErrorKind::kDimension, "mask plan length " + std::to_string(mask.size()) + " != " +
                                           std::to_string(n_rows) + " encoder rows");
  }
  if (diffs && (diffs->rows() != states->rows() || diffs->cols() != states->cols())) {
    throw Error(ErrorKind::kDimension, "state and difference features differ in shape");
  }
  std::vector<ag::Var> parts{type_state ? ag::add_row(tape, states, type_state) : states};
  if (diffs) parts.push_back(type_diff ? ag::add_row(tape, diffs, type_diff) : diffs);
  auto rows = parts.size() == 1 ? parts.front() : ag::concat_rows(tape, parts);
  bool any = false;
  for (bool m : mask) any = any || m;
  return any ? ag::mask_rows(tape, rows, mask) : rows;
}

}  // namespace encoding

/// Row-wise affine map raw (rows x d_enc) -> rows x d_model.
inline Matrix project_states(const Matrix& raw, const ProjectionParams& params) {
  return encoding::project(nullptr, ag::constant(raw), ag::constant(params.weight), ag::constant(params.bias))
      ->value;
}

/// out[i] = V[i] - V[i-1]; out[0] = V[0] - V[last] (wrap) or 0 (zero).
inline Matrix difference_features(const Matrix& states, DiffFirst first = DiffFirst::kWrap) {
  return encoding::differences(nullptr, ag::constant(states), first)->value;
}

/// `diffs` may be empty (0 rows) to build the state-only layout.
inline EncoderInput assemble_encoder_input(const Matrix& states, const Matrix& diffs, const TypeEmbeddings& types,
                                           const std::vector<bool>& mask_plan) {
  const bool with_diff = diffs.rows() > 0;
  auto features = encoding::assemble(nullptr, ag::constant(states), with_diff ? ag::constant(diffs) : nullptr,
                                     ag::constant(types.state), ag::constant(types.diff), mask_plan);
  EncoderInput in;
  in.features = features->value;
  in.type_ids.assign(static_cast<std::size_t>(states.rows()), RowType::kState);
  if (with_diff) in.type_ids.insert(in.type_ids.end(), static_cast<std::size_t>(diffs.rows()), RowType::kDiff);
  in.mask = mask_plan;
  return in;
}

}  // namespace vtt
