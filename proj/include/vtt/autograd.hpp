#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "vtt/common.hpp"

// Minimal reverse-mode differentiation over dense double matrices. Operations
// append their backward closures to a Tape in execution order, so replaying the
// tape in reverse is a valid topological order. Passing a null tape runs the
// same forward code without recording anything.
namespace vtt::ag {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Matrix m) {
  auto n = std::make_shared<Node>();
  n->value = std::move(m);
  return n;
}

inline Var parameter(Matrix m) {
  auto n = constant(std::move(m));
  n->requires_grad = true;
  n->zero_grad();
  return n;
}

class Tape {
 public:
  void record(std::function<void()> fn) { fns_.push_back(std::move(fn)); }
  std::size_t size() const { return fns_.size(); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and runs the recorded closures.
  void backward(const Var& out) {
    if (out->value.size() != 1) {
      throw Error(ErrorKind::kDimension, "backward() needs a scalar output");
    }
    out->accumulate(Matrix::Ones(1, 1));
    for (auto it = fns_.rbegin(); it != fns_.rend(); ++it) (*it)();
    fns_.clear();
  }

 private:
  std::vector<std::function<void()>> fns_;
};

namespace detail {

inline bool tracks(Tape* tape, std::initializer_list<const Var*> inputs) {
  if (!tape) return false;
  for (const Var* v : inputs) {
    if ((*v)->requires_grad) return true;
  }
  return false;
}

inline Var result(Matrix value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

// Gradient of a node that may never have received one (unused output rows).
inline Matrix grad_or_zero(const Node& n) {
  return n.grad.size() ? n.grad : Matrix::Zero(n.value.rows(), n.value.cols());
}

}  // namespace detail

inline Var matmul(Tape* tape, const Var& a, const Var& b) {
  if (a->cols() != b->rows()) throw Error(ErrorKind::kDimension, "matmul shape mismatch");
  const bool g = detail::tracks(tape, {&a, &b});
  auto out = detail::result(a->value * b->value, g);
  if (g) {
    tape->record([a, b, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      if (a->requires_grad) a->accumulate(go * b->value.transpose());
      if (b->requires_grad) b->accumulate(a->value.transpose() * go);
    });
  }
  return out;
}

/// a * b^T without materializing the transpose as a separate node.
inline Var matmul_nt(Tape* tape, const Var& a, const Var& b) {
  if (a->cols() != b->cols()) throw Error(ErrorKind::kDimension, "matmul_nt shape mismatch");
  const bool g = detail::tracks(tape, {&a, &b});
  auto out = detail::result(a->value * b->value.transpose(), g);
  if (g) {
    tape->record([a, b, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      if (a->requires_grad) a->accumulate(go * b->value);
      if (b->requires_grad) b->accumulate(go.transpose() * a->value);
    });
  }
  return out;
}

inline Var add(Tape* tape, const Var& a, const Var& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw Error(ErrorKind::kDimension, "add shape mismatch");
  }
  const bool g = detail::tracks(tape, {&a, &b});
  auto out = detail::result(a->value + b->value, g);
  if (g) {
    tape->record([a, b, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      if (a->requires_grad) a->accumulate(go);
      if (b->requires_grad) b->accumulate(go);
    });
  }
  return out;
}

/// Adds a 1 x d row to every row of a.
inline Var add_row(Tape* tape, const Var& a, const Var& row) {
  if (row->rows() != 1 || row->cols() != a->cols()) {
    throw Error(ErrorKind::kDimension, "add_row shape mismatch");
  }
  const bool g = detail::tracks(tape, {&a, &row});
  Matrix v = a->value;
  v.rowwise() += row->value.row(0);
  auto out = detail::result(std::move(v), g);
  if (g) {
    tape->record([a, row, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      if (a->requires_grad) a->accumulate(go);
      if (row->requires_grad) row->accumulate(go.colwise().sum());
    });
  }
  return out;
}

inline Var scale(Tape* tape, const Var& a, double s) {
  const bool g = detail::tracks(tape, {&a});
  auto out = detail::result(a->value * s, g);
  if (g) {
    tape->record([a, s, o = out] { a->accumulate(detail::grad_or_zero(*o) * s); });
  }
  return out;
}

/// Zeroes the rows flagged in drop (values and gradients).
inline Var mask_rows(Tape* tape, const Var& a, const std::vector<bool>& drop) {
  if (drop.size() != static_cast<std::size_t>(a->rows())) {
    throw Error(ErrorKind::kDimension, "mask_rows length mismatch");
  }
  const bool g = detail::tracks(tape, {&a});
  Matrix v = a->value;
  for (std::size_t i = 0; i < drop.size(); ++i) {
    if (drop[i]) v.row(static_cast<Eigen::Index>(i)).setZero();
  }
  auto out = detail::result(std::move(v), g);
  if (g) {
    tape->record([a, drop, o = out] {
      Matrix go = detail::grad_or_zero(*o);
      for (std::size_t i = 0; i < drop.size(); ++i) {
        if (drop[i]) go.row(static_cast<Eigen::Index>(i)).setZero();
      }
      a->accumulate(go);
    });
  }
  return out;
}

/// out[i] = a[i] - a[i-1]; out[0] = a[0] - a[last] when wrap, else zero.
inline Var row_diff(Tape* tape, const Var& a, bool wrap) {
  const auto n = a->rows();
  if (n < 2) throw Error(ErrorKind::kDimension, "row_diff needs at least 2 rows");
  const bool g = detail::tracks(tape, {&a});
  Matrix v(n, a->cols());
  if (wrap) {
    v.row(0) = a->value.row(0) - a->value.row(n - 1);
  } else {
    v.row(0).setZero();
  }
  for (Eigen::Index i = 1; i < n; ++i) v.row(i) = a->value.row(i) - a->value.row(i - 1);
  auto out = detail::result(std::move(v), g);
  if (g) {
    tape->record([a, wrap, n, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      Matrix ga = Matrix::Zero(n, go.cols());
      if (wrap) {
        ga.row(0) += go.row(0);
        ga.row(n - 1) -= go.row(0);
      }
      for (Eigen::Index i = 1; i < n; ++i) {
        ga.row(i) += go.row(i);
        ga.row(i - 1) -= go.row(i);
      }
      a->accumulate(ga);
    });
  }
  return out;
}

inline Var concat_rows(Tape* tape, const std::vector<Var>& parts) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front()->cols();
  bool g = false;
  for (const auto& p : parts) {
    if (p->cols() != cols) throw Error(ErrorKind::kDimension, "concat_rows width mismatch");
    rows += p->rows();
    g = g || (tape && p->requires_grad);
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p->rows()) = p->value;
    r += p->rows();
  }
  auto out = detail::result(std::move(v), g);
  if (g) {
    tape->record([parts, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      Eigen::Index r0 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) p->accumulate(go.middleRows(r0, p->rows()));
        r0 += p->rows();
      }
    });
  }
  return out;
}

inline Var concat_cols(Tape* tape, const std::vector<Var>& parts) {
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front()->rows();
  bool g = false;
  for (const auto& p : parts) {
    if (p->rows() != rows) throw Error(ErrorKind::kDimension, "concat_cols height mismatch");
    cols += p->cols();
    g = g || (tape && p->requires_grad);
  }
  Matrix v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p->cols()) = p->value;
    c += p->cols();
  }
  auto out = detail::result(std::move(v), g);
  if (g) {
    tape->record([parts, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      Eigen::Index c0 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) p->accumulate(go.middleCols(c0, p->cols()));
        c0 += p->cols();
      }
    });
  }
  return out;
}

inline Var slice_cols(Tape* tape, const Var& a, Eigen::Index start, Eigen::Index n) {
  const bool g = detail::tracks(tape, {&a});
  auto out = detail::result(a->value.middleCols(start, n), g);
  if (g) {
    tape->record([a, start, n, o = out] {
      Matrix ga = Matrix::Zero(a->rows(), a->cols());
      ga.middleCols(start, n) = detail::grad_or_zero(*o);
      a->accumulate(ga);
    });
  }
  return out;
}

/// Selects rows by index (embedding lookup, representation picking).
inline Var gather_rows(Tape* tape, const Var& table, const std::vector<int>& idx) {
  const bool g = detail::tracks(tape, {&table});
  Matrix v(static_cast<Eigen::Index>(idx.size()), table->cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table->rows()) {
      throw Error(ErrorKind::kDimension, "gather_rows index out of range");
    }
    v.row(static_cast<Eigen::Index>(i)) = table->value.row(idx[i]);
  }
  auto out = detail::result(std::move(v), g);
  if (g) {
    tape->record([table, idx, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      Matrix gt = Matrix::Zero(table->rows(), table->cols());
      for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
      table->accumulate(gt);
    });
  }
  return out;
}

/// out(i, j) = table(bucket(i, j), column).
inline Var gather_bias(Tape* tape, const Var& table, const Eigen::MatrixXi& bucket, int column) {
  const bool g = detail::tracks(tape, {&table});
  Matrix v(bucket.rows(), bucket.cols());
  for (Eigen::Index i = 0; i < bucket.rows(); ++i) {
    for (Eigen::Index j = 0; j < bucket.cols(); ++j) v(i, j) = table->value(bucket(i, j), column);
  }
  auto out = detail::result(std::move(v), g);
  if (g) {
    tape->record([table, bucket, column, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      Matrix gt = Matrix::Zero(table->rows(), table->cols());
      for (Eigen::Index i = 0; i < bucket.rows(); ++i) {
        for (Eigen::Index j = 0; j < bucket.cols(); ++j) gt(bucket(i, j), column) += go(i, j);
      }
      table->accumulate(gt);
    });
  }
  return out;
}

/// Row-wise softmax; entries where allowed(i, j) is false get probability 0.
inline Var masked_softmax(Tape* tape, const Var& a, const Eigen::Matrix<bool, -1, -1>& allowed) {
  const bool g = detail::tracks(tape, {&a});
  Matrix p = Matrix::Zero(a->rows(), a->cols());
  for (Eigen::Index i = 0; i < a->rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < a->cols(); ++j) {
      if (allowed(i, j)) mx = std::max(mx, a->value(i, j));
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row
    double z = 0.0;
    for (Eigen::Index j = 0; j < a->cols(); ++j) {
      if (allowed(i, j)) {
        p(i, j) = std::exp(a->value(i, j) - mx);
        z += p(i, j);
      }
    }
    p.row(i) /= z;
  }
  auto out = detail::result(std::move(p), g);
  if (g) {
    tape->record([a, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      const Matrix& pv = o->value;
      const Eigen::VectorXd dot = (go.cwiseProduct(pv)).rowwise().sum();
      Matrix ga = pv.cwiseProduct(go.colwise() - dot);
      a->accumulate(ga);
    });
  }
  return out;
}

inline Var layer_norm(Tape* tape, const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const auto n = x->rows();
  const bool g = detail::tracks(tape, {&x, &gain, &bias});
  Matrix xhat(n, x->cols());
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x->value.row(i).mean();
    const double var = (x->value.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x->value.row(i).array() - mean) * inv_std(i);
  }
  Matrix y = xhat.array().rowwise() * gain->value.row(0).array();
  y.rowwise() += bias->value.row(0);
  auto out = detail::result(std::move(y), g);
  if (g) {
    tape->record([x, gain, bias, xhat, inv_std, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      if (gain->requires_grad) gain->accumulate((go.cwiseProduct(xhat)).colwise().sum());
      if (bias->requires_grad) bias->accumulate(go.colwise().sum());
      if (x->requires_grad) {
        const Matrix gx = go.array().rowwise() * gain->value.row(0).array();
        Matrix dx(gx.rows(), gx.cols());
        for (Eigen::Index i = 0; i < gx.rows(); ++i) {
          const double m1 = gx.row(i).mean();
          const double m2 = gx.row(i).cwiseProduct(xhat.row(i)).mean();
          dx.row(i) = inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
        x->accumulate(dx);
      }
    });
  }
  return out;
}

/// Exact (erf) GELU.
inline Var gelu(Tape* tape, const Var& x) {
  const bool g = detail::tracks(tape, {&x});
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Matrix y = x->value.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  auto out = detail::result(std::move(y), g);
  if (g) {
    tape->record([x, o = out] {
      const Matrix go = detail::grad_or_zero(*o);
      const Matrix dy = x->value.unaryExpr([](double v) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
      x->accumulate(go.cwiseProduct(dy));
    });
  }
  return out;
}

/// Sum over rows with target >= 0 of -log softmax(logits[i])[target[i]]. 1x1.
inline Var nll_sum(Tape* tape, const Var& logits, const std::vector<int>& targets) {
  if (targets.size() != static_cast<std::size_t>(logits->rows())) {
    throw Error(ErrorKind::kDimension, "nll_sum: one target per logits row required");
  }
  const bool g = detail::tracks(tape, {&logits});
  Matrix probs(logits->rows(), logits->cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits->rows(); ++i) {
    const double mx = logits->value.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits->value.row(i).array() - mx).exp();
    const double z = e.sum();
    probs.row(i) = e / z;
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    if (t >= logits->cols()) throw Error(ErrorKind::kDimension, "target id out of range");
    total += -(logits->value(i, t) - mx - std::log(z));
  }
  auto out = detail::result(Matrix::Constant(1, 1, total), g);
  if (g) {
    tape->record([logits, targets, probs, o = out] {
      const double go = detail::grad_or_zero(*o)(0, 0);
      Matrix gl = Matrix::Zero(logits->rows(), logits->cols());
      for (Eigen::Index i = 0; i < gl.rows(); ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0) continue;
        gl.row(i) = probs.row(i) * go;
        gl(i, t) -= go;
      }
      logits->accumulate(gl);
    });
  }
  return out;
}

/// Weighted sum of 1x1 scalars.
inline Var weighted_sum(Tape* tape, const std::vector<Var>& terms, const std::vector<double>& w) {
  double total = 0.0;
  bool g = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += w[i] * terms[i]->value(0, 0);
    g = g || (tape && terms[i]->requires_grad);
  }
  auto out = detail::result(Matrix::Constant(1, 1, total), g);
  if (g) {
    tape->record([terms, w, o = out] {
      const double go = detail::grad_or_zero(*o)(0, 0);
      for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i]->requires_grad) terms[i]->accumulate(Matrix::Constant(1, 1, w[i] * go));
      }
    });
  }
  return out;
}

}  // namespace vtt::ag
