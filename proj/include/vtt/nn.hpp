#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vtt/autograd.hpp"
#include "vtt/common.hpp"

namespace vtt::nn {

using ag::Matrix;
using ag::Tape;
using ag::Var;

/// Named, ordered parameter registry. Each tensor is initialized from its own
/// stream derived from (seed, name), so adding or removing a module never
/// changes the initial values of the others.
class ParamStore {
 public:
  struct Entry {
    Var var;
    bool decay = false;
  };

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Var normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev,
             bool decay = true) {
    auto rng = make_rng(seed_, "param/" + name);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * normal01(rng);
    }
    return add(name, std::move(m), decay);
  }

  Var constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double value) {
    return add(name, Matrix::Constant(rows, cols, value), false);
  }

  Var add(const std::string& name, Matrix init, bool decay) {
    if (entries_.count(name)) throw Error(ErrorKind::kInvariant, "duplicate parameter '" + name + "'");
    auto v = ag::parameter(std::move(init));
    entries_[name] = {v, decay};
    return v;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  const Var& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorKind::kMissingKey, "no parameter '" + name + "'");
    return it->second.var;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += static_cast<std::size_t>(e.var->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.var->zero_grad();
  }

 private:
  std::uint64_t seed_;
  std::map<std::string, Entry> entries_;
};

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out, may be null

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, Eigen::Index in, Eigen::Index out, bool with_bias = true)
      : weight(ps.normal(name + ".weight", in, out, 1.0 / std::sqrt(static_cast<double>(in)))),
        bias(with_bias ? ps.constant(name + ".bias", 1, out, 0.0) : nullptr) {}

  Var operator()(Tape* tape, const Var& x) const {
    auto y = ag::matmul(tape, x, weight);
    return bias ? ag::add_row(tape, y, bias) : y;
  }
};

struct LayerNorm {
  Var gain;
  Var bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, Eigen::Index d)
      : gain(ps.constant(name + ".gain", 1, d, 1.0)), bias(ps.constant(name + ".bias", 1, d, 0.0)) {}

  Var operator()(Tape* tape, const Var& x) const { return ag::layer_norm(tape, x, gain, bias); }
};

/// Bucketed relative distance as in T5: half the buckets exact, the rest
/// log-spaced up to max_distance. `relative` is key_pos - query_pos. Causal
/// stacks only see non-positive offsets and use every bucket for the past.
inline int relative_position_bucket(int relative, bool bidirectional, int num_buckets, int max_distance) {
  int bucket = 0;
  int n = -relative;
  if (bidirectional) {
    num_buckets /= 2;
    if (n < 0) bucket += num_buckets;
    n = std::abs(n);
  } else {
    n = std::max(n, 0);
  }
  const int max_exact = num_buckets / 2;
  if (n < max_exact) return bucket + n;
  const double scaled = std::log(static_cast<double>(n) / max_exact) /
                        std::log(static_cast<double>(max_distance) / max_exact) *
                        (num_buckets - max_exact);
  return bucket + std::min(max_exact + static_cast<int>(scaled), num_buckets - 1);
}

struct StackConfig {
  int d_model = 512;
  int n_heads = 8;
  int n_layers = 2;
  int d_ff = 2048;
  int num_buckets = 32;
  int max_distance = 128;
  bool causal = false;
};

/// Pre-norm transformer stack with a relative-position bias table shared by
/// all layers (one scalar per bucket and head).
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(ParamStore& ps, const std::string& name, const StackConfig& cfg) : cfg_(cfg) {
    if (cfg.d_model % cfg.n_heads != 0) {
      throw Error(ErrorKind::kConfig, "d_model must be divisible by n_heads");
    }
    rel_bias_ = ps.normal(name + ".rel_bias", cfg.num_buckets, cfg.n_heads, 0.02, false);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      Layer layer;
      layer.ln_attn = LayerNorm(ps, p + ".ln_attn", cfg.d_model);
      layer.q = Linear(ps, p + ".attn.q", cfg.d_model, cfg.d_model, false);
      layer.k = Linear(ps, p + ".attn.k", cfg.d_model, cfg.d_model, false);
      layer.v = Linear(ps, p + ".attn.v", cfg.d_model, cfg.d_model, false);
      layer.o = Linear(ps, p + ".attn.o", cfg.d_model, cfg.d_model);
      layer.ln_ff = LayerNorm(ps, p + ".ln_ff", cfg.d_model);
      layer.ff1 = Linear(ps, p + ".ff1", cfg.d_model, cfg.d_ff);
      layer.ff2 = Linear(ps, p + ".ff2", cfg.d_ff, cfg.d_model);
      layers_.push_back(layer);
    }
    ln_final_ = LayerNorm(ps, name + ".ln_final", cfg.d_model);
  }

  const StackConfig& config() const { return cfg_; }

  /// x: T x d_model. key_valid[j] == false removes position j as an attention
  /// key (right padding).
  Var forward(Tape* tape, Var x, const std::vector<bool>& key_valid) const {
    const auto t = x->rows();
    if (x->cols() != cfg_.d_model) throw Error(ErrorKind::kDimension, "stack input width mismatch");
    if (key_valid.size() != static_cast<std::size_t>(t)) {
      throw Error(ErrorKind::kDimension, "key_valid length mismatch");
    }
    Eigen::MatrixXi bucket(t, t);
    Eigen::Matrix<bool, -1, -1> allowed(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j < t; ++j) {
        bucket(i, j) = relative_position_bucket(static_cast<int>(j - i), !cfg_.causal, cfg_.num_buckets,
                                                cfg_.max_distance);
        allowed(i, j) = key_valid[static_cast<std::size_t>(j)] && (!cfg_.causal || j <= i);
      }
    }
    std::vector<Var> head_bias;
    for (int h = 0; h < cfg_.n_heads; ++h) head_bias.push_back(ag::gather_bias(tape, rel_bias_, bucket, h));

    const int dh = cfg_.d_model / cfg_.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const auto& layer : layers_) {
      auto h = layer.ln_attn(tape, x);
      auto q = layer.q(tape, h);
      auto k = layer.k(tape, h);
      auto v = layer.v(tape, h);
      std::vector<Var> heads;
      for (int hd = 0; hd < cfg_.n_heads; ++hd) {
        auto qh = ag::slice_cols(tape, q, hd * dh, dh);
        auto kh = ag::slice_cols(tape, k, hd * dh, dh);
        auto vh = ag::slice_cols(tape, v, hd * dh, dh);
        auto scores = ag::add(tape, ag::scale(tape, ag::matmul_nt(tape, qh, kh), inv_sqrt), head_bias[hd]);
        auto probs = ag::masked_softmax(tape, scores, allowed);
        heads.push_back(ag::matmul(tape, probs, vh));
      }
      auto attn = cfg_.n_heads == 1 ? heads.front() : ag::concat_cols(tape, heads);
      x = ag::add(tape, x, layer.o(tape, attn));
      auto f = layer.ff2(tape, ag::gelu(tape, layer.ff1(tape, layer.ln_ff(tape, x))));
      x = ag::add(tape, x, f);
    }
    return ln_final_(tape, x);
  }

 private:
  struct Layer {
    LayerNorm ln_attn;
    Linear q, k, v, o;
    LayerNorm ln_ff;
    Linear ff1, ff2;
  };

  StackConfig cfg_;
  Var rel_bias_;
  std::vector<Layer> layers_;
  LayerNorm ln_final_;
};

}  // namespace vtt::nn
