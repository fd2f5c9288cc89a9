#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtt/common.hpp"
#include "vtt/core.hpp"
#include "vtt/text.hpp"

namespace vtt::metrics {

using Tokens = std::vector<std::string>;

struct EvalPair {
  std::string sample_id;
  std::size_t index = 0;
  Tokens candidate;
  Tokens reference;
};

using NGram = std::vector<std::string>;

inline std::map<NGram, int> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<NGram, int> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[NGram(t.begin() + i, t.begin() + i + n)];
  return out;
}

/// Sentence BLEU@4 on the 0-100 scale. Orders run to min(4, |candidate|)
/// with uniform weights; an order with no clipped match uses
/// epsilon / max(1, candidate n-grams) as its precision.
inline double bleu4(const Tokens& cand, const Tokens& ref, double epsilon = 0.1) {
  if (cand.empty() || ref.empty()) return 0.0;
  const std::size_t max_n = std::min<std::size_t>(4, cand.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto c = ngram_counts(cand, n);
    const auto r = ngram_counts(ref, n);
    int matched = 0, total = 0;
    for (const auto& [g, k] : c) {
      total += k;
      auto it = r.find(g);
      if (it != r.end()) matched += std::min(k, it->second);
    }
    const double denom = std::max(1, total);
    const double p = matched > 0 ? matched / denom : epsilon / denom;
    log_sum += std::log(p) / static_cast<double>(max_n);
  }
  const double c_len = static_cast<double>(cand.size());
  const double r_len = static_cast<double>(ref.size());
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return 100.0 * bp * std::exp(log_sum);
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS-based F-measure with recall weight beta, 0-100 scale.
inline double rouge_l(const Tokens& cand, const Tokens& ref, double beta = 1.2) {
  if (cand.empty() || ref.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 100.0 * (1.0 + beta * beta) * p * r / (r + beta * beta * p);
}

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Exact-match unigram alignment with the most matches and, among those, the
/// fewest chunks (runs contiguous in both sentences). Branch and bound over
/// candidate positions; the search is capped for pathological inputs and then
/// returns the best alignment found so far.
inline Alignment align_unigrams(const Tokens& cand, const Tokens& ref, std::size_t node_budget = 2'000'000) {
  std::map<std::string, int> need;  // matches still required per word
  {
    std::map<std::string, int> cc, rc;
    for (const auto& w : cand) ++cc[w];
    for (const auto& w : ref) ++rc[w];
    for (const auto& [w, k] : cc) {
      auto it = rc.find(w);
      if (it != rc.end()) need[w] = std::min(k, it->second);
    }
  }
  Alignment best{0, 0};
  for (const auto& [_, k] : need) best.matches += static_cast<std::size_t>(k);
  if (best.matches == 0) return best;
  std::map<std::string, int> skippable;  // unmatched occurrences allowed per word
  {
    std::map<std::string, int> cc;
    for (const auto& w : cand) ++cc[w];
    for (const auto& [w, k] : cc) skippable[w] = k - (need.count(w) ? need[w] : 0);
  }
  std::size_t best_chunks = cand.size() + 1;
  std::vector<bool> used(ref.size(), false);
  std::size_t nodes = 0;

  // prev_ref: reference index matched by cand[i-1], or -1 if it was unmatched.
  std::function<void(std::size_t, long, std::size_t)> dfs = [&](std::size_t i, long prev_ref, std::size_t chunks) {
    if (chunks >= best_chunks || ++nodes > node_budget) return;
    if (i == cand.size()) {
      best_chunks = chunks;
      return;
    }
    const auto& w = cand[i];
    auto nit = need.find(w);
    // Prefer continuing the current chunk first so good bounds arrive early.
    if (nit != need.end() && nit->second > 0) {
      std::vector<std::size_t> options;
      const bool can_extend = prev_ref >= 0 && static_cast<std::size_t>(prev_ref + 1) < ref.size() &&
                              !used[prev_ref + 1] && ref[prev_ref + 1] == w;
      if (can_extend) options.push_back(static_cast<std::size_t>(prev_ref + 1));
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == w && !(can_extend && static_cast<long>(j) == prev_ref + 1)) options.push_back(j);
      }
      for (std::size_t j : options) {
        const bool extends = prev_ref >= 0 && static_cast<long>(j) == prev_ref + 1;
        used[j] = true;
        --nit->second;
        dfs(i + 1, static_cast<long>(j), chunks + (extends ? 0 : 1));
        ++nit->second;
        used[j] = false;
      }
    }
    auto sit = skippable.find(w);
    if (sit != skippable.end() && sit->second > 0) {
      --sit->second;
      dfs(i + 1, -1, chunks);
      ++sit->second;
    }
  };
  dfs(0, -1, 0);
  best.chunks = best_chunks;
  return best;
}

/// METEOR without stemming or synonym resources, 0-100 scale:
/// Fmean = 10PR / (R + 9P), penalty = 0.5 (chunks / matches)^3.
inline double meteor_lite(const Tokens& cand, const Tokens& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const auto a = align_unigrams(cand, ref);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(a.chunks) / m, 3.0);
  return 100.0 * fmean * (1.0 - penalty);
}

/// CIDEr-D over a corpus where each pair's reference is one document.
/// Returns per-pair scores on the reporting scale (conventional value x 100).
/// Orders are averaged over n = 1..min(4, |reference|) so that short
/// references are not capped below the maximum by orders they cannot have.
inline std::vector<double> cider_d(const std::vector<EvalPair>& pairs, double sigma = 6.0) {
  if (pairs.empty()) throw Error(ErrorKind::kCoverage, "CIDEr needs a non-empty corpus");
  constexpr std::size_t kMaxN = 4;
  std::map<NGram, int> df;
  for (const auto& p : pairs) {
    std::set<NGram> seen;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      for (const auto& [g, _] : ngram_counts(p.reference, n)) seen.insert(g);
    }
    for (const auto& g : seen) ++df[g];
  }
  const double log_docs = std::log(static_cast<double>(pairs.size()));
  auto tfidf = [&](const Tokens& t, std::size_t n) {
    std::map<NGram, double> v;
    for (const auto& [g, k] : ngram_counts(t, n)) {
      auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : static_cast<double>(it->second)));
      v[g] = static_cast<double>(k) * (log_docs - d);
    }
    return v;
  };
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    const std::size_t orders = std::min(kMaxN, p.reference.size());
    if (orders == 0 || p.candidate.empty()) {
      scores.push_back(0.0);
      continue;
    }
    const double delta = static_cast<double>(p.candidate.size()) - static_cast<double>(p.reference.size());
    const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
    double sum = 0.0;
    for (std::size_t n = 1; n <= orders; ++n) {
      const auto vc = tfidf(p.candidate, n);
      const auto vr = tfidf(p.reference, n);
      double dot = 0.0, nc = 0.0, nr = 0.0;
      for (const auto& [g, x] : vc) {
        nc += x * x;
        auto it = vr.find(g);
        if (it != vr.end()) dot += std::min(x, it->second) * it->second;
      }
      for (const auto& [g, y] : vr) nr += y * y;
      double val = dot;
      if (nc != 0.0 && nr != 0.0) val /= std::sqrt(nc) * std::sqrt(nr);
      sum += val * penalty;
    }
    scores.push_back(10.0 * (sum / static_cast<double>(orders)) * 100.0);
  }
  return scores;
}

inline double cider(const std::vector<EvalPair>& pairs) {
  const auto s = cider_d(pairs);
  double total = 0.0;
  for (double x : s) total += x;
  return total / static_cast<double>(s.size());
}

struct MetricSet {
  bool bleu4 = true;
  bool rouge_l = true;
  bool cider = true;
  bool meteor = true;
};

struct MetricReport {
  std::size_t pair_count = 0;
  std::map<std::string, double> corpus;                    // metric -> score
  std::map<std::string, std::vector<double>> per_pair;     // metric -> score per pair
  std::vector<EvalPair> pairs;

  double get(const std::string& metric) const {
    auto it = corpus.find(metric);
    if (it == corpus.end()) throw Error(ErrorKind::kMissingKey, "metric '" + metric + "' not in report");
    return it->second;
  }

  /// Per-sample averages of each metric, in pair order.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pair_count"] = pair_count;
    j["corpus"] = corpus;
    nlohmann::json samples = nlohmann::json::array();
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& id = pairs[i].sample_id;
      if (!slot.count(id)) {
        slot[id] = samples.size();
        samples.push_back({{"sample_id", id}, {"scores", nlohmann::json::object()}});
        for (const auto& [m, _] : per_pair) samples.back()["scores"][m] = nlohmann::json::array();
      }
      for (const auto& [m, v] : per_pair) samples[slot[id]]["scores"][m].push_back(v[i]);
    }
    j["per_sample"] = samples;
    return j;
  }
};

inline MetricReport score_pairs(std::vector<EvalPair> pairs, const MetricSet& set = {}) {
  MetricReport r;
  r.pair_count = pairs.size();
  if (pairs.empty()) throw Error(ErrorKind::kCoverage, "no pairs to evaluate");
  auto run = [&](const char* name, auto fn) {
    auto& v = r.per_pair[name];
    double total = 0.0;
    for (const auto& p : pairs) {
      v.push_back(fn(p.candidate, p.reference));
      total += v.back();
    }
    r.corpus[name] = total / static_cast<double>(pairs.size());
  };
  if (set.bleu4) run("bleu4", [](const Tokens& c, const Tokens& f) { return bleu4(c, f); });
  if (set.rouge_l) run("rougeL", [](const Tokens& c, const Tokens& f) { return rouge_l(c, f); });
  if (set.meteor) run("meteor", [](const Tokens& c, const Tokens& f) { return meteor_lite(c, f); });
  if (set.cider) {
    r.per_pair["cider"] = cider_d(pairs);
    double total = 0.0;
    for (double x : r.per_pair["cider"]) total += x;
    r.corpus["cider"] = total / static_cast<double>(pairs.size());
  }
  r.pairs = std::move(pairs);
  return r;
}

/// sample_id -> predicted descriptions.
using Predictions = std::map<std::string, std::vector<std::string>>;

inline void write_predictions(const Predictions& preds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  for (const auto& [id, ts] : preds) {
    out << nlohmann::json{{"sample_id", id}, {"transformations", ts}}.dump() << '\n';
  }
}

inline Predictions read_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  Predictions preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      preds[j.at("sample_id").get<std::string>()] = j.at("transformations").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return preds;
}

/// Pairs every reference description of `samples` with its prediction. A
/// missing sample or a wrong description count is a coverage error listing
/// the offending ids.
inline std::vector<EvalPair> make_pairs(const Predictions& preds, const std::vector<const VTTSample*>& samples) {
  std::vector<std::string> missing;
  std::vector<EvalPair> pairs;
  for (const auto* s : samples) {
    auto it = preds.find(s->sample_id);
    if (it == preds.end() || it->second.size() != s->transformations.size()) {
      missing.push_back(s->sample_id);
      continue;
    }
    for (std::size_t i = 0; i < s->transformations.size(); ++i) {
      pairs.push_back({s->sample_id, i, text::tokenize(it->second[i]), text::tokenize(s->transformations[i])});
    }
  }
  if (!missing.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < missing.size(); ++i) ids += (i ? "," : "") + missing[i];
    throw Error(ErrorKind::kCoverage, "predictions missing or incomplete for " + std::to_string(missing.size()) +
                                          " sample(s): " + ids);
  }
  return pairs;
}

inline MetricReport evaluate_corpus(const Predictions& preds, const std::vector<const VTTSample*>& samples,
                                    const MetricSet& set = {}) {
  return score_pairs(make_pairs(preds, samples), set);
}

inline MetricReport evaluate_corpus(const Predictions& preds, const DatasetManifest& manifest, Split split,
                                    const MetricSet& set = {}) {
  return evaluate_corpus(preds, manifest.split(split), set);
}

}  // namespace vtt::metrics
