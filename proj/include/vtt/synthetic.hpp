#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtt/common.hpp"
#include "vtt/core.hpp"
#include "vtt/dataset_builder.hpp"
#include "vtt/embedding_store.hpp"

namespace vtt::synth {

/// Desk-scale stand-in for an instructional-video corpus. Each topic owns a
/// canonical sequence of (action, object) steps; every step type owns a delta
/// vector, and a state is the running sum of deltas on top of a random
/// per-sample scene offset. Absolute state positions carry no topic signal, so
/// only differences between states identify steps.
struct SyntheticTaskSpec {
  int n_topics = 4;
  int n_categories = 2;
  int steps_min = 3;
  int steps_max = 3;
  std::vector<std::string> actions{"pour", "cut", "boil", "stir", "add", "peel"};
  std::vector<std::string> objects{"water", "egg", "orange", "noodles", "milk", "salt"};
  int state_dim = 16;
  double noise_sigma = 0.0;
  double ambiguity_rate = 0.0;  // fraction of step types sharing a delta with a twin
  double scene_sigma = 5.0;     // spread of the per-sample scene offset
  double skip_prob = 0.0;       // chance of dropping a non-first canonical step
  SplitRatios split{1.0, 0.0, 0.0};
  std::uint64_t seed = 0;

  bool operator==(const SyntheticTaskSpec&) const = default;
};

inline nlohmann::json to_json(const SyntheticTaskSpec& s) {
  return {{"n_topics", s.n_topics},
          {"n_categories", s.n_categories},
          {"steps_per_topic", {s.steps_min, s.steps_max}},
          {"actions", s.actions},
          {"objects", s.objects},
          {"state_dim", s.state_dim},
          {"noise_sigma", s.noise_sigma},
          {"ambiguity_rate", s.ambiguity_rate},
          {"scene_sigma", s.scene_sigma},
          {"skip_prob", s.skip_prob},
          {"split", {s.split.train, s.split.val, s.split.test}},
          {"seed", s.seed}};
}

inline SyntheticTaskSpec spec_from_json(const nlohmann::json& j) {
  SyntheticTaskSpec s;
  s.n_topics = j.value("n_topics", s.n_topics);
  s.n_categories = j.value("n_categories", s.n_categories);
  if (j.contains("steps_per_topic")) {
    const auto& r = j.at("steps_per_topic");
    s.steps_min = r.at(0).get<int>();
    s.steps_max = r.at(1).get<int>();
  }
  s.actions = j.value("actions", s.actions);
  s.objects = j.value("objects", s.objects);
  s.state_dim = j.value("state_dim", s.state_dim);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.ambiguity_rate = j.value("ambiguity_rate", s.ambiguity_rate);
  s.scene_sigma = j.value("scene_sigma", s.scene_sigma);
  s.skip_prob = j.value("skip_prob", s.skip_prob);
  if (j.contains("split")) {
    const auto& r = j.at("split");
    s.split = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
  }
  s.seed = j.value("seed", s.seed);
  return s;
}

inline SyntheticTaskSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  try {
    return spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

inline void validate_spec(const SyntheticTaskSpec& s) {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::kConfig, why); };
  if (s.n_topics < 1) fail("n_topics must be >= 1");
  if (s.n_categories < 1 || s.n_categories > s.n_topics) fail("need 1 <= n_categories <= n_topics");
  if (s.steps_min < 1 || s.steps_max < s.steps_min) fail("need 1 <= steps_min <= steps_max");
  if (s.state_dim < 1) fail("state_dim must be >= 1");
  if (!(s.noise_sigma >= 0.0) || !(s.scene_sigma >= 0.0)) fail("sigmas must be >= 0");
  if (!(s.ambiguity_rate >= 0.0 && s.ambiguity_rate <= 1.0)) fail("ambiguity_rate must be in [0,1]");
  if (!(s.skip_prob >= 0.0 && s.skip_prob < 1.0)) fail("skip_prob must be in [0,1)");
  if (s.actions.empty() || s.objects.empty()) fail("vocab too small: empty action or object list");
  const std::size_t n_types = s.actions.size() * s.objects.size();
  if (n_types < static_cast<std::size_t>(s.steps_max)) {
    fail("vocab too small: " + std::to_string(n_types) + " step types for " +
         std::to_string(s.steps_max) + " steps per topic");
  }
}

struct SyntheticWorld {
  std::vector<std::string> step_text;              // step type -> description
  std::vector<std::vector<double>> deltas;         // step type -> delta
  std::vector<std::vector<int>> topic_steps;       // topic -> canonical sequence
  std::vector<std::string> topic_names;
  std::vector<std::string> topic_category;
  std::vector<std::pair<int, int>> twins;          // step types sharing a delta
};

inline std::string topic_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "topic_%02d", t);
  return buf;
}

/// The fixed world (topic scripts + delta table) implied by a spec.
inline SyntheticWorld build_world(const SyntheticTaskSpec& spec) {
  validate_spec(spec);
  SyntheticWorld w;
  const int n_obj = static_cast<int>(spec.objects.size());
  const int n_types = static_cast<int>(spec.actions.size()) * n_obj;
  for (int k = 0; k < n_types; ++k) {
    w.step_text.push_back(spec.actions[k / n_obj] + " " + spec.objects[k % n_obj]);
  }
  auto rng = make_rng(spec.seed, "synth/world");
  w.deltas.assign(n_types, std::vector<double>(spec.state_dim));
  for (auto& d : w.deltas) {
    for (auto& x : d) x = normal01(rng);
  }

  for (int attempt = 0;; ++attempt) {
    if (attempt == 200) {
      throw Error(ErrorKind::kConfig,
                  "vocab too small: cannot draw distinguishable topic scripts");
    }
    w.topic_steps.clear();
    w.twins.clear();
    std::set<std::vector<int>> seen;
    bool ok = true;
    for (int t = 0; t < spec.n_topics && ok; ++t) {
      const int len = spec.steps_min +
                      static_cast<int>(uniform_index(rng, spec.steps_max - spec.steps_min + 1));
      std::vector<int> pool(n_types);
      for (int k = 0; k < n_types; ++k) pool[k] = k;
      shuffle(pool, rng);
      pool.resize(len);
      ok = seen.insert(pool).second;
      w.topic_steps.push_back(pool);
    }
    if (!ok) continue;

    std::vector<int> used;
    std::set<int> used_set;
    for (const auto& seq : w.topic_steps) {
      for (int k : seq) {
        if (used_set.insert(k).second) used.push_back(k);
      }
    }
    // Twins come from different topics so the context can tell them apart.
    const auto n_pairs = static_cast<std::size_t>(
        std::llround(spec.ambiguity_rate * static_cast<double>(used.size()) / 2.0));
    std::vector<int> topic_of(n_types, -1);
    for (int t = 0; t < spec.n_topics; ++t) {
      for (int k : w.topic_steps[t]) {
        if (topic_of[k] == -1) topic_of[k] = t;
      }
    }
    shuffle(used, rng);
    std::set<int> taken;
    // Twins preferably share neither action nor object.
    auto disjoint = [&](int a, int b) { return a / n_obj != b / n_obj && a % n_obj != b % n_obj; };
    for (std::size_t i = 0; i < used.size() && w.twins.size() < n_pairs; ++i) {
      if (taken.count(used[i])) continue;
      int pick = -1;
      for (std::size_t j = i + 1; j < used.size(); ++j) {
        if (taken.count(used[j]) || topic_of[used[j]] == topic_of[used[i]]) continue;
        if (pick == -1 || (!disjoint(used[i], pick) && disjoint(used[i], used[j]))) pick = used[j];
      }
      if (pick == -1) continue;
      w.twins.emplace_back(used[i], pick);
      taken.insert(used[i]);
      taken.insert(pick);
    }
    if (w.twins.size() < n_pairs) ok = false;
    auto deltas = w.deltas;
    for (auto [a, b] : w.twins) deltas[b] = deltas[a];
    std::set<std::vector<std::vector<double>>> sigs;
    for (const auto& seq : w.topic_steps) {
      std::vector<std::vector<double>> sig;
      for (int k : seq) sig.push_back(deltas[k]);
      ok = ok && sigs.insert(sig).second;
    }
    if (ok) {
      w.deltas = std::move(deltas);
      break;
    }
    // Fresh deltas so a retry is not stuck on the same draw.
    for (auto& d : w.deltas) {
      for (auto& x : d) x = normal01(rng);
    }
  }
  for (int t = 0; t < spec.n_topics; ++t) {
    w.topic_names.push_back(topic_name(t));
    w.topic_category.push_back("category_" + std::to_string(t % spec.n_categories));
  }
  return w;
}

struct SyntheticData {
  DatasetManifest manifest;
  EmbeddingStore store;
  std::vector<int> sample_topic;                 // ground-truth topic per sample
  std::vector<std::vector<int>> sample_steps;    // ground-truth step types per sample
};

inline SyntheticData generate(const SyntheticTaskSpec& spec, std::size_t n_samples) {
  if (n_samples < 1) throw Error(ErrorKind::kConfig, "n_samples must be >= 1");
  const auto world = build_world(spec);
  SyntheticData out{{}, EmbeddingStore(static_cast<std::size_t>(spec.state_dim)), {}, {}};
  std::vector<VTTSample> samples;
  std::vector<float> buf(spec.state_dim);
  for (std::size_t i = 0; i < n_samples; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    auto rng = make_rng(spec.seed, std::string("synth/sample/") + id);
    const int topic = static_cast<int>(i % static_cast<std::size_t>(spec.n_topics));
    std::vector<int> steps;
    for (std::size_t k = 0; k < world.topic_steps[topic].size(); ++k) {
      const bool drop = k > 0 && spec.skip_prob > 0.0 && uniform01(rng) < spec.skip_prob;
      if (!drop) steps.push_back(world.topic_steps[topic][k]);
    }
    std::vector<double> state(spec.state_dim);
    for (auto& x : state) x = spec.scene_sigma * normal01(rng);

    VTTSample s;
    s.sample_id = id;
    s.topic = world.topic_names[topic];
    s.category = world.topic_category[topic];
    auto emit_state = [&] {
      const std::string sid = std::string(id) + "#" + std::to_string(s.states.size());
      for (int d = 0; d < spec.state_dim; ++d) {
        const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * normal01(rng) : 0.0;
        buf[d] = static_cast<float>(state[d] + noise);
      }
      out.store.insert(sid, buf);
      s.states.push_back({sid, id, std::nullopt});
    };
    emit_state();
    for (int k : steps) {
      for (int d = 0; d < spec.state_dim; ++d) state[d] += world.deltas[k][d];
      emit_state();
      s.transformations.push_back(world.step_text[k]);
    }
    samples.push_back(std::move(s));
    out.sample_topic.push_back(topic);
    out.sample_steps.push_back(std::move(steps));
  }
  if (spec.split.val == 0.0 && spec.split.test == 0.0) {
    out.manifest = DatasetManifest::from_samples(std::move(samples));
  } else {
    out.manifest = assign_splits(std::move(samples), spec.split, spec.seed);
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<double>> adjacent_deltas(
    const std::vector<std::vector<double>>& states, std::size_t dim) {
  if (states.size() < 2) throw Error(ErrorKind::kDimension, "need at least 2 states");
  std::vector<std::vector<double>> d;
  for (std::size_t i = 1; i < states.size(); ++i) {
    if (states[i].size() != dim || states[i - 1].size() != dim) {
      throw Error(ErrorKind::kDimension, "state dimension does not match spec.state_dim");
    }
    std::vector<double> v(dim);
    for (std::size_t k = 0; k < dim; ++k) v[k] = states[i][k] - states[i - 1][k];
    d.push_back(std::move(v));
  }
  return d;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

}  // namespace detail

/// Maximum-likelihood descriptions under Gaussian noise: exhaustive search
/// over topic scripts and every order-preserving sub-sequence of each script.
inline std::vector<std::string> oracle_describe(const std::vector<std::vector<double>>& states,
                                                const SyntheticTaskSpec& spec) {
  const auto world = build_world(spec);
  const auto deltas = detail::adjacent_deltas(states, static_cast<std::size_t>(spec.state_dim));
  const std::size_t n = deltas.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_steps;
  for (const auto& script : world.topic_steps) {
    if (script.size() < n) continue;
    // Enumerate increasing index tuples of length n via a selection mask.
    std::vector<bool> pick(script.size(), false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n), true);
    do {
      std::vector<int> steps;
      for (std::size_t j = 0; j < script.size(); ++j) {
        if (pick[j]) steps.push_back(script[j]);
      }
      double cost = 0.0;
      for (std::size_t i = 0; i < n; ++i) cost += detail::sq_dist(deltas[i], world.deltas[steps[i]]);
      if (cost < best) {
        best = cost;
        best_steps = std::move(steps);
      }
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  if (best_steps.empty()) {
    // Longer than every script: fall back to per-pair matching.
    for (const auto& d : deltas) {
      int arg = 0;
      for (int k = 1; k < static_cast<int>(world.deltas.size()); ++k) {
        if (detail::sq_dist(d, world.deltas[k]) < detail::sq_dist(d, world.deltas[arg])) arg = k;
      }
      best_steps.push_back(arg);
    }
  }
  std::vector<std::string> out;
  for (int k : best_steps) out.push_back(world.step_text[k]);
  return out;
}

/// Context-free variant: every adjacent pair is matched to its nearest delta
/// independently (lowest step type wins ties).
inline std::vector<std::string> oracle_describe_pairwise(
    const std::vector<std::vector<double>>& states, const SyntheticTaskSpec& spec) {
  const auto world = build_world(spec);
  std::set<int> in_scripts;
  for (const auto& seq : world.topic_steps) in_scripts.insert(seq.begin(), seq.end());
  std::vector<std::string> out;
  for (const auto& d : detail::adjacent_deltas(states, static_cast<std::size_t>(spec.state_dim))) {
    int arg = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int k : in_scripts) {
      const double c = detail::sq_dist(d, world.deltas[k]);
      if (c < best) {
        best = c;
        arg = k;
      }
    }
    out.push_back(world.step_text[arg]);
  }
  return out;
}

/// Looks up a sample's raw states from the store as double vectors.
inline std::vector<std::vector<double>> sample_states(const VTTSample& s,
                                                      const EmbeddingStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& st : s.states) {
    const auto v = store.at(st.state_id);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

}  // namespace vtt::synth
