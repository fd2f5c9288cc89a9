#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtt/common.hpp"
#include "vtt/core.hpp"
#include "vtt/text.hpp"

namespace vtt {

struct Segment {
  double start_sec = 0.0;
  double end_sec = 0.0;
  std::string label;
};

struct SegmentAnnotation {
  std::string video_id;
  std::string category;
  std::string topic;
  std::vector<Segment> segments;
};

inline void validate_annotation(const SegmentAnnotation& a) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::kInvariant, "annotation '" + a.video_id + "': " + why);
  };
  if (a.video_id.empty()) fail("empty video_id");
  if (a.segments.empty()) fail("no segments");
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    const auto& s = a.segments[i];
    if (!(s.start_sec >= 0.0) || !(s.start_sec < s.end_sec)) {
      fail("segment " + std::to_string(i) + " needs 0 <= start < end");
    }
    if (text::trim(s.label).empty()) fail("segment " + std::to_string(i) + " has empty label");
    if (i > 0) {
      const auto& prev = a.segments[i - 1];
      if (s.start_sec < prev.start_sec) fail("segments not sorted by start time");
      if (s.start_sec < prev.end_sec) {
        fail("segments " + std::to_string(i - 1) + " and " + std::to_string(i) + " overlap");
      }
    }
  }
}

/// Reads annotation JSONL: {"video_id","category","topic","segments":[[s,e,label],...]}.
inline std::vector<SegmentAnnotation> read_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::vector<SegmentAnnotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      SegmentAnnotation a;
      a.video_id = j.at("video_id").get<std::string>();
      a.category = j.at("category").get<std::string>();
      a.topic = j.at("topic").get<std::string>();
      for (const auto& seg : j.at("segments")) {
        if (!seg.is_array() || seg.size() != 3) {
          throw Error(ErrorKind::kParse, "segment must be [start_sec, end_sec, label]");
        }
        a.segments.push_back({seg[0].get<double>(), seg[1].get<double>(),
                              seg[2].get<std::string>()});
      }
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string state_id_for(const std::string& video_id, std::size_t k) {
  return video_id + "#" + std::to_string(k);
}

/// States are the start of the first segment followed by the end of every
/// segment; transformations are the segment labels in order.
inline VTTSample build_sample(const SegmentAnnotation& a) {
  validate_annotation(a);
  VTTSample s;
  s.sample_id = a.video_id;
  s.category = a.category;
  s.topic = a.topic;
  s.states.push_back({state_id_for(a.video_id, 0), a.video_id, a.segments.front().start_sec});
  for (std::size_t k = 0; k < a.segments.size(); ++k) {
    s.states.push_back({state_id_for(a.video_id, k + 1), a.video_id, a.segments[k].end_sec});
    s.transformations.push_back(text::trim(a.segments[k].label));
  }
  return s;
}

inline std::vector<VTTSample> build_samples(const std::vector<SegmentAnnotation>& annotations) {
  std::vector<VTTSample> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) out.push_back(build_sample(a));
  return out;
}

struct DatasetStats {
  std::size_t n_samples = 0;
  std::size_t n_states = 0;
  std::size_t n_transformations = 0;
  std::size_t n_unique_transformations = 0;
  std::size_t n_categories = 0;
  std::size_t n_topics = 0;
  std::map<std::string, std::size_t> category_counts;
  std::map<std::string, std::size_t> topic_counts;
  std::map<std::size_t, std::size_t> transformation_length_hist;  // N -> samples
  std::map<std::size_t, std::size_t> sentence_length_hist;        // words -> sentences
  std::map<std::string, std::size_t> word_freq;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["samples"] = n_samples;
    j["states"] = n_states;
    j["transformations"] = n_transformations;
    j["unique_transformations"] = n_unique_transformations;
    j["categories"] = n_categories;
    j["topics"] = n_topics;
    j["unique_words"] = word_freq.size();
    j["category_counts"] = category_counts;
    j["topic_counts"] = topic_counts;
    nlohmann::json tl, sl;
    for (auto [k, v] : transformation_length_hist) tl[std::to_string(k)] = v;
    for (auto [k, v] : sentence_length_hist) sl[std::to_string(k)] = v;
    j["transformation_length_hist"] = tl;
    j["sentence_length_hist"] = sl;
    return j;
  }
};

inline DatasetStats compute_stats(const DatasetManifest& manifest,
                                  std::optional<Split> which = std::nullopt) {
  DatasetStats st;
  std::set<std::string> unique;
  for (const auto& s : manifest.samples) {
    if (which && s.split != *which) continue;
    ++st.n_samples;
    st.n_states += s.states.size();
    st.n_transformations += s.transformations.size();
    ++st.category_counts[s.category];
    ++st.topic_counts[s.topic];
    ++st.transformation_length_hist[s.transformations.size()];
    for (const auto& t : s.transformations) {
      unique.insert(text::normalize(t));
      const auto words = text::tokenize(t);
      ++st.sentence_length_hist[words.size()];
      for (const auto& w : words) ++st.word_freq[w];
    }
  }
  st.n_unique_transformations = unique.size();
  st.n_categories = st.category_counts.size();
  st.n_topics = st.topic_counts.size();
  return st;
}

struct SplitRatios {
  double train = 0.794;
  double val = 0.100;
  double test = 0.106;

  bool operator==(const SplitRatios&) const = default;
};

/// Largest-remainder apportionment of n items over the three ratios.
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> ratios{r.train, r.val, r.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++counts[order[k]];
  return counts;
}

/// Topic-stratified random split. Each topic is shuffled with its own stream
/// derived from (seed, topic), so adding a topic never reshuffles the others.
inline DatasetManifest assign_splits(std::vector<VTTSample> samples, const SplitRatios& ratios,
                                     std::uint64_t seed,
                                     std::vector<std::string>* warnings = nullptr) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (!(ratios.train > 0 && ratios.val >= 0 && ratios.test >= 0) || std::abs(sum - 1.0) > 1e-6) {
    throw Error(ErrorKind::kConfig, "split ratios must be non-negative (train > 0) and sum to 1");
  }
  std::map<std::string, std::vector<std::size_t>> by_topic;
  for (std::size_t i = 0; i < samples.size(); ++i) by_topic[samples[i].topic].push_back(i);
  for (auto& [topic, idx] : by_topic) {
    if (idx.size() < 3) {
      for (auto i : idx) samples[i].split = Split::kTrain;
      const std::string msg = "topic '" + topic + "' has " + std::to_string(idx.size()) +
                              " samples; all assigned to train";
      if (warnings) warnings->push_back(msg);
      std::clog << "warning: " << msg << '\n';
      continue;
    }
    auto rng = make_rng(seed, "split/" + topic);
    shuffle(idx, rng);
    const auto counts = apportion(idx.size(), ratios);
    std::size_t k = 0;
    for (std::size_t c = 0; c < counts[0]; ++c) samples[idx[k++]].split = Split::kTrain;
    for (std::size_t c = 0; c < counts[1]; ++c) samples[idx[k++]].split = Split::kVal;
    for (std::size_t c = 0; c < counts[2]; ++c) samples[idx[k++]].split = Split::kTest;
  }
  return DatasetManifest::from_samples(std::move(samples));
}

struct CombinationSplit {
  std::set<std::string> seen_sample_ids;
  std::set<std::string> unseen_sample_ids;
};

inline std::vector<std::string> combination_key(const VTTSample& s) {
  std::vector<std::string> key;
  key.reserve(s.transformations.size());
  for (const auto& t : s.transformations) key.push_back(text::normalize(t));
  return key;
}

inline CombinationSplit split_seen_unseen(const DatasetManifest& manifest, Split eval_split) {
  std::set<std::vector<std::string>> train_keys;
  for (const auto& s : manifest.samples) {
    if (s.split == Split::kTrain) train_keys.insert(combination_key(s));
  }
  if (train_keys.empty()) throw Error(ErrorKind::kInvariant, "train split is empty");
  CombinationSplit out;
  for (const auto& s : manifest.samples) {
    if (s.split != eval_split) continue;
    (train_keys.count(combination_key(s)) ? out.seen_sample_ids : out.unseen_sample_ids)
        .insert(s.sample_id);
  }
  return out;
}

}  // namespace vtt
