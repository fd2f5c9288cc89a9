#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtt/common.hpp"
#include "vtt/text.hpp"

namespace vtt {

enum class Split { kTrain, kVal, kTest };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw Error(ErrorKind::kParse, "unknown split '" + std::string(s) + "'");
}

struct StateRef {
  std::string state_id;
  std::string source;
  std::optional<double> timestamp_sec;

  bool operator==(const StateRef&) const = default;
};

/// One task instance: N+1 states and the N transformations between them.
struct VTTSample {
  std::string sample_id;
  std::vector<StateRef> states;
  std::vector<std::string> transformations;
  std::string category;
  std::string topic;
  Split split = Split::kTrain;

  std::size_t num_transformations() const { return transformations.size(); }
  bool operator==(const VTTSample&) const = default;
};

/// Throws kInvariant naming the sample and the violated rule.
inline void validate_sample(const VTTSample& s) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::kInvariant, "sample '" + s.sample_id + "': " + why);
  };
  if (s.sample_id.empty()) fail("empty sample_id");
  if (s.transformations.empty()) fail("at least one transformation required");
  if (s.states.size() != s.transformations.size() + 1) {
    fail("len(states) must equal len(transformations) + 1 (got " +
         std::to_string(s.states.size()) + " states, " +
         std::to_string(s.transformations.size()) + " transformations)");
  }
  for (const auto& t : s.transformations) {
    if (text::trim(t).empty()) fail("empty transformation description");
  }
  for (const auto& st : s.states) {
    if (st.state_id.empty()) fail("empty state_id");
    if (st.timestamp_sec && !(*st.timestamp_sec >= 0.0)) {
      fail("negative or non-finite timestamp for state '" + st.state_id + "'");
    }
  }
  if (s.category.empty()) fail("empty category");
  if (s.topic.empty()) fail("empty topic");
}

struct DatasetManifest {
  std::vector<VTTSample> samples;
  std::vector<std::string> categories;  // sorted
  std::vector<std::string> topics;      // sorted

  /// Builds the closed label sets from the samples (lexicographic order).
  static DatasetManifest from_samples(std::vector<VTTSample> samples) {
    DatasetManifest m;
    std::set<std::string> cats, tops;
    for (const auto& s : samples) {
      cats.insert(s.category);
      tops.insert(s.topic);
    }
    m.samples = std::move(samples);
    m.categories.assign(cats.begin(), cats.end());
    m.topics.assign(tops.begin(), tops.end());
    return m;
  }

  std::size_t category_index(const std::string& label) const {
    return label_index(categories, label, "category");
  }
  std::size_t topic_index(const std::string& label) const {
    return label_index(topics, label, "topic");
  }

  std::vector<const VTTSample*> split(Split which) const {
    std::vector<const VTTSample*> out;
    for (const auto& s : samples) {
      if (s.split == which) out.push_back(&s);
    }
    return out;
  }

  std::size_t split_size(Split which) const {
    return static_cast<std::size_t>(std::count_if(
        samples.begin(), samples.end(),
        [&](const VTTSample& s) { return s.split == which; }));
  }

  /// Full validation: per-sample invariants, unique ids, closed label sets.
  void validate() const {
    std::set<std::string> sample_ids, state_ids;
    for (const auto& s : samples) {
      validate_sample(s);
      if (!sample_ids.insert(s.sample_id).second) {
        throw Error(ErrorKind::kInvariant,
                    "duplicate sample_id '" + s.sample_id + "'");
      }
      for (const auto& st : s.states) {
        if (!state_ids.insert(st.state_id).second) {
          throw Error(ErrorKind::kInvariant, "sample '" + s.sample_id +
                                                 "': duplicate state_id '" +
                                                 st.state_id + "'");
        }
      }
      category_index(s.category);
      topic_index(s.topic);
    }
    if (!std::is_sorted(categories.begin(), categories.end()) ||
        !std::is_sorted(topics.begin(), topics.end())) {
      throw Error(ErrorKind::kInvariant, "label lists must be sorted");
    }
  }

  bool operator==(const DatasetManifest&) const = default;

 private:
  static std::size_t label_index(const std::vector<std::string>& labels,
                                 const std::string& label, const char* what) {
    auto it = std::lower_bound(labels.begin(), labels.end(), label);
    if (it == labels.end() || *it != label) {
      throw Error(ErrorKind::kInvariant,
                  std::string(what) + " '" + label + "' not in label set");
    }
    return static_cast<std::size_t>(it - labels.begin());
  }
};

}  // namespace vtt
