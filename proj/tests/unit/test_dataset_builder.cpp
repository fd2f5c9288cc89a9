#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"
#include "vtt/dataset_builder.hpp"

using namespace vtt;

namespace {

const std::string kData = VTT_TEST_DATA_DIR;

SegmentAnnotation random_annotation(std::mt19937_64& rng, const std::string& id) {
  std::uniform_int_distribution<int> n_seg(1, 8);
  std::uniform_real_distribution<double> len(0.1, 20.0), gap(0.0, 5.0);
  SegmentAnnotation a{id, "cat", "topic", {}};
  double t = gap(rng);
  for (int k = 0, n = n_seg(rng); k < n; ++k) {
    const double start = t;
    const double end = start + len(rng);
    a.segments.push_back({start, end, "label " + std::to_string(k)});
    t = end + (rng() % 3 == 0 ? 0.0 : gap(rng));
  }
  return a;
}

VTTSample sample_with(const std::string& id, std::vector<std::string> steps, Split split, const std::string& topic) {
  VTTSample s;
  s.sample_id = id;
  for (std::size_t i = 0; i <= steps.size(); ++i) s.states.push_back({id + "#" + std::to_string(i), id, 0.0});
  s.transformations = std::move(steps);
  s.category = "c";
  s.topic = topic;
  s.split = split;
  return s;
}

}  // namespace

TEST(DatasetBuilder, GoldenFixtureMatchesHandDerivedStates) {
  const auto annotations = read_annotations(kData + "/golden_annotations.jsonl");
  ASSERT_EQ(annotations.size(), 10u);
  std::ifstream in(kData + "/golden_expected.json");
  const auto expected = nlohmann::json::parse(in);
  for (const auto& s : build_samples(annotations)) {
    SCOPED_TRACE(s.sample_id);
    const auto& e = expected.at(s.sample_id);
    const auto ts = e.at("timestamps").get<std::vector<double>>();
    ASSERT_EQ(s.states.size(), ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
      EXPECT_EQ(*s.states[i].timestamp_sec, ts[i]);
      EXPECT_EQ(s.states[i].state_id, s.sample_id + "#" + std::to_string(i));
      EXPECT_EQ(s.states[i].source, s.sample_id);
    }
    EXPECT_EQ(s.transformations, e.at("transformations").get<std::vector<std::string>>());
  }
}

TEST(DatasetBuilder, RandomAnnotationsKeepStateTransformationAlignment) {
  std::mt19937_64 rng(11);
  for (int c = 0; c < 1000; ++c) {
    const auto a = random_annotation(rng, "r" + std::to_string(c));
    const auto s = build_sample(a);
    ASSERT_EQ(s.states.size(), s.transformations.size() + 1);
    ASSERT_EQ(s.transformations.size(), a.segments.size());
    ASSERT_EQ(*s.states.front().timestamp_sec, a.segments.front().start_sec);
    for (std::size_t k = 0; k < a.segments.size(); ++k) {
      ASSERT_EQ(*s.states[k + 1].timestamp_sec, a.segments[k].end_sec);
      ASSERT_LT(*s.states[k].timestamp_sec, *s.states[k + 1].timestamp_sec);
    }
    ASSERT_NO_THROW(validate_sample(s));
  }
}

TEST(DatasetBuilder, InvalidSegmentsNameTheAnnotation) {
  auto expect_fail = [](SegmentAnnotation a, const std::string& needle) {
    try {
      build_sample(a);
      FAIL() << "expected failure for " << needle;
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("'" + a.video_id + "'"), std::string::npos) << e.what();
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_fail({"ovl", "c", "t", {{0, 5, "a"}, {4, 8, "b"}}}, "overlap");
  expect_fail({"uns", "c", "t", {{5, 6, "a"}, {1, 2, "b"}}}, "sorted");
  expect_fail({"neg", "c", "t", {{-1, 2, "a"}}}, "start < end");
  expect_fail({"flat", "c", "t", {{2, 2, "a"}}}, "start < end");
  expect_fail({"lbl", "c", "t", {{0, 1, "  "}}}, "empty label");
  expect_fail({"none", "c", "t", {}}, "no segments");
}

TEST(DatasetBuilder, MalformedAnnotationLineIsReportedWithLineNumber) {
  const auto path = std::filesystem::temp_directory_path() / "vtt_unit_bad_ann.jsonl";
  {
    std::ofstream out(path);
    out << R"({"video_id":"a","category":"c","topic":"t","segments":[[0,1,"x"]]})" << "\n";
    out << R"({"video_id":"b","category":"c","topic":"t","segments":[[0,1]]})" << "\n";
  }
  try {
    read_annotations(path.string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(DatasetBuilder, ApportionUsesLargestRemainder) {
  EXPECT_EQ(apportion(10, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{8, 1, 1}));
  EXPECT_EQ(apportion(7, {0.5, 0.25, 0.25}), (std::array<std::size_t, 3>{3, 2, 2}));
  for (std::size_t n = 0; n < 200; ++n) {
    const auto c = apportion(n, {});
    ASSERT_EQ(c[0] + c[1] + c[2], n);
  }
}

TEST(DatasetBuilder, AssignSplitsIsDeterministicAndStratified) {
  std::vector<VTTSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(sample_with("a" + std::to_string(i), {"x"}, Split::kTrain, "A"));
  for (int i = 0; i < 20; ++i) samples.push_back(sample_with("b" + std::to_string(i), {"y"}, Split::kTrain, "B"));
  const auto m1 = assign_splits(samples, {0.8, 0.1, 0.1}, 0);
  const auto m2 = assign_splits(samples, {0.8, 0.1, 0.1}, 0);
  EXPECT_EQ(m1, m2);
  std::map<std::string, std::array<int, 3>> per_topic;
  for (const auto& s : m1.samples) ++per_topic[s.topic][static_cast<int>(s.split)];
  EXPECT_EQ(per_topic["A"], (std::array<int, 3>{8, 1, 1}));
  EXPECT_EQ(per_topic["B"], (std::array<int, 3>{16, 2, 2}));
  const auto m3 = assign_splits(samples, {0.8, 0.1, 0.1}, 1);
  EXPECT_FALSE(m1 == m3);
  EXPECT_THROW(assign_splits(samples, {0.5, 0.1, 0.1}, 0), Error);
}

TEST(DatasetBuilder, TinyTopicGoesToTrainWithWarning) {
  std::vector<VTTSample> samples{sample_with("a", {"x"}, Split::kTest, "A"), sample_with("b", {"x"}, Split::kTest, "A")};
  std::vector<std::string> warnings;
  const auto m = assign_splits(samples, {0.8, 0.1, 0.1}, 0, &warnings);
  EXPECT_EQ(m.split_size(Split::kTrain), 2u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("'A'"), std::string::npos);
}

TEST(DatasetBuilder, StatsCountCorpus) {
  const auto m = DatasetManifest::from_samples(
      {sample_with("a", {"Cut the egg", "boil water"}, Split::kTrain, "A"),
       sample_with("b", {"cut the  egg", "stir"}, Split::kTest, "B")});
  const auto st = compute_stats(m);
  EXPECT_EQ(st.n_samples, 2u);
  EXPECT_EQ(st.n_states, 6u);
  EXPECT_EQ(st.n_transformations, 4u);
  EXPECT_EQ(st.n_unique_transformations, 3u);
  EXPECT_EQ(st.n_topics, 2u);
  EXPECT_EQ(st.word_freq.at("cut"), 2u);
  EXPECT_EQ(st.sentence_length_hist.at(3), 2u);
  EXPECT_EQ(compute_stats(m, Split::kTest).n_samples, 1u);
  const auto j = st.to_json();
  EXPECT_EQ(j["unique_words"], 6);
}

TEST(SeenUnseen, MatchesSetMembershipOracle) {
  std::mt19937_64 rng(5);
  const std::vector<std::string> words{"cut egg", "boil water", "Boil  water", "stir", "peel orange"};
  for (int d = 0; d < 100; ++d) {
    std::vector<VTTSample> samples;
    const int n = 5 + static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> steps(1 + rng() % 3);
      for (auto& s : steps) s = words[rng() % words.size()];
      const Split split = rng() % 2 ? Split::kTrain : (rng() % 2 ? Split::kTest : Split::kVal);
      samples.push_back(sample_with("s" + std::to_string(i), steps, split, "T"));
    }
    samples[0].split = Split::kTrain;
    const auto m = DatasetManifest::from_samples(samples);
    const auto got = split_seen_unseen(m, Split::kTest);
    const auto [seen, unseen] = oracle::seen_unseen<VTTSample>(
        m.samples, [](const VTTSample& s) { return s.split == Split::kTrain; },
        [](const VTTSample& s) { return s.split == Split::kTest; },
        [](const std::string& t) { return text::normalize(t); });
    ASSERT_EQ(got.seen_sample_ids, seen);
    ASSERT_EQ(got.unseen_sample_ids, unseen);
    std::set<std::string> all_test;
    for (const auto* s : m.split(Split::kTest)) all_test.insert(s->sample_id);
    std::set<std::string> both = got.seen_sample_ids;
    both.insert(got.unseen_sample_ids.begin(), got.unseen_sample_ids.end());
    ASSERT_EQ(both, all_test);
    ASSERT_EQ(both.size(), got.seen_sample_ids.size() + got.unseen_sample_ids.size());
  }
}

TEST(SeenUnseen, DegenerateCases) {
  auto m = DatasetManifest::from_samples({sample_with("a", {"x", "y"}, Split::kTrain, "T"),
                                          sample_with("b", {"X", "y"}, Split::kTest, "T")});
  const auto r = split_seen_unseen(m, Split::kTest);
  EXPECT_EQ(r.seen_sample_ids, (std::set<std::string>{"b"}));
  EXPECT_TRUE(r.unseen_sample_ids.empty());
  // Order matters: the same steps permuted is an unseen combination.
  m = DatasetManifest::from_samples({sample_with("a", {"x", "y"}, Split::kTrain, "T"),
                                     sample_with("b", {"y", "x"}, Split::kTest, "T")});
  EXPECT_EQ(split_seen_unseen(m, Split::kTest).unseen_sample_ids, (std::set<std::string>{"b"}));
  m = DatasetManifest::from_samples({sample_with("b", {"y"}, Split::kTest, "T")});
  EXPECT_THROW(split_seen_unseen(m, Split::kTest), Error);
}
