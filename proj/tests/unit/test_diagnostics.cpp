#include <gtest/gtest.h>

#include <filesystem>

#include "vtt/diagnostics.hpp"
#include "vtt/synthetic.hpp"

using namespace vtt;
using namespace vtt::diag;

namespace {

Matrix ramp(int rows, int cols) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) m.row(i).setConstant(i + 1);
  return m;
}

ModelConfig small_model(const synth::SyntheticData& d, const Vocabulary& vocab) {
  ModelConfig c;
  c.d_enc = static_cast<int>(d.store.dim());
  c.d_model = 16;
  c.n_heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.vocab_size = static_cast<int>(vocab.size());
  c.n_categories = static_cast<int>(d.manifest.categories.size());
  c.n_topics = static_cast<int>(d.manifest.topics.size());
  return c;
}

TrainConfig quick_train() {
  TrainConfig c;
  c.lr_peak = 3e-3;
  c.warmup_steps = 1;
  c.epochs = 1;
  c.batch_size = 4;
  return c;
}

synth::SyntheticData data(std::uint64_t seed = 1) {
  synth::SyntheticTaskSpec s;
  s.seed = seed;
  s.split = {0.5, 0.0, 0.5};
  return synth::generate(s, 16);
}

}  // namespace

TEST(ContextSetting, ModesBuildExpectedInputs) {
  const Matrix raw = ramp(4, 3);
  const auto full = apply_context_setting(raw, "s", {ContextMode::kFull, 0});
  ASSERT_EQ(full.size(), 1u);
  EXPECT_EQ(full[0].raw, raw);
  EXPECT_TRUE(full[0].zero_states.empty());

  const auto adj = apply_context_setting(raw, "s", {ContextMode::kAdjacentOnly, 0});
  ASSERT_EQ(adj.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(adj[i].raw, raw.middleRows(static_cast<Eigen::Index>(i), 2));
    EXPECT_EQ(adj[i].first_transformation, i);
  }

  const auto ends = apply_context_setting(raw, "s", {ContextMode::kEndpointsOnly, 0});
  EXPECT_EQ(ends[0].zero_states, (std::vector<bool>{false, true, true, false}));
  EXPECT_TRUE(apply_context_setting(ramp(2, 3), "s", {ContextMode::kEndpointsOnly, 0})[0].zero_states.empty());

  std::set<std::size_t> picked;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto a = apply_context_setting(raw, "s", {ContextMode::kMaskOneRandom, seed});
    const auto b = apply_context_setting(raw, "s", {ContextMode::kMaskOneRandom, seed});
    EXPECT_EQ(a[0].zero_states, b[0].zero_states);
    ASSERT_EQ(std::count(a[0].zero_states.begin(), a[0].zero_states.end(), true), 1);
    picked.insert(static_cast<std::size_t>(
        std::find(a[0].zero_states.begin(), a[0].zero_states.end(), true) - a[0].zero_states.begin()));
  }
  EXPECT_EQ(picked.size(), 4u);
  EXPECT_EQ(parse_context_mode("adjacent_only"), ContextMode::kAdjacentOnly);
  EXPECT_THROW(parse_context_mode("half"), Error);
  EXPECT_THROW(apply_context_setting(ramp(1, 3), "s", {}), Error);
}

TEST(ContextSetting, ZeroedStatesMaskRowsAndRecomputeDiffs) {
  const auto d = data();
  const auto vocab = build_vocab(train_descriptions(d.manifest));
  TTNetModel model(small_model(d, vocab), Toggles{}, 2);
  const Matrix raw = sample_matrix(d.manifest.samples[0], d.store);
  const auto in = model.encoder_input(raw, {}, {false, true, false, false});
  const auto n = raw.rows();
  EXPECT_EQ(in.features.row(1).norm(), 0.0);
  const auto proj = project_states(raw, model.projection_params());
  const auto types = model.type_embeddings();
  // Diff rows for transformations into and out of the zeroed state use 0 for it.
  EXPECT_LT((in.features.row(n + 1) - (-proj.row(0) + types.diff)).norm(), 1e-12);
  EXPECT_LT((in.features.row(n + 2) - (proj.row(2) + types.diff)).norm(), 1e-12);
}

TEST(ContextSuite, FullSettingEqualsPlainEvaluation) {
  const auto d = data();
  const auto vocab = build_vocab(train_descriptions(d.manifest));
  TTNetModel model(small_model(d, vocab), Toggles{}, 3);
  const auto test = d.manifest.split(Split::kTest);
  const auto sampling = SamplingConfig::greedy(6);
  metrics::Predictions plain;
  for (const auto* s : test) plain[s->sample_id] = model.generate(sample_matrix(*s, d.store), vocab, sampling, s->sample_id).texts();
  const auto suite = run_context_suite(model, vocab, test, d.store, sampling,
                                       {ContextMode::kAdjacentOnly, ContextMode::kEndpointsOnly});
  ASSERT_EQ(suite.rows.size(), 3u);
  EXPECT_EQ(suite.row(ContextMode::kFull).report.corpus, metrics::evaluate_corpus(plain, test).corpus);
  for (const auto& [_, drop] : suite.row(ContextMode::kFull).relative_drop) EXPECT_EQ(drop, 0.0);
  const auto adj = predict(model, vocab, test, d.store, sampling, {ContextMode::kAdjacentOnly, 0});
  for (const auto* s : test) EXPECT_EQ(adj.at(s->sample_id).size(), s->transformations.size());
  EXPECT_EQ(suite.to_json().size(), 3u);
}

TEST(ContextSuite, UntrainedModelsShowNoSystematicGap) {
  const auto d = data();
  const auto vocab = build_vocab(train_descriptions(d.manifest));
  const auto test = d.manifest.split(Split::kTest);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TTNetModel model(small_model(d, vocab), Toggles{}, seed);
    const auto suite = run_context_suite(model, vocab, test, d.store, SamplingConfig::greedy(6));
    const double full = suite.row(ContextMode::kFull).report.get("cider");
    const double adj = suite.row(ContextMode::kAdjacentOnly).report.get("cider");
    EXPECT_LT(std::abs(full - adj), 50.0) << seed;
  }
}

TEST(AdjacentData, SubSamplesKeepAlignment) {
  const auto d = data();
  const auto adj = make_adjacent_data(d.manifest, d.store);
  std::size_t expected = 0;
  for (const auto& s : d.manifest.samples) expected += s.transformations.size();
  ASSERT_EQ(adj.manifest.samples.size(), expected);
  const auto& first = d.manifest.samples[0];
  for (std::size_t k = 0; k < first.transformations.size(); ++k) {
    const auto& sub = adj.manifest.samples[k];
    EXPECT_EQ(sub.sample_id, first.sample_id + "@" + std::to_string(k));
    EXPECT_EQ(sub.transformations, (std::vector<std::string>{first.transformations[k]}));
    EXPECT_EQ(sub.split, first.split);
    const auto a = adj.store.at(sub.states[0].state_id);
    const auto b = d.store.at(first.states[k].state_id);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(SeenUnseen, PartitionSizesMatchSplitter) {
  auto d = data();
  const auto vocab = build_vocab(train_descriptions(d.manifest));
  TTNetModel model(small_model(d, vocab), Toggles{}, 4);
  const auto r = run_seen_unseen(model, vocab, d.manifest, d.store, Split::kTest, SamplingConfig::greedy(4));
  const auto expected = split_seen_unseen(d.manifest, Split::kTest);
  EXPECT_EQ(r.partition.seen_sample_ids, expected.seen_sample_ids);
  EXPECT_EQ(r.seen.has_value(), !expected.seen_sample_ids.empty());
  EXPECT_EQ(r.unseen.has_value(), !expected.unseen_sample_ids.empty());
  // Every synthetic test sample repeats a train script, so nothing is unseen.
  EXPECT_TRUE(expected.unseen_sample_ids.empty());
  EXPECT_EQ(r.to_json()["seen"]["count"], expected.seen_sample_ids.size());
  EXPECT_TRUE(r.to_json()["unseen"]["scores"].is_null());
}

TEST(AblationGrid, ShapesFollowAxes) {
  const TrainConfig base;
  EXPECT_EQ(component_grid(base).cells.size(), 8u);
  EXPECT_EQ(mask_ratio_grid(base).cells.size(), 7u);
  EXPECT_EQ(aux_task_grid(base).cells.size(), 4u);
  EXPECT_EQ(fusion_grid(base).cells.size(), 2u);
  EXPECT_EQ(make_grid("sample_ratio", base).cells.size(), 5u);
  EXPECT_THROW(make_grid("dropout", base), Error);
  std::set<std::string> keys;
  for (const auto& c : component_grid(base).cells) keys.insert(cell_id(c.key));
  EXPECT_EQ(keys.size(), 8u);
  const auto aux = aux_task_grid(base);
  EXPECT_FALSE(aux.cells[0].train.toggles.aux);
  EXPECT_EQ(aux.cells[1].train.beta, 0.0);
  EXPECT_EQ(aux.cells[1].train.alpha, base.alpha);
}

TEST(AblationGrid, RunsResumesAndIsolatesFailures) {
  const auto d = data();
  ModelConfig model;
  model.d_model = 16;
  model.n_heads = 2;
  model.enc_layers = 1;
  model.dec_layers = 1;
  GridData gd{&d.manifest, &d.store, model, Split::kTest, SamplingConfig::greedy(4)};
  auto base = quick_train();
  base.mtm.mask_ratio = 0.0;
  AblationGrid grid;
  grid.cells.push_back({{{"mtm", true}}, base});
  grid.cells.push_back({{{"mtm", false}}, base});
  grid.cells.back().train.toggles.mtm = false;
  grid.cells.push_back({{{"broken", true}}, base});
  grid.cells.back().train.warmup_steps = 100;

  const auto path = (std::filesystem::temp_directory_path() / "vtt_unit_grid.jsonl").string();
  std::filesystem::remove(path);
  int ran = 0;
  const auto rows = run_ablation_grid(grid, gd, path, [&](const nlohmann::json&) { ++ran; });
  EXPECT_EQ(ran, 3);
  ASSERT_EQ(rows.size(), 3u);
  ASSERT_TRUE(rows[0].contains("scores")) << rows[0].dump();
  EXPECT_EQ(rows[0]["scores"], rows[1]["scores"]);
  EXPECT_TRUE(rows[2].contains("error"));
  EXPECT_EQ(read_results(path).size(), 3u);

  ran = 0;
  const auto again = run_ablation_grid(grid, gd, path, [&](const nlohmann::json&) { ++ran; });
  EXPECT_EQ(ran, 1);  // only the failed cell is retried
  EXPECT_EQ(again.size(), 3u);
}
