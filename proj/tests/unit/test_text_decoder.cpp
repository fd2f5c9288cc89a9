#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "support/oracles.hpp"
#include "vtt/text_decoder.hpp"

using namespace vtt;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  auto rng = make_rng(seed, "test/decoder");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal01(rng);
  return m;
}

DecoderConfig small_decoder(int vocab = 12) {
  DecoderConfig c;
  c.stack = {16, 2, 2, 32, 32, 128, true};
  c.vocab_size = vocab;
  return c;
}

}  // namespace

TEST(Vocabulary, BuildsFromCorpus) {
  const auto v = build_vocab({"pour milk", "pour water"});
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.token(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.token(4), "pour");
  for (const char* w : {"milk", "water"}) EXPECT_NE(v.id(w), Vocabulary::kUnk);
  EXPECT_EQ(v.decode(v.encode("Pour water")), "pour water");

  const auto rare = build_vocab({"pour milk", "pour water"}, 2);
  EXPECT_EQ(rare.size(), 5u);
  EXPECT_EQ(rare.encode("pour milk"), (std::vector<int>{Vocabulary::kBos, rare.id("pour"), Vocabulary::kUnk,
                                                        Vocabulary::kEos}));
  EXPECT_THROW(build_vocab({}), Error);
  EXPECT_THROW(v.token(99), Error);
}

TEST(Vocabulary, DecodeStopsAtEosAndFileRoundTrips) {
  const auto v = build_vocab({"cut the egg"});
  EXPECT_EQ(v.decode({Vocabulary::kBos, v.id("cut"), Vocabulary::kPad, v.id("egg"), Vocabulary::kEos, v.id("the")}),
            "cut egg");
  const auto path = (std::filesystem::temp_directory_path() / "vtt_unit_vocab.txt").string();
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
  {
    std::ofstream out(path);
    out << "cut\negg\n";
  }
  EXPECT_THROW(Vocabulary::load(path), Error);
}

TEST(NllLoss, MatchesLogSoftmaxOracle) {
  const Matrix logits = random_matrix(3, 7, 1);
  const std::vector<int> targets{4, 0, 6};
  double sum = 0;
  int count = 0;
  for (int i = 0; i < 3; ++i) {
    if (targets[i] == Vocabulary::kPad) continue;
    double z = 0;
    for (int j = 0; j < 7; ++j) z += std::exp(logits(i, j));
    sum -= logits(i, targets[i]) - std::log(z);
    ++count;
  }
  EXPECT_NEAR(nll_loss(logits, targets), sum / count, 1e-9);
  EXPECT_NEAR(nll_loss(logits, targets, Reduction::kSum), sum, 1e-9);
}

TEST(NllLoss, DegenerateDistributions) {
  EXPECT_NEAR(nll_loss(Matrix::Zero(5, 16), {4, 5, 6, 7, 0}), std::log(16.0), 1e-12);
  Matrix sharp = Matrix::Constant(2, 6, -1e4);
  sharp(0, 4) = sharp(1, 2) = 0;
  EXPECT_NEAR(nll_loss(sharp, {4, 2}), 0.0, 1e-12);
}

TEST(Nucleus, SupportMatchesOracle) {
  const Eigen::RowVectorXd p = (Eigen::RowVectorXd(4) << 0.5, 0.3, 0.15, 0.05).finished();
  const auto s = nucleus_support(p, 4, 0.9);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_NEAR(s[0].prob, 0.5 / 0.95, 1e-12);
  EXPECT_NEAR(s[1].prob, 0.3 / 0.95, 1e-12);
  EXPECT_NEAR(s[2].prob, 0.15 / 0.95, 1e-12);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 10);
    std::vector<double> raw(static_cast<std::size_t>(n));
    double z = 0;
    for (auto& x : raw) z += (x = std::uniform_real_distribution<double>(0.01, 1.0)(rng));
    for (auto& x : raw) x /= z;
    const int k = 1 + static_cast<int>(rng() % n);
    const double top_p = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const auto expected = oracle::nucleus(raw, k, top_p);
    const auto got = nucleus_support(Eigen::Map<const Eigen::RowVectorXd>(raw.data(), n), k, top_p);
    ASSERT_EQ(got.size(), expected.size());
    for (const auto& c : got) ASSERT_NEAR(c.prob, expected.at(c.id), 1e-12);
  }
}

TEST(Nucleus, EmpiricalFrequenciesMatchRenormalizedDistribution) {
  const Eigen::RowVectorXd p = (Eigen::RowVectorXd(4) << 0.5, 0.3, 0.15, 0.05).finished();
  auto rng = make_rng(11, "test/nucleus");
  std::array<int, 4> hits{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++hits[static_cast<std::size_t>(sample_token(p, 4, 0.9, rng))];
  EXPECT_EQ(hits[3], 0);
  EXPECT_NEAR(hits[0] / double(draws), 0.526, 0.01);
  EXPECT_NEAR(hits[1] / double(draws), 0.316, 0.01);
  EXPECT_NEAR(hits[2] / double(draws), 0.158, 0.01);
  const Eigen::RowVectorXd one = (Eigen::RowVectorXd(3) << 0.0, 1.0, 0.0).finished();
  for (int i = 0; i < 50; ++i) ASSERT_EQ(sample_token(one, 100, 0.2, rng), 1);
}

TEST(TextDecoder, RepIsAddedToEveryPosition) {
  nn::ParamStore ps(1);
  TextDecoder dec(ps, small_decoder());
  const std::vector<int> prefix{Vocabulary::kBos, 5, 7};
  const Matrix zero = Matrix::Zero(1, 16);
  const auto logits = dec.forward(nullptr, ag::constant(zero), prefix)->value;
  EXPECT_EQ(logits.rows(), 3);
  EXPECT_EQ(logits.cols(), 12);
  // rep = 0 equals a rep-free decoder: forward on the embedding sum alone.
  const auto a = dec.decode_step(zero, prefix);
  EXPECT_LT((a - logits.row(2)).cwiseAbs().maxCoeff(), 1e-12);
  const auto b = dec.decode_step(random_matrix(1, 16, 2), prefix);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(dec.decode_step(zero, {5}), Error);
  EXPECT_THROW(dec.forward(nullptr, ag::constant(zero), {1, 40}), Error);
}

TEST(TextDecoder, LogitsAreCausal) {
  nn::ParamStore ps(2);
  TextDecoder dec(ps, small_decoder());
  const Matrix rep = random_matrix(1, 16, 3);
  const auto a = dec.forward(nullptr, ag::constant(rep), {1, 4, 5, 6})->value;
  const auto b = dec.forward(nullptr, ag::constant(rep), {1, 4, 9, 10})->value;
  EXPECT_EQ(a.topRows(2), b.topRows(2));
  EXPECT_NE(a.row(2), b.row(2));
}

TEST(TextDecoder, GreedyIsArgmaxAndLogprobsAreConsistent) {
  nn::ParamStore ps(3);
  TextDecoder dec(ps, small_decoder());
  const Matrix rep = random_matrix(1, 16, 4);
  auto rng = make_rng(1, "unused");
  const auto d = dec.sample(rep, SamplingConfig::greedy(6), rng);
  std::vector<int> prefix{Vocabulary::kBos};
  ASSERT_FALSE(d.token_ids.empty());
  for (std::size_t i = 0; i < d.token_ids.size(); ++i) {
    const auto logits = dec.decode_step(rep, prefix);
    Eigen::Index arg;
    logits.maxCoeff(&arg);
    EXPECT_EQ(d.token_ids[i], arg);
    EXPECT_NEAR(d.logprobs[i], std::log(softmax(logits)(arg)), 1e-12);
    prefix.push_back(d.token_ids[i]);
  }
  EXPECT_LE(d.token_ids.size(), 6u);
}

TEST(TextDecoder, SamplingIsDeterministicPerSeed) {
  nn::ParamStore ps(4);
  TextDecoder dec(ps, small_decoder());
  ContextOutput ctx;
  ctx.transformation_reps = random_matrix(3, 16, 5);
  const auto vocab = Vocabulary({"a", "b", "c", "d", "e", "f", "g", "h"});
  SamplingConfig cfg;
  cfg.seed = 9;
  const auto a = generate_sample(ctx, dec, vocab, cfg, "s");
  const auto b = generate_sample(ctx, dec, vocab, cfg, "s");
  ASSERT_EQ(a.descriptions.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.descriptions[i].token_ids, b.descriptions[i].token_ids);
  ctx.transformation_reps = random_matrix(1, 16, 6);
  EXPECT_EQ(generate_sample(ctx, dec, vocab, cfg).descriptions.size(), 1u);
  cfg.top_p = 0.0;
  EXPECT_THROW(generate_sample(ctx, dec, vocab, cfg), Error);
}

TEST(TextDecoder, SequenceNllMatchesTeacherForcedLoss) {
  nn::ParamStore ps(5);
  TextDecoder dec(ps, small_decoder());
  const Matrix rep = random_matrix(1, 16, 7);
  const std::vector<int> encoded{1, 5, 6, 7, 2, 0, 0};
  const double got = dec.sequence_nll(nullptr, ag::constant(rep), encoded)->value(0, 0);
  const auto logits = dec.forward(nullptr, ag::constant(rep), {1, 5, 6, 7, 2, 0})->value;
  EXPECT_NEAR(got, nll_loss(logits, {5, 6, 7, 2, 0, 0}, Reduction::kSum), 1e-10);
}
