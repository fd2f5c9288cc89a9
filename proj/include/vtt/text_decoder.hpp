#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtt/autograd.hpp"
#include "vtt/common.hpp"
#include "vtt/context_encoder.hpp"
#include "vtt/nn.hpp"
#include "vtt/text.hpp"

namespace vtt {

/// Word-level vocabulary with fixed special ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static inline const std::vector<std::string> kSpecials{"<pad>", "<bos>", "<eos>", "<unk>"};

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Content tokens only; specials are prepended.
  explicit Vocabulary(const std::vector<std::string>& content) {
    tokens_ = kSpecials;
    tokens_.insert(tokens_.end(), content.begin(), content.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
        throw Error(ErrorKind::kInvariant, "duplicate vocabulary token '" + tokens_[i] + "'");
      }
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw Error(ErrorKind::kDimension, "unknown token id " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }
  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  /// [BOS, w..., EOS]
  std::vector<int> encode(std::string_view sentence) const {
    std::vector<int> ids{kBos};
    for (const auto& w : text::tokenize(sentence)) ids.push_back(id(w));
    ids.push_back(kEos);
    return ids;
  }

  /// Content tokens up to the first EOS; BOS and PAD are skipped.
  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int t : ids) {
      if (t == kEos) break;
      if (t == kBos || t == kPad) continue;
      words.push_back(token(t));
    }
    return text::join(words);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
    std::vector<std::string> all;
    std::string line;
    while (std::getline(in, line)) all.push_back(line);
    if (all.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), all.begin())) {
      throw Error(ErrorKind::kParse, "'" + path + "': vocabulary must start with the special tokens");
    }
    return Vocabulary(std::vector<std::string>(all.begin() + 4, all.end()));
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Content tokens ordered by (frequency desc, lexicographic); tokens rarer
/// than min_freq are left out and encode as UNK.
inline Vocabulary build_vocab(const std::vector<std::string>& corpus, int min_freq = 1) {
  if (corpus.empty()) throw Error(ErrorKind::kConfig, "cannot build a vocabulary from an empty corpus");
  std::map<std::string, int> freq;
  for (const auto& s : corpus) {
    for (const auto& w : text::tokenize(s)) ++freq[w];
  }
  std::vector<std::pair<std::string, int>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> content;
  for (const auto& [w, f] : items) {
    if (f >= min_freq && std::find(Vocabulary::kSpecials.begin(), Vocabulary::kSpecials.end(), w) ==
                             Vocabulary::kSpecials.end()) {
      content.push_back(w);
    }
  }
  return Vocabulary(content);
}

enum class Reduction { kMean, kSum };

/// Teacher-forced negative log-likelihood. PAD targets are excluded; kMean
/// divides by the number of non-PAD targets.
inline double nll_loss(const Matrix& logits, const std::vector<int>& targets, Reduction r = Reduction::kMean) {
  std::vector<int> t = targets;
  std::size_t count = 0;
  for (auto& id : t) {
    if (id == Vocabulary::kPad) {
      id = -1;
    } else {
      ++count;
    }
  }
  const double total = ag::nll_sum(nullptr, ag::constant(logits), t)->value(0, 0);
  if (r == Reduction::kSum) return total;
  return count ? total / static_cast<double>(count) : 0.0;
}

struct SamplingConfig {
  int top_k = 100;
  double top_p = 0.9;
  int max_len = 16;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (top_k < 1) throw Error(ErrorKind::kConfig, "top_k must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::kConfig, "top_p must be in (0, 1]");
    if (!(temperature > 0.0)) throw Error(ErrorKind::kConfig, "temperature must be > 0");
    if (max_len < 1) throw Error(ErrorKind::kConfig, "max_len must be >= 1");
  }

  static SamplingConfig greedy(int max_len = 16) { return {1, 1.0, max_len, 1.0, 0}; }
};

struct Candidate {
  int id;
  double prob;
};

/// Top-k then top-p restriction of a probability vector, renormalized. Ties
/// in probability are broken by lower token id.
inline std::vector<Candidate> nucleus_support(const Eigen::RowVectorXd& probs, int top_k, double top_p) {
  std::vector<Candidate> c;
  c.reserve(static_cast<std::size_t>(probs.size()));
  for (Eigen::Index i = 0; i < probs.size(); ++i) c.push_back({static_cast<int>(i), probs(i)});
  std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) { return a.prob > b.prob; });
  c.resize(std::min<std::size_t>(c.size(), static_cast<std::size_t>(top_k)));
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < c.size()) {
    cum += c[keep].prob;
    ++keep;
    if (cum >= top_p) break;
  }
  c.resize(keep);
  double z = 0.0;
  for (const auto& x : c) z += x.prob;
  for (auto& x : c) x.prob /= z;
  return c;
}

inline Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& logits, double temperature = 1.0) {
  const Eigen::RowVectorXd s = logits / temperature;
  const Eigen::RowVectorXd e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}

inline int sample_token(const Eigen::RowVectorXd& probs, int top_k, double top_p, Rng& rng) {
  const auto support = nucleus_support(probs, top_k, top_p);
  if (support.size() == 1) return support.front().id;
  const double u = uniform01(rng);
  double cum = 0.0;
  for (const auto& c : support) {
    cum += c.prob;
    if (u < cum) return c.id;
  }
  return support.back().id;
}

struct DecoderConfig {
  nn::StackConfig stack;
  int vocab_size = 4;
};

struct Description {
  std::vector<int> token_ids;   // generated ids, EOS included when produced
  std::vector<double> logprobs;  // model log-probability of each generated id
  std::string text;
};

struct GenerationResult {
  std::string sample_id;
  std::vector<Description> descriptions;

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    for (const auto& d : descriptions) out.push_back(d.text);
    return out;
  }
};

/// Shared causal decoder. The transformation representation is added to the
/// token embedding at every position; there is no cross-attention.
class TextDecoder {
 public:
  TextDecoder() = default;
  TextDecoder(nn::ParamStore& ps, const DecoderConfig& cfg) : cfg_(cfg) {
    cfg_.stack.causal = true;
    embedding_ = ps.normal("decoder.token_embedding", cfg.vocab_size, cfg.stack.d_model, 0.02, true);
    stack_ = nn::TransformerStack(ps, "decoder", cfg_.stack);
    out_ = nn::Linear(ps, "decoder.output", cfg.stack.d_model, cfg.vocab_size);
  }

  const DecoderConfig& config() const { return cfg_; }

  /// rep: 1 x d_model; returns one logits row per input position.
  ag::Var forward(ag::Tape* tape, const ag::Var& rep, const std::vector<int>& input_ids) const {
    if (input_ids.empty()) throw Error(ErrorKind::kDimension, "decoder input must not be empty");
    for (int t : input_ids) {
      if (t < 0 || t >= cfg_.vocab_size) throw Error(ErrorKind::kDimension, "unknown token id " + std::to_string(t));
    }
    auto x = ag::add_row(tape, ag::gather_rows(tape, embedding_, input_ids), rep);
    auto h = stack_.forward(tape, x, std::vector<bool>(input_ids.size(), true));
    return out_(tape, h);
  }

  /// Teacher-forced NLL sum of [w..., EOS] given [BOS, w...]; 1x1.
  ag::Var sequence_nll(ag::Tape* tape, const ag::Var& rep, const std::vector<int>& encoded) const {
    std::vector<int> input(encoded.begin(), encoded.end() - 1);
    std::vector<int> target(encoded.begin() + 1, encoded.end());
    for (auto& t : target) {
      if (t == Vocabulary::kPad) t = -1;
    }
    return ag::nll_sum(tape, forward(tape, rep, input), target);
  }

  Eigen::RowVectorXd decode_step(const Matrix& rep, const std::vector<int>& prefix) const {
    if (prefix.empty() || prefix.front() != Vocabulary::kBos) {
      throw Error(ErrorKind::kDimension, "decode prefix must start with BOS");
    }
    auto logits = forward(nullptr, ag::constant(rep), prefix);
    return logits->value.row(logits->rows() - 1);
  }

  Description sample(const Matrix& rep, const SamplingConfig& cfg, Rng& rng) const {
    cfg.validate();
    Description d;
    std::vector<int> prefix{Vocabulary::kBos};
    for (int step = 0; step < cfg.max_len; ++step) {
      const auto logits = decode_step(rep, prefix);
      const auto probs = softmax(logits, cfg.temperature);
      const int tok = sample_token(probs, cfg.top_k, cfg.top_p, rng);
      const Eigen::RowVectorXd logp = logits.array() - logits.maxCoeff();
      d.token_ids.push_back(tok);
      d.logprobs.push_back(logp(tok) - std::log(logp.array().exp().sum()));
      if (tok == Vocabulary::kEos) break;
      prefix.push_back(tok);
    }
    return d;
  }

 private:
  DecoderConfig cfg_;
  ag::Var embedding_;
  nn::TransformerStack stack_;
  nn::Linear out_;
};

inline std::vector<int> sample_description(const Matrix& rep, const TextDecoder& decoder, const SamplingConfig& cfg) {
  auto rng = make_rng(cfg.seed, "sample_description");
  return decoder.sample(rep, cfg, rng).token_ids;
}

/// Decodes every transformation of one sample independently with the shared
/// decoder. Each transformation gets its own stream derived from cfg.seed.
inline GenerationResult generate_sample(const ContextOutput& context, const TextDecoder& decoder,
                                        const Vocabulary& vocab, const SamplingConfig& cfg,
                                        const std::string& sample_id = {}) {
  if (context.transformation_reps.rows() < 1) {
    throw Error(ErrorKind::kDimension, "context has no transformation representations");
  }
  GenerationResult out;
  out.sample_id = sample_id;
  for (Eigen::Index i = 0; i < context.transformation_reps.rows(); ++i) {
    auto rng = make_rng(cfg.seed, "generate/" + sample_id + "/" + std::to_string(i));
    auto d = decoder.sample(context.transformation_reps.row(i), cfg, rng);
    d.text = vocab.decode(d.token_ids);
    out.descriptions.push_back(std::move(d));
  }
  return out;
}

}  // namespace vtt
