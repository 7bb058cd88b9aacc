#include "mtkit/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtkit/rng.hpp"

namespace mtkit::decoder {

namespace {

constexpr double kFloorLogit = -1e30;

std::vector<double> checked_logits(const StepModel& model, std::span<const TokenId> src,
                                   std::span<const TokenId> prefix) {
  auto logits = model.next_logits(src, prefix);
  if (logits.size() != model.vocab_size()) {
    throw DecoderError("step model returned " + std::to_string(logits.size()) +
                       " logits for a vocabulary of " + std::to_string(model.vocab_size()));
  }
  for (double v : logits) {
    if (!std::isfinite(v)) throw DecoderError("step model returned a non-finite logit");
  }
  return logits;
}

std::uint32_t rank_of(std::span<const double> logits, TokenId token) {
  std::uint32_t rank = 1;
  for (TokenId i = 0; i < logits.size(); ++i) {
    if (logits[i] > logits[token] || (logits[i] == logits[token] && i < token)) ++rank;
  }
  return rank;
}

}  // namespace

std::vector<double> log_softmax(std::span<const double> logits) {
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max);
  const double log_z = max + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

std::vector<TokenId> ranked_tokens(std::span<const double> logits) {
  std::vector<TokenId> ids(logits.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::stable_sort(ids.begin(), ids.end(),
                   [&](TokenId a, TokenId b) { return logits[a] > logits[b]; });
  return ids;
}

double score_sequence(const StepModel& model, std::span<const TokenId> src,
                      std::span<const TokenId> tokens) {
  double score = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto logits = checked_logits(model, src, tokens.first(t));
    score += log_softmax(logits)[tokens[t]];
  }
  return score;
}

Hypothesis decode_greedy(const StepModel& model, std::span<const TokenId> src, std::size_t max_len) {
  if (max_len == 0) throw DecoderError("max_len must be >= 1");
  Hypothesis h;
  while (h.tokens.size() < max_len) {
    const auto logits = checked_logits(model, src, h.tokens);
    const auto best = static_cast<TokenId>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    h.score += log_softmax(logits)[best];
    h.tokens.push_back(best);
    h.ranks.push_back(1);
    if (best == model.eos_id()) return h;
  }
  h.truncated = true;
  return h;
}

std::vector<Hypothesis> decode_beam(const StepModel& model, std::span<const TokenId> src,
                                    std::size_t beam, std::size_t max_len) {
  if (beam == 0) throw DecoderError("beam must be >= 1");
  if (max_len == 0) throw DecoderError("max_len must be >= 1");

  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  };

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * model.vocab_size());
    for (const auto& h : live) {
      const auto logits = checked_logits(model, src, h.tokens);
      const auto logp = log_softmax(logits);
      for (TokenId t = 0; t < logits.size(); ++t) {
        Hypothesis c = h;
        c.tokens.push_back(t);
        c.ranks.push_back(rank_of(logits, t));
        c.score += logp[t];
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    candidates.resize(keep);

    live.clear();
    for (auto& c : candidates) {
      if (c.tokens.back() == model.eos_id()) {
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
    // Scores never increase, so once `beam` finished hypotheses beat every
    // open one the search can stop.
    if (finished.size() >= beam && !live.empty()) {
      std::sort(finished.begin(), finished.end(), better);
      if (live.front().score < finished[beam - 1].score) live.clear();
    }
  }
  for (auto& h : live) {
    h.truncated = true;
    finished.push_back(std::move(h));
  }
  std::sort(finished.begin(), finished.end(), better);
  if (finished.size() > beam) finished.resize(beam);
  return finished;
}

Hypothesis decode_topk_sample(const StepModel& model, std::span<const TokenId> src, std::size_t k,
                              std::uint64_t seed, std::size_t max_len) {
  if (k == 0) throw DecoderError("k must be >= 1");
  if (max_len == 0) throw DecoderError("max_len must be >= 1");
  Hypothesis h;
  if (k > model.vocab_size()) {
    k = model.vocab_size();
    h.k_clamped = true;
  }
  SplitMix64 rng(seed);
  std::vector<double> weights(k);
  while (h.tokens.size() < max_len) {
    const auto logits = checked_logits(model, src, h.tokens);
    const auto order = ranked_tokens(logits);
    const double top = logits[order[0]];
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      weights[i] = std::exp(logits[order[i]] - top);
      total += weights[i];
    }
    const double u = rng.uniform() * total;
    std::size_t pick = k - 1;
    double cum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      cum += weights[i];
      if (u < cum) {
        pick = i;
        break;
      }
    }
    const TokenId tok = order[pick];
    h.score += log_softmax(logits)[tok];
    h.tokens.push_back(tok);
    h.ranks.push_back(static_cast<std::uint32_t>(pick + 1));
    if (tok == model.eos_id()) return h;
  }
  h.truncated = true;
  return h;
}

ToyCipherModel::ToyCipherModel(std::vector<TokenId> cipher, std::size_t vocab_size, TokenId eos,
                               double epsilon, std::size_t copies, std::optional<TokenId> separator)
    : cipher_(std::move(cipher)),
      vocab_size_(vocab_size),
      eos_(eos),
      epsilon_(epsilon),
      copies_(copies),
      separator_(separator) {
  if (!(epsilon_ >= 0.0 && epsilon_ < 1.0)) throw DecoderError("epsilon must lie in [0, 1)");
  if (vocab_size_ < 2) throw DecoderError("toy model needs at least two tokens");
  if (eos_ >= vocab_size_) throw DecoderError("eos id outside vocabulary");
  if (copies_ == 0) throw DecoderError("copies must be >= 1");
  if (copies_ > 1 && !separator_) throw DecoderError("copies > 1 needs a separator token");
  for (TokenId t : cipher_) {
    if (t >= vocab_size_) throw DecoderError("cipher maps outside the vocabulary");
  }
}

std::vector<TokenId> ToyCipherModel::reference_output(std::span<const TokenId> src) const {
  std::vector<TokenId> once;
  once.reserve(src.size());
  for (TokenId s : src) {
    if (s >= cipher_.size()) throw DecoderError("source token outside the cipher domain");
    once.push_back(cipher_[s]);
  }
  std::vector<TokenId> out;
  for (std::size_t c = 0; c < copies_; ++c) {
    if (c > 0) out.push_back(*separator_);
    out.insert(out.end(), once.begin(), once.end());
  }
  return out;
}

std::vector<double> ToyCipherModel::next_logits(std::span<const TokenId> src,
                                                std::span<const TokenId> prefix) const {
  const auto ref = reference_output(src);
  const std::size_t i = prefix.size();
  const TokenId target = i < ref.size() ? ref[i] : eos_;
  const double other =
      epsilon_ > 0.0 ? std::log(epsilon_ / static_cast<double>(vocab_size_ - 1)) : kFloorLogit;
  std::vector<double> logits(vocab_size_, other);
  logits[target] = std::log1p(-epsilon_);
  return logits;
}

}  // namespace mtkit::decoder
