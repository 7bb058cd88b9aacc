#pragma once

// Sequence decoding over a pluggable step model: greedy, beam search and
// top-k sampling, plus a deterministic cipher model for end-to-end tests.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtkit::decoder {

using TokenId = std::uint32_t;

class DecoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scores the next target token given the source and the generated prefix.
/// Implementations must be safe to call concurrently from several threads.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual TokenId eos_id() const = 0;
  /// Unnormalised scores, one per target token, all finite.
  virtual std::vector<double> next_logits(std::span<const TokenId> src,
                                          std::span<const TokenId> prefix) const = 0;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // includes EOS when generation ended on it
  double score = 0.0;           // sum of full-vocabulary log-softmax of chosen tokens
  std::vector<std::uint32_t> ranks;  // 1-based rank of each chosen token at its step
  bool truncated = false;       // stopped at max_len without EOS
  bool k_clamped = false;       // requested k exceeded the vocabulary

  bool operator==(const Hypothesis&) const = default;
};

std::vector<double> log_softmax(std::span<const double> logits);

/// Token ids ordered by logit descending, lower id first on ties.
std::vector<TokenId> ranked_tokens(std::span<const double> logits);

/// Sum of per-step log-probabilities of `tokens` under the model.
double score_sequence(const StepModel& model, std::span<const TokenId> src,
                      std::span<const TokenId> tokens);

Hypothesis decode_greedy(const StepModel& model, std::span<const TokenId> src, std::size_t max_len);

/// Length-unnormalised beam search. Returns up to `beam` hypotheses sorted by
/// score descending (ties: lexicographically smaller token sequence first).
/// Hypotheses still open at max_len are returned with truncated = true.
std::vector<Hypothesis> decode_beam(const StepModel& model, std::span<const TokenId> src,
                                    std::size_t beam, std::size_t max_len);

/// Top-k sampling: at each step keep the k highest logits (lower id wins at
/// the boundary), renormalise them with a softmax and draw one token with
/// SplitMix64(seed). k larger than the vocabulary is clamped and flagged.
Hypothesis decode_topk_sample(const StepModel& model, std::span<const TokenId> src, std::size_t k,
                              std::uint64_t seed, std::size_t max_len);

/// Deterministic stand-in for a translation model.
///
/// The reference output R is cipher(src) repeated `copies` times, joined by
/// `separator`. At step i the model puts probability 1 - epsilon on R[i]
/// (EOS once i >= |R|) and spreads epsilon evenly over the other tokens.
/// With epsilon = 0 the other tokens get a finite floor logit of -1e30.
class ToyCipherModel : public StepModel {
 public:
  ToyCipherModel(std::vector<TokenId> cipher, std::size_t vocab_size, TokenId eos, double epsilon,
                 std::size_t copies = 1, std::optional<TokenId> separator = std::nullopt);

  std::size_t vocab_size() const override { return vocab_size_; }
  TokenId eos_id() const override { return eos_; }
  std::vector<double> next_logits(std::span<const TokenId> src,
                                  std::span<const TokenId> prefix) const override;

  /// R for a given source, without EOS.
  std::vector<TokenId> reference_output(std::span<const TokenId> src) const;
  double epsilon() const { return epsilon_; }

 private:
  std::vector<TokenId> cipher_;
  std::size_t vocab_size_;
  TokenId eos_;
  double epsilon_;
  std::size_t copies_;
  std::optional<TokenId> separator_;
};

}  // namespace mtkit::decoder
