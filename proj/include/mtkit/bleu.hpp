#pragma once

// Corpus BLEU (single reference, n = 1..4) with exp smoothing and the zh/vi
// tokenizers used to score both translation directions.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mtkit::bleu {

enum class Lang { zh, vi };
std::string_view to_string(Lang lang);
Lang parse_lang(std::string_view name);

class BleuError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// zh: each CJK ideograph and each punctuation mark is a token; other runs
///     split on whitespace.
/// vi: split on whitespace, then peel leading and trailing punctuation off
///     each word, one token per mark.
std::vector<std::string> tokenize_for_bleu(std::string_view text, Lang lang);

inline constexpr int kMaxOrder = 4;

/// Sufficient statistics; additive over sentences.
struct NgramStats {
  std::array<std::uint64_t, kMaxOrder> matches{};  // clipped
  std::array<std::uint64_t, kMaxOrder> totals{};   // candidate n-grams
  std::uint64_t sys_len = 0;
  std::uint64_t ref_len = 0;

  NgramStats& operator+=(const NgramStats& o);
  bool operator==(const NgramStats&) const = default;
};

NgramStats sentence_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

struct BleuScore {
  double bleu = 0.0;                        // 0..100, unrounded
  std::array<double, kMaxOrder> precisions{};  // smoothed, as fractions
  double bp = 0.0;
  std::uint64_t sys_len = 0;
  std::uint64_t ref_len = 0;
  int effective_order = 0;  // orders with at least one candidate n-gram

  /// bleu rounded half-up to one decimal.
  double rounded() const;
  /// "BLEU = 77.9" style one-decimal string.
  std::string formatted() const;
};

/// Smoothing: s = 1; for each order with candidates but no matches, s <- 2s and
/// p_n = 1 / (s * candidates). Orders without candidates are left out of the
/// geometric mean. A zero-length system output scores 0 with bp = 0.
BleuScore compute_bleu(const NgramStats& stats);

/// Throws BleuError on a length mismatch or an empty corpus.
BleuScore corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                      Lang lang, unsigned threads = 1);

double round_half_up(double value, int decimals = 1);

std::string render_key_value(const BleuScore& s);
nlohmann::json to_json(const BleuScore& s);

}  // namespace mtkit::bleu
