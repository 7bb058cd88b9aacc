#pragma once

// Monolingual and parallel corpora: loading, tokenization for statistics,
// length filtering, seeded sampling and exact deduplication.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mtkit::corpus {

/// How sentence length and vocabulary are counted.
///   char_cjk:   every CJK ideograph is one token; other runs split on whitespace.
///   whitespace: split on Unicode whitespace only.
enum class TokenizationPolicy { char_cjk, whitespace };

std::string_view to_string(TokenizationPolicy p);
TokenizationPolicy parse_policy(std::string_view name);
/// "zh" -> char_cjk, "vi" -> whitespace.
TokenizationPolicy policy_for_language(std::string_view lang);

struct Sentence {
  std::string text;
  std::size_t index = 0;  // 0-based line number in the source file

  bool operator==(const Sentence&) const = default;
};

struct Corpus {
  std::vector<Sentence> sentences;
  TokenizationPolicy policy = TokenizationPolicy::whitespace;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
  bool operator==(const Corpus&) const = default;

  /// Builds a corpus from in-memory lines, indices 0..n-1. Lines are taken as-is.
  static Corpus from_lines(const std::vector<std::string>& lines,
                           TokenizationPolicy policy = TokenizationPolicy::whitespace);
  std::vector<std::string> lines() const;
};

class CorpusError : public std::runtime_error {
 public:
  enum class Kind { io, invalid_utf8, misaligned, invalid_argument };

  CorpusError(Kind kind, const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), kind_(kind), line_(line) {}

  Kind kind() const { return kind_; }
  /// 1-based line number for invalid_utf8, 0 otherwise.
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

struct LoadReport {
  std::size_t lines = 0;          // physical lines read
  std::size_t blank_dropped = 0;  // empty or whitespace-only lines
};

struct LoadedCorpus {
  Corpus corpus;
  LoadReport report;
};

/// Reads one sentence per line. Trailing '\r' is stripped; blank and
/// whitespace-only lines are dropped and counted.
LoadedCorpus load_corpus(const std::filesystem::path& path, TokenizationPolicy policy);

void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

/// Tokens are views into `text`.
std::vector<std::string_view> tokenize(std::string_view text, TokenizationPolicy policy);
std::size_t token_count(std::string_view text, TokenizationPolicy policy);

struct CorpusStats {
  std::size_t n_sents = 0;
  std::size_t vocab_size = 0;
  double avg_len = 0.0;  // full precision; rounded only when rendered

  bool operator==(const CorpusStats&) const = default;
};

CorpusStats compute_stats(const Corpus& corpus, TokenizationPolicy policy, unsigned threads = 1);

struct LengthFilter {
  std::size_t min_len = 10;
  std::size_t max_len = 60;
  TokenizationPolicy policy = TokenizationPolicy::whitespace;

  /// Throws CorpusError(invalid_argument) unless 1 <= min_len <= max_len.
  void validate() const;
};

struct FilterReport {
  std::size_t kept = 0;
  std::size_t dropped = 0;
  double coverage = 0.0;  // kept / (kept + dropped); 0 for an empty input
};

struct FilteredCorpus {
  Corpus corpus;
  FilterReport report;
};

/// Keeps sentences whose token count lies in [min_len, max_len].
FilteredCorpus filter_by_length(const Corpus& corpus, const LengthFilter& filter);

/// Sorted indices of a uniform n-subset of [0, total), drawn by a partial
/// Fisher-Yates shuffle over SplitMix64(seed).
std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed);

/// Uniform sample without replacement, original relative order kept.
Corpus sample_uniform(const Corpus& corpus, std::size_t n, std::uint64_t seed);

struct DedupResult {
  Corpus corpus;
  std::size_t removed = 0;
};

/// Drops exact duplicates, keeping first occurrences.
DedupResult dedup(const Corpus& corpus);

struct SentencePair {
  std::string src;
  std::string tgt;

  bool operator==(const SentencePair&) const = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  TokenizationPolicy src_policy = TokenizationPolicy::whitespace;
  TokenizationPolicy tgt_policy = TokenizationPolicy::whitespace;

  std::size_t size() const { return pairs.size(); }
  bool operator==(const ParallelCorpus&) const = default;

  Corpus source_side() const;
  Corpus target_side() const;
};

struct LoadedParallel {
  ParallelCorpus corpus;
  LoadReport report;  // blank_dropped counts pairs with a blank side
};

/// Loads two line-aligned files. Unequal line counts raise CorpusError(misaligned).
LoadedParallel load_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt,
                             TokenizationPolicy src_policy, TokenizationPolicy tgt_policy);

void write_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt,
                    const ParallelCorpus& corpus);

// Reports. The key=value form has one `key=value` per line; avg_len is
// printed rounded to an integer there and at full precision in JSON.
std::string render_key_value(const CorpusStats& stats);
std::string render_key_value(const FilterReport& report);
nlohmann::json to_json(const CorpusStats& stats);
nlohmann::json to_json(const FilterReport& report);
nlohmann::json to_json(const LoadReport& report);
CorpusStats stats_from_json(const nlohmann::json& j);

}  // namespace mtkit::corpus
