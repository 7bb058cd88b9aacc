#pragma once

// Deterministic byte-pair-encoding subword model.
//
// Words are the pieces of a sentence between single ASCII spaces. Each word
// becomes its code points followed by the end-of-word symbol U+2581, which is
// a separate symbol that merges can absorb. Because empty pieces (from
// leading, trailing or repeated spaces) encode as a lone end-of-word symbol,
// decode(encode(x)) == x for every x whose characters are in the vocabulary.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtkit/corpus.hpp"

namespace mtkit::subword {

using TokenId = std::uint32_t;

inline constexpr char32_t kEndOfWord = U'▁';
inline constexpr std::string_view kEndOfWordUtf8 = "\xE2\x96\x81";

/// Specials always occupy ids 0..5 in this order.
inline constexpr std::array<std::string_view, 6> kSpecialTokens = {
    "<pad>", "<unk>", "<s>", "</s>", "zh_CN", "vi_VN"};
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr TokenId kZhTagId = 4;
inline constexpr TokenId kViTagId = 5;
inline constexpr TokenId kNumSpecials = 6;

class SubwordError : public std::runtime_error {
 public:
  explicit SubwordError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), line_(line) {}
  /// 1-based line in a model file, 0 when not file-related.
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Merge {
  std::string left;
  std::string right;

  bool operator==(const Merge&) const = default;
};

/// Merge priority is list position.
struct MergeTable {
  std::vector<Merge> merges;

  bool operator==(const MergeTable&) const = default;
};

class SubwordVocab {
 public:
  SubwordVocab() = default;
  /// Validates that the specials lead in canonical order and that tokens are unique.
  explicit SubwordVocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::optional<TokenId> find(std::string_view token) const;
  static bool is_special(TokenId id) { return id < kNumSpecials; }

  bool operator==(const SubwordVocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

class BpeModel {
 public:
  BpeModel() = default;
  BpeModel(MergeTable merges, SubwordVocab vocab);

  const MergeTable& merges() const { return merges_; }
  const SubwordVocab& vocab() const { return vocab_; }

  /// Symbol sequence (token strings) for `text`. Throws SubwordError if the
  /// text contains the end-of-word symbol.
  std::vector<std::string> segment(std::string_view text) const;
  std::vector<TokenId> encode(std::string_view text) const;
  /// Concatenates pieces; drops pad/bos/eos/language tags; unk renders as "<unk>".
  std::string decode(const std::vector<TokenId>& ids) const;

  bool operator==(const BpeModel& other) const {
    return merges_ == other.merges_ && vocab_ == other.vocab_;
  }

 private:
  std::vector<std::string> segment_word(std::string_view word) const;

  MergeTable merges_;
  SubwordVocab vocab_;
  std::unordered_map<std::string, std::size_t> rank_;  // "left\x1Fright" -> priority
};

/// Learns up to n_merges merges. Each round merges the most frequent adjacent
/// pair; equal counts go to the lexicographically smallest (left, right) by
/// UTF-8 bytes. Stops early once no pair occurs at least twice.
/// The vocabulary is: specials, end-of-word symbol, characters in byte order,
/// then merged tokens in merge order (first occurrence only).
BpeModel train_bpe(const corpus::Corpus& corpus, std::size_t n_merges);

std::vector<TokenId> encode(std::string_view text, const BpeModel& model);
std::string decode(const std::vector<TokenId>& ids, const BpeModel& model);

/// Union of ids used to encode every sentence of every corpus, plus the specials.
std::set<TokenId> corpus_vocab(const std::vector<corpus::Corpus>& corpora, const BpeModel& model,
                               unsigned threads = 1);

// Model file: see docs/formats.md ("BPE model file").
void save_model(const BpeModel& model, const std::filesystem::path& path);
BpeModel load_model(const std::filesystem::path& path);
std::string serialize_model(const BpeModel& model);
BpeModel parse_model(std::string_view content);

// Vocabulary file ("#mtkit-vocab 1", "tokens N", one escaped token per line),
// used for pruned vocabularies that no longer pair with a merge table.
void save_vocab(const SubwordVocab& vocab, const std::filesystem::path& path);
SubwordVocab load_vocab(const std::filesystem::path& path);
std::string serialize_vocab(const SubwordVocab& vocab);
SubwordVocab parse_vocab(std::string_view content);

}  // namespace mtkit::subword
