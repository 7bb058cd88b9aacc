#pragma once

// Backtranslation: translate monolingual target-side text into the source
// language, filter the synthetic pairs and merge them with authentic bitext.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtkit/backend.hpp"
#include "mtkit/corpus.hpp"

namespace mtkit::backtranslate {

using corpus::Corpus;
using corpus::ParallelCorpus;
using corpus::TokenizationPolicy;
using decoder::DecodeMode;
using decoder::FailureKind;

struct Provenance {
  std::uint64_t seed = 0;  // per-sentence stream seed
  std::string model_id;
  std::uint32_t k = 0;

  bool operator==(const Provenance&) const = default;
};

/// src is synthetic, tgt is the authentic monolingual sentence.
struct SyntheticPair {
  std::string src;
  std::string tgt;
  Provenance provenance;

  bool operator==(const SyntheticPair&) const = default;
};

enum class DropReason { empty, src_eq_tgt, too_short, too_long, len_ratio };
inline constexpr std::array<DropReason, 5> kDropReasons = {
    DropReason::empty, DropReason::src_eq_tgt, DropReason::too_short, DropReason::too_long,
    DropReason::len_ratio};
std::string_view to_string(DropReason r);

class BacktranslateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks run in this order: empty, src_eq_tgt, length window (both sides),
/// length ratio max(a,b)/min(a,b) > max_len_ratio.
struct PairFilter {
  std::size_t min_len = 1;
  std::size_t max_len = 250;
  double max_len_ratio = 1.5;
  bool drop_empty = true;
  bool drop_src_eq_tgt = true;

  /// Throws BacktranslateError unless min_len <= max_len and max_len_ratio >= 1.
  void validate() const;
  std::optional<DropReason> check(std::string_view src, std::string_view tgt,
                                  TokenizationPolicy src_policy,
                                  TokenizationPolicy tgt_policy) const;

  /// Accepts everything except empty sides.
  static PairFilter permissive();
};

struct BTOptions {
  DecodeMode mode = DecodeMode::sample_topk;
  std::uint32_t k = 5;
  std::uint64_t seed = 0;
  PairFilter filter;
  TokenizationPolicy src_policy = TokenizationPolicy::whitespace;  // synthetic side
  TokenizationPolicy tgt_policy = TokenizationPolicy::whitespace;  // monolingual side
  std::size_t batch_size = 256;
  unsigned threads = 1;
};

struct SentenceFailure {
  std::size_t index = 0;  // position in the monolingual corpus
  FailureKind kind = FailureKind::none;
  std::string message;
};

struct BTReport {
  std::size_t n_mono = 0;
  std::size_t n_pairs = 0;
  std::map<DropReason, std::size_t> drops;  // every reason present, possibly 0
  std::vector<SentenceFailure> failures;
  corpus::CorpusStats src_stats;
  corpus::CorpusStats tgt_stats;
  std::string checksum;  // sha256 over "src\ttgt\n" of every kept pair
  std::string model_id;
  DecodeMode mode = DecodeMode::sample_topk;
  std::uint32_t k = 0;
  std::uint64_t seed = 0;

  std::size_t n_dropped() const;
  /// n_pairs + drops + failures == n_mono.
  bool consistent() const;
};

struct BTResult {
  std::vector<SyntheticPair> pairs;
  BTReport report;

  ParallelCorpus corpus(TokenizationPolicy src_policy, TokenizationPolicy tgt_policy) const;
};

/// One translation attempt per sentence; sentence i uses
/// stream_seed(options.seed, i). Per-sentence failures are recorded.
/// Throws decoder::BackendUnavailable if the backend cannot be reached.
BTResult run_backtranslation(const Corpus& mono, decoder::TranslationBackend& backend,
                             const BTOptions& options);

std::string pair_checksum(const std::vector<corpus::SentencePair>& pairs);

nlohmann::json to_json(const BTReport& report, const PairFilter& filter);
std::string render_key_value(const BTReport& report);

enum class Origin { bitext, synthetic };
std::string_view to_string(Origin o);

struct OriginTag {
  Origin origin = Origin::bitext;
  std::size_t copy = 0;   // 0-based repetition for bitext, 0 for synthetic
  std::size_t index = 0;  // position in its input corpus

  bool operator==(const OriginTag&) const = default;
};

struct MergedCorpus {
  ParallelCorpus corpus;
  std::vector<OriginTag> origins;  // one per pair
};

/// bitext repeated `upsample_bitext` times, then synthetic.
MergedCorpus merge_corpora(const ParallelCorpus& bitext, const ParallelCorpus& synthetic,
                           std::size_t upsample_bitext = 1);

/// Sidecar format: header "origin\tcopy\tindex", then one line per pair.
void write_origin_sidecar(const std::filesystem::path& path, const std::vector<OriginTag>& origins);
std::vector<OriginTag> read_origin_sidecar(const std::filesystem::path& path);

}  // namespace mtkit::backtranslate
