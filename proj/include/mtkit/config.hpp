#pragma once

// Pipeline configuration: a flat key = value file with [sections].
// Every key has a default; unknown sections and keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtkit::config {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0, std::string field = {})
      : std::runtime_error(what), line_(line), field_(std::move(field)) {}
  std::size_t line() const { return line_; }
  /// "section.key" when the error concerns one field.
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// Fixed execution order; a config enables a subset.
inline constexpr std::string_view kStageOrder[] = {
    "stats", "filter", "sample", "backtranslate", "merge", "average", "prune", "score", "postedit"};

struct SystemEntry {
  std::string name;
  std::string valid_hyp;
  std::string test_hyp;

  bool operator==(const SystemEntry&) const = default;
};

/// Training hyper-parameters, stored for the manifest; training runs elsewhere.
struct TrainingConfig {
  std::uint64_t max_updates = 120000;
  std::uint64_t patience = 10;
  std::string optimizer = "adam";
  double adam_eps = 1e-06;
  std::vector<double> adam_betas = {0.9, 0.98};
  std::uint64_t warmup_updates = 2500;
  double lr = 3e-05;
  double dropout = 0.3;
  double attention_dropout = 0.1;
  std::uint64_t max_tokens = 1024;
  std::uint64_t save_interval_updates = 5000;

  bool operator==(const TrainingConfig&) const = default;
};

struct PipelineConfig {
  // [run]
  std::string work_dir = "work";
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string src_lang = "zh";
  std::string tgt_lang = "vi";
  std::vector<std::string> stages = {"stats"};

  // [data]
  std::string bitext_src;
  std::string bitext_tgt;
  std::string mono;  // target-language monolingual text

  // [filter]
  std::uint64_t filter_min_len = 10;
  std::uint64_t filter_max_len = 60;

  // [sample]
  std::uint64_t sample_size = 1500000;  // clamped to the filtered corpus size

  // [subword]
  std::uint64_t n_merges = 0;  // used when prune has no subword_model
  std::string subword_model;

  // [backtranslate]
  std::string backend = "toy";  // toy | tcp://HOST:PORT | exec:COMMAND
  std::string mode = "sample_topk";
  std::uint64_t k = 5;
  std::uint64_t pair_min_len = 1;
  std::uint64_t pair_max_len = 250;
  double max_len_ratio = 1.5;
  bool drop_empty = true;
  bool drop_src_eq_tgt = true;
  std::uint64_t timeout_ms = 30000;
  std::uint64_t max_in_flight = 64;
  std::uint64_t batch_size = 256;
  double toy_epsilon = 0.0;
  std::uint64_t toy_shift = 1;

  // [merge]
  std::uint64_t upsample_bitext = 1;

  // [average]
  std::vector<std::string> checkpoints;
  std::uint64_t n_last = 5;

  // [prune]
  std::string prune_checkpoint;  // empty: the averaged checkpoint
  std::string embed_name = "embed_tokens";

  // [score]
  std::string valid_ref;
  std::string test_ref;
  std::vector<SystemEntry> systems;  // keys system.NAME.valid / system.NAME.test

  // [postedit]
  std::string postedit_src;
  std::string postedit_hyp;
  std::string rules;

  // [training]
  TrainingConfig training;

  bool operator==(const PipelineConfig&) const = default;

  bool stage_enabled(std::string_view stage) const;
  /// Checks value ranges and cross-field constraints; throws ConfigError.
  void validate() const;
};

PipelineConfig parse_config(std::string_view content);
/// Every key, defaults included, in a fixed order. parse_config(render_config(c)) == c.
std::string render_config(const PipelineConfig& c);

PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& c, const std::filesystem::path& path);

/// Environment variable that overrides the config path.
inline constexpr const char* kConfigEnv = "MTKIT_CONFIG";
/// `cli_path` when given, else MTKIT_CONFIG when set and non-empty.
std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::filesystem::path>& cli_path);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

}  // namespace mtkit::config
