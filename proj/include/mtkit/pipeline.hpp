#pragma once

// Runs the enabled stages of a PipelineConfig in fixed order and records a
// run manifest; renders the summary tables from a manifest.

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mtkit/config.hpp"
#include "mtkit/postedit.hpp"

namespace mtkit::pipeline {

inline constexpr std::string_view kToolName = "mtkit";
inline constexpr std::string_view kToolVersion = "0.1.0";

/// The manifest is a JSON document; see docs/formats.md ("Run manifest").
using RunManifest = nlohmann::ordered_json;

class PipelineError : public std::runtime_error {
 public:
  enum class Category { config, data, backend };

  PipelineError(Category category, std::string stage, const std::string& what, std::string field = {})
      : std::runtime_error(what), category_(category), stage_(std::move(stage)), field_(std::move(field)) {}

  Category category() const { return category_; }
  /// Empty for errors found before any stage ran.
  const std::string& stage() const { return stage_; }
  const std::string& field() const { return field_; }

 private:
  Category category_;
  std::string stage_;
  std::string field_;
};

struct RunOptions {
  std::filesystem::path base_dir = ".";  // relative config paths resolve here
  std::optional<unsigned> threads;       // overrides run.threads
  std::ostream* log = nullptr;           // one line per stage when set
};

/// Checks every field the enabled stages need, then runs them in order.
/// On failure, files written by this run are removed and PipelineError is
/// thrown. On success the manifest is also written to WORK_DIR/manifest.json.
RunManifest run_pipeline(const config::PipelineConfig& config, const RunOptions& options = {});

RunManifest read_manifest(const std::filesystem::path& path);

enum class Table { data_stats, synthetic_stats, results };
Table parse_table(std::string_view name);
std::string_view to_string(Table t);

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Aligned plain-text table. Throws ReportError naming the table when the
/// manifest lacks the stage it is built from.
std::string report_table(const RunManifest& manifest, Table table);

struct PosteditSummary {
  std::size_t lines = 0;
  std::size_t edited_lines = 0;
  std::size_t edits = 0;
  std::size_t skipped = 0;
};

enum class Direction { zh_vi, vi_zh };

/// Line-aligned post-editing of `hyp` against `src`. Writes the corrected
/// text to `out` and a TSV report (line, begin, end, before, after, reason;
/// line numbers 1-based, spans in code points) to `report`.
PosteditSummary postedit_files(const std::filesystem::path& src, const std::filesystem::path& hyp,
                               const std::filesystem::path& out, const std::filesystem::path& report,
                               Direction direction, const postedit::Rules& rules);

/// Aligned text table: first column left-aligned, the rest right-aligned.
std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows);

}  // namespace mtkit::pipeline
