#include "mtkit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "mtkit/backend.hpp"
#include "mtkit/backtranslate.hpp"
#include "mtkit/bleu.hpp"
#include "mtkit/checksum.hpp"
#include "mtkit/corpus.hpp"
#include "mtkit/modelstore.hpp"
#include "mtkit/subword.hpp"
#include "mtkit/text.hpp"

namespace mtkit::pipeline {

namespace fs = std::filesystem;
using config::PipelineConfig;
using corpus::Corpus;
using corpus::TokenizationPolicy;
using Category = PipelineError::Category;

std::string_view to_string(Table t) {
  switch (t) {
    case Table::data_stats: return "data_stats";
    case Table::synthetic_stats: return "synthetic_stats";
    case Table::results: return "results";
  }
  return "?";
}

Table parse_table(std::string_view name) {
  if (name == "data_stats") return Table::data_stats;
  if (name == "synthetic_stats") return Table::synthetic_stats;
  if (name == "results") return Table::results;
  throw ReportError("unknown table '" + std::string(name) + "' (expected data_stats, synthetic_stats or results)");
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw corpus::CorpusError(corpus::CorpusError::Kind::io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

/// Tracks the files a run creates so a failed run can remove them.
class Run {
 public:
  Run(const PipelineConfig& c, const RunOptions& o)
      : cfg(c), opts(o), threads(o.threads.value_or(c.threads)) {
    if (threads == 0) threads = 1;
  }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : opts.base_dir / path;
  }

  fs::path output(const std::string& name) {
    const fs::path p = work_dir / name;
    if (std::find(created.begin(), created.end(), p) == created.end()) created.push_back(p);
    return p;
  }

  void record_output(const std::string& name) {
    const fs::path p = work_dir / name;
    manifest["outputs"][name] = {{"path", p.string()}, {"sha256", sha256_file(p)}};
  }

  void record_input(const std::string& field, const std::string& value) {
    const fs::path p = resolve(value);
    manifest["inputs"][field] = {{"path", value}, {"sha256", sha256_file(p)}};
  }

  void log(const std::string& line) const {
    if (opts.log) *opts.log << line << '\n';
  }

  void cleanup() {
    std::error_code ec;
    for (auto it = created.rbegin(); it != created.rend(); ++it) fs::remove(*it, ec);
    if (created_work_dir) fs::remove(work_dir, ec);  // only succeeds when empty
  }

  const PipelineConfig& cfg;
  const RunOptions& opts;
  unsigned threads;
  fs::path work_dir;
  bool created_work_dir = false;
  std::vector<fs::path> created;
  RunManifest manifest;

  // Intermediate results handed between stages.
  std::optional<Corpus> mono;  // latest version of the monolingual corpus
  std::optional<corpus::ParallelCorpus> bitext;
  std::optional<corpus::ParallelCorpus> synthetic;
  std::optional<modelstore::Checkpoint> averaged;
};

TokenizationPolicy policy(const std::string& lang) { return corpus::policy_for_language(lang); }

nlohmann::ordered_json stats_row(const std::string& name, const corpus::CorpusStats& s) {
  return {{"name", name}, {"n_sents", s.n_sents}, {"vocab_size", s.vocab_size}, {"avg_len", s.avg_len}};
}

nlohmann::ordered_json config_json(const PipelineConfig& c) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  std::istringstream in(config::render_config(c));
  std::string line, section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      out[section] = nlohmann::ordered_json::object();
      continue;
    }
    const auto eq = line.find(" =");
    out[section][line.substr(0, eq)] = eq + 3 <= line.size() ? line.substr(eq + 3) : "";
  }
  return out;
}

/// Fields each enabled stage reads, checked before anything runs.
void preflight(const Run& run) {
  const auto& c = run.cfg;
  auto need_file = [&](const std::string& stage, const std::string& field, const std::string& value) {
    if (value.empty()) {
      throw PipelineError(Category::config, stage, field + " is required by stage '" + stage + "'", field);
    }
    if (!fs::is_regular_file(run.resolve(value))) {
      throw PipelineError(Category::config, stage, field + ": file not found: " + run.resolve(value).string(), field);
    }
  };
  const bool any_data = !c.bitext_src.empty() || !c.bitext_tgt.empty() || !c.mono.empty();
  if (c.stage_enabled("stats")) {
    if (!any_data) throw PipelineError(Category::config, "stats", "stage 'stats' needs data.bitext_src, data.bitext_tgt or data.mono", "data");
    if (!c.bitext_src.empty()) need_file("stats", "data.bitext_src", c.bitext_src);
    if (!c.bitext_tgt.empty()) need_file("stats", "data.bitext_tgt", c.bitext_tgt);
    if (!c.mono.empty()) need_file("stats", "data.mono", c.mono);
  }
  for (const char* stage : {"filter", "sample", "backtranslate"}) {
    if (c.stage_enabled(stage)) need_file(stage, "data.mono", c.mono);
  }
  if (c.stage_enabled("merge")) {
    need_file("merge", "data.bitext_src", c.bitext_src);
    need_file("merge", "data.bitext_tgt", c.bitext_tgt);
  }
  if (c.stage_enabled("average")) {
    if (c.checkpoints.empty()) {
      throw PipelineError(Category::config, "average", "average.checkpoints is required by stage 'average'", "average.checkpoints");
    }
    for (const auto& p : c.checkpoints) need_file("average", "average.checkpoints", p);
  }
  if (c.stage_enabled("prune")) {
    if (c.prune_checkpoint.empty() && !c.stage_enabled("average")) {
      throw PipelineError(Category::config, "prune", "prune.checkpoint is required unless stage 'average' runs", "prune.checkpoint");
    }
    if (!c.prune_checkpoint.empty()) need_file("prune", "prune.checkpoint", c.prune_checkpoint);
    if (!c.subword_model.empty()) {
      need_file("prune", "subword.model", c.subword_model);
    }
    if (c.bitext_src.empty() && c.bitext_tgt.empty() && c.mono.empty()) {
      throw PipelineError(Category::config, "prune", "stage 'prune' needs corpora to collect the vocabulary from", "data");
    }
    for (const auto& [field, value] : {std::pair{"data.bitext_src", c.bitext_src}, std::pair{"data.bitext_tgt", c.bitext_tgt},
                                       std::pair{"data.mono", c.mono}}) {
      if (!value.empty()) need_file("prune", field, value);
    }
  }
  if (c.stage_enabled("score")) {
    if (c.systems.empty()) throw PipelineError(Category::config, "score", "stage 'score' needs at least one score.system.NAME entry", "score.system");
    if (c.valid_ref.empty() && c.test_ref.empty()) {
      throw PipelineError(Category::config, "score", "stage 'score' needs score.valid_ref or score.test_ref", "score.valid_ref");
    }
    for (const auto& s : c.systems) {
      if (!c.valid_ref.empty()) {
        need_file("score", "score.valid_ref", c.valid_ref);
        need_file("score", "score.system." + s.name + ".valid", s.valid_hyp);
      }
      if (!c.test_ref.empty()) {
        need_file("score", "score.test_ref", c.test_ref);
        need_file("score", "score.system." + s.name + ".test", s.test_hyp);
      }
    }
  }
  if (c.stage_enabled("postedit")) {
    need_file("postedit", "postedit.src", c.postedit_src);
    need_file("postedit", "postedit.hyp", c.postedit_hyp);
    if (!c.rules.empty()) need_file("postedit", "postedit.rules", c.rules);
  }
}

Corpus load_mono(Run& run) {
  if (!run.mono) {
    auto loaded = corpus::load_corpus(run.resolve(run.cfg.mono), policy(run.cfg.tgt_lang));
    run.record_input("data.mono", run.cfg.mono);
    run.mono = std::move(loaded.corpus);
  }
  return *run.mono;
}

const corpus::ParallelCorpus& load_bitext(Run& run) {
  if (!run.bitext) {
    auto loaded = corpus::load_parallel(run.resolve(run.cfg.bitext_src), run.resolve(run.cfg.bitext_tgt),
                                        policy(run.cfg.src_lang), policy(run.cfg.tgt_lang));
    run.record_input("data.bitext_src", run.cfg.bitext_src);
    run.record_input("data.bitext_tgt", run.cfg.bitext_tgt);
    run.bitext = std::move(loaded.corpus);
  }
  return *run.bitext;
}

void stage_stats(Run& run) {
  const auto& c = run.cfg;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  auto add = [&](const std::string& field, const std::string& value, const std::string& lang, const std::string& label) {
    if (value.empty()) return;
    auto loaded = corpus::load_corpus(run.resolve(value), policy(lang));
    run.record_input(field, value);
    auto s = corpus::compute_stats(loaded.corpus, policy(lang), run.threads);
    auto row = stats_row(label + " (" + lang + ")", s);
    row["blank_dropped"] = loaded.report.blank_dropped;
    rows.push_back(row);
  };
  add("data.bitext_src", c.bitext_src, c.src_lang, "train");
  add("data.bitext_tgt", c.bitext_tgt, c.tgt_lang, "train");
  add("data.mono", c.mono, c.tgt_lang, "MonoData");
  run.manifest["stages"]["stats"] = {{"rows", rows}};
}

void stage_filter(Run& run) {
  const auto& c = run.cfg;
  const Corpus mono = load_mono(run);
  corpus::LengthFilter f{c.filter_min_len, c.filter_max_len, policy(c.tgt_lang)};
  auto res = corpus::filter_by_length(mono, f);
  const std::string name = "mono.filtered." + c.tgt_lang;
  corpus::write_corpus(run.output(name), res.corpus);
  run.record_output(name);
  run.manifest["stages"]["filter"] = {
      {"min_len", c.filter_min_len},
      {"max_len", c.filter_max_len},
      {"kept", res.report.kept},
      {"dropped", res.report.dropped},
      {"coverage", res.report.coverage},
      {"stats", stats_row("Mono (" + c.tgt_lang + ")", corpus::compute_stats(res.corpus, f.policy, run.threads))}};
  run.mono = std::move(res.corpus);
}

void stage_sample(Run& run) {
  const auto& c = run.cfg;
  const Corpus mono = load_mono(run);
  const std::size_t n = std::min<std::uint64_t>(c.sample_size, mono.size());
  auto sampled = corpus::sample_uniform(mono, n, c.seed);
  const std::string name = "mono.sampled." + c.tgt_lang;
  corpus::write_corpus(run.output(name), sampled);
  run.record_output(name);
  run.manifest["stages"]["sample"] = {
      {"requested", c.sample_size},
      {"available", mono.size()},
      {"size", n},
      {"seed", c.seed},
      {"stats", stats_row("Mono (" + c.tgt_lang + ")", corpus::compute_stats(sampled, policy(c.tgt_lang), run.threads))}};
  run.mono = std::move(sampled);
}

void stage_backtranslate(Run& run) {
  const auto& c = run.cfg;
  const Corpus mono = load_mono(run);
  std::unique_ptr<decoder::TranslationBackend> backend;
  if (c.backend == "toy") {
    auto translator = std::make_shared<decoder::ToyCipherTranslator>(decoder::ToyCipherTranslator::from_texts(
        mono.lines(), {static_cast<std::size_t>(c.toy_shift), c.toy_epsilon, 1}));
    backend = std::make_unique<decoder::LocalBackend>(translator, run.threads);
  } else {
    decoder::ClientOptions co;
    co.timeout = std::chrono::milliseconds(c.timeout_ms);
    co.max_in_flight = c.max_in_flight;
    backend = std::make_unique<decoder::RemoteBackend>(c.backend, co);
  }
  backtranslate::BTOptions bo;
  bo.mode = decoder::parse_mode(c.mode);
  bo.k = static_cast<std::uint32_t>(c.k);
  bo.seed = c.seed;
  bo.filter = {c.pair_min_len, c.pair_max_len, c.max_len_ratio, c.drop_empty, c.drop_src_eq_tgt};
  bo.src_policy = policy(c.src_lang);
  bo.tgt_policy = policy(c.tgt_lang);
  bo.batch_size = c.batch_size;
  bo.threads = run.threads;
  auto res = backtranslate::run_backtranslation(mono, *backend, bo);
  auto pc = res.corpus(bo.src_policy, bo.tgt_policy);
  const std::string src_name = "synthetic." + c.src_lang;
  const std::string tgt_name = "synthetic." + c.tgt_lang;
  corpus::write_parallel(run.output(src_name), run.output(tgt_name), pc);
  run.record_output(src_name);
  run.record_output(tgt_name);
  nlohmann::ordered_json report = nlohmann::ordered_json::parse(backtranslate::to_json(res.report, bo.filter).dump());
  report["mono_stats"] = stats_row("Mono (" + c.tgt_lang + ")", corpus::compute_stats(mono, bo.tgt_policy, run.threads));
  report["src_lang"] = c.src_lang;
  report["tgt_lang"] = c.tgt_lang;
  run.manifest["stages"]["backtranslate"] = report;
  run.log("  " + std::to_string(res.report.n_pairs) + " pairs, " + std::to_string(res.report.n_dropped()) +
          " dropped, " + std::to_string(res.report.failures.size()) + " failed");
  run.synthetic = std::move(pc);
}

void stage_merge(Run& run) {
  const auto& c = run.cfg;
  const auto& bitext = load_bitext(run);
  corpus::ParallelCorpus empty{{}, bitext.src_policy, bitext.tgt_policy};
  auto merged = backtranslate::merge_corpora(bitext, run.synthetic ? *run.synthetic : empty, c.upsample_bitext);
  const std::string src_name = "train." + c.src_lang;
  const std::string tgt_name = "train." + c.tgt_lang;
  corpus::write_parallel(run.output(src_name), run.output(tgt_name), merged.corpus);
  backtranslate::write_origin_sidecar(run.output("train.origin.tsv"), merged.origins);
  for (const auto& n : {src_name, tgt_name, std::string("train.origin.tsv")}) run.record_output(n);
  run.manifest["stages"]["merge"] = {{"bitext", bitext.size()},
                                     {"upsample_bitext", c.upsample_bitext},
                                     {"synthetic", run.synthetic ? run.synthetic->size() : 0},
                                     {"total", merged.corpus.size()}};
}

void stage_average(Run& run) {
  const auto& c = run.cfg;
  std::vector<fs::path> paths;
  for (std::size_t i = 0; i < c.checkpoints.size(); ++i) {
    paths.push_back(run.resolve(c.checkpoints[i]));
    run.record_input("average.checkpoints[" + std::to_string(i) + "]", c.checkpoints[i]);
  }
  auto avg = modelstore::average_checkpoint_files(paths, c.n_last, run.threads);
  modelstore::write_checkpoint(avg, run.output("averaged.mtck"));
  run.record_output("averaged.mtck");
  run.manifest["stages"]["average"] = {{"n_inputs", paths.size()},
                                       {"n_last", c.n_last},
                                       {"step", avg.meta.step},
                                       {"tensors", avg.tensors.size()}};
  run.averaged = std::move(avg);
}

void stage_prune(Run& run) {
  const auto& c = run.cfg;
  modelstore::Checkpoint ckpt;
  if (!c.prune_checkpoint.empty()) {
    ckpt = modelstore::read_checkpoint(run.resolve(c.prune_checkpoint));
    run.record_input("prune.checkpoint", c.prune_checkpoint);
  } else {
    ckpt = *run.averaged;
  }
  std::vector<Corpus> corpora;
  if (!c.bitext_src.empty() && !c.bitext_tgt.empty()) {
    const auto& b = load_bitext(run);
    corpora.push_back(b.source_side());
    corpora.push_back(b.target_side());
  } else {
    for (const auto& [field, value, lang] :
         {std::tuple{"data.bitext_src", c.bitext_src, c.src_lang}, std::tuple{"data.bitext_tgt", c.bitext_tgt, c.tgt_lang}}) {
      if (value.empty()) continue;
      corpora.push_back(corpus::load_corpus(run.resolve(value), policy(lang)).corpus);
      run.record_input(field, value);
    }
  }
  if (!c.mono.empty()) corpora.push_back(load_mono(run));

  subword::BpeModel model;
  if (!c.subword_model.empty()) {
    model = subword::load_model(run.resolve(c.subword_model));
    run.record_input("subword.model", c.subword_model);
  } else {
    Corpus all;
    for (const auto& cp : corpora) all.sentences.insert(all.sentences.end(), cp.sentences.begin(), cp.sentences.end());
    model = subword::train_bpe(all, c.n_merges);
    subword::save_model(model, run.output("subword.model"));
    run.record_output("subword.model");
  }
  const auto keep = subword::corpus_vocab(corpora, model, run.threads);
  auto res = modelstore::prune_embeddings(ckpt, c.embed_name, model.vocab(), keep);
  modelstore::write_checkpoint(res.checkpoint, run.output("pruned.mtck"));
  subword::save_vocab(res.vocab, run.output("pruned.vocab"));
  run.record_output("pruned.mtck");
  run.record_output("pruned.vocab");
  run.manifest["stages"]["prune"] = {{"original_vocab", res.report.original_vocab},
                                     {"kept_vocab", res.report.kept_vocab},
                                     {"ratio", res.report.ratio},
                                     {"pruned_tensors", res.pruned_tensors}};
}

void stage_score(Run& run) {
  const auto& c = run.cfg;
  const auto lang = bleu::parse_lang(c.tgt_lang);
  auto score = [&](const std::string& ref_field, const std::string& ref, const std::string& hyp_field,
                   const std::string& hyp) -> nlohmann::ordered_json {
    if (ref.empty()) return nullptr;
    const auto refs = read_lines(run.resolve(ref));
    const auto hyps = read_lines(run.resolve(hyp));
    run.record_input(ref_field, ref);
    run.record_input(hyp_field, hyp);
    auto s = bleu::corpus_bleu(hyps, refs, lang, run.threads);
    return nlohmann::ordered_json::parse(bleu::to_json(s).dump());
  };
  nlohmann::ordered_json systems = nlohmann::ordered_json::array();
  for (const auto& s : c.systems) {
    systems.push_back({{"name", s.name},
                       {"valid", score("score.valid_ref", c.valid_ref, "score.system." + s.name + ".valid", s.valid_hyp)},
                       {"test", score("score.test_ref", c.test_ref, "score.system." + s.name + ".test", s.test_hyp)}});
  }
  run.manifest["stages"]["score"] = {{"lang", c.tgt_lang}, {"systems", systems}};
}

void stage_postedit(Run& run) {
  const auto& c = run.cfg;
  const postedit::Rules rules = c.rules.empty() ? postedit::Rules::defaults() : postedit::load_rules(run.resolve(c.rules));
  if (!c.rules.empty()) run.record_input("postedit.rules", c.rules);
  const Direction dir = c.src_lang == "zh" ? Direction::zh_vi : Direction::vi_zh;
  const std::string out_name = "postedit." + c.tgt_lang;
  const auto summary = postedit_files(run.resolve(c.postedit_src), run.resolve(c.postedit_hyp), run.output(out_name),
                                      run.output("postedit.report.tsv"), dir, rules);
  run.record_input("postedit.src", c.postedit_src);
  run.record_input("postedit.hyp", c.postedit_hyp);
  run.record_output(out_name);
  run.record_output("postedit.report.tsv");
  run.manifest["stages"]["postedit"] = {{"direction", dir == Direction::zh_vi ? "zh-vi" : "vi-zh (experimental)"},
                                        {"lines", summary.lines},
                                        {"edited_lines", summary.edited_lines},
                                        {"edits", summary.edits},
                                        {"skipped", summary.skipped}};
}

}  // namespace

RunManifest run_pipeline(const PipelineConfig& cfg, const RunOptions& options) {
  try {
    cfg.validate();
  } catch (const config::ConfigError& e) {
    throw PipelineError(Category::config, "", e.what(), e.field());
  }
  Run run(cfg, options);
  preflight(run);

  run.work_dir = run.resolve(cfg.work_dir);
  run.manifest["tool"] = kToolName;
  run.manifest["version"] = kToolVersion;
  run.manifest["started_at"] = utc_now();
  run.manifest["config"] = config_json(cfg);
  run.manifest["threads"] = run.threads;
  run.manifest["stages_run"] = nlohmann::ordered_json::array();
  run.manifest["inputs"] = nlohmann::ordered_json::object();
  run.manifest["outputs"] = nlohmann::ordered_json::object();
  run.manifest["stages"] = nlohmann::ordered_json::object();

  using StageFn = void (*)(Run&);
  const std::pair<std::string_view, StageFn> stages[] = {
      {"stats", stage_stats},   {"filter", stage_filter},   {"sample", stage_sample},
      {"backtranslate", stage_backtranslate}, {"merge", stage_merge}, {"average", stage_average},
      {"prune", stage_prune},   {"score", stage_score},     {"postedit", stage_postedit}};

  std::string current;
  try {
    std::error_code ec;
    if (!fs::exists(run.work_dir)) {
      fs::create_directories(run.work_dir, ec);
      if (ec) throw PipelineError(Category::data, "", "cannot create work directory " + run.work_dir.string() + ": " + ec.message(), "run.work_dir");
      run.created_work_dir = true;
    }
    for (const auto& [name, fn] : stages) {
      if (!cfg.stage_enabled(name)) continue;
      current = std::string(name);
      run.log("[" + current + "]");
      fn(run);
      run.manifest["stages_run"].push_back(current);
    }
    current.clear();
    run.manifest["finished_at"] = utc_now();
    const fs::path manifest_path = run.output("manifest.json");
    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    out << run.manifest.dump(2) << '\n';
    if (!out.flush()) throw PipelineError(Category::data, "", "cannot write " + manifest_path.string());
  } catch (const PipelineError&) {
    run.cleanup();
    throw;
  } catch (const decoder::BackendUnavailable& e) {
    run.cleanup();
    throw PipelineError(Category::backend, current, "stage '" + current + "': " + e.what());
  } catch (const config::ConfigError& e) {
    run.cleanup();
    throw PipelineError(Category::config, current, "stage '" + current + "': " + e.what(), e.field());
  } catch (const std::exception& e) {
    run.cleanup();
    throw PipelineError(Category::data, current, "stage '" + current + "': " + e.what());
  }
  return run.manifest;
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReportError("cannot read manifest " + path.string());
  try {
    return RunManifest::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (std::size_t i = 0; i < header.size(); ++i) w[i] = width(header[i]);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], width(r[i]));
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string cell = i < cells.size() ? cells[i] : "";
      const std::string pad(w[i] - width(cell), ' ');
      if (i) out += " | ";
      out += i == 0 ? cell + pad : pad + cell;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  out += std::string(total + 3 * (w.size() - 1), '-') + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

std::string report_table(const RunManifest& m, Table table) {
  auto missing = [&](std::string_view stage) {
    return ReportError("manifest has no '" + std::string(stage) + "' stage data for table '" +
                       std::string(to_string(table)) + "'");
  };
  auto stage = [&](const char* name) -> const RunManifest& {
    if (!m.is_object() || !m.contains("stages") || !m["stages"].contains(name)) throw missing(name);
    return m["stages"][name];
  };
  auto stats_cells = [](const RunManifest& row, const std::string& name) {
    return std::vector<std::string>{name, std::to_string(row.at("n_sents").get<std::uint64_t>()),
                                    std::to_string(row.at("vocab_size").get<std::uint64_t>()),
                                    std::to_string(std::llround(row.at("avg_len").get<double>()))};
  };
  const std::vector<std::string> stats_header = {"Data", "#Sents", "#Vocab", "Avg.Len"};
  try {
    switch (table) {
      case Table::data_stats: {
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : stage("stats").at("rows")) rows.push_back(stats_cells(r, r.at("name").get<std::string>()));
        return render_table(stats_header, rows);
      }
      case Table::synthetic_stats: {
        const auto& bt = stage("backtranslate");
        const auto src = bt.at("src_lang").get<std::string>();
        const auto tgt = bt.at("tgt_lang").get<std::string>();
        std::vector<std::vector<std::string>> rows;
        rows.push_back(stats_cells(bt.at("mono_stats"), bt.at("mono_stats").at("name").get<std::string>()));
        rows.push_back({"Synthetic (" + src + "-" + tgt + ")", "", "", ""});
        rows.push_back(stats_cells(bt.at("src_stats"), "train (" + src + ")"));
        rows.push_back(stats_cells(bt.at("tgt_stats"), "train (" + tgt + ")"));
        return render_table(stats_header, rows);
      }
      case Table::results: {
        std::vector<std::vector<std::string>> rows;
        auto cell = [](const RunManifest& v) -> std::string {
          if (v.is_null()) return "-";
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.1f", v.at("bleu").get<double>());
          return buf;
        };
        for (const auto& s : stage("score").at("systems")) {
          rows.push_back({s.at("name").get<std::string>(), cell(s.at("valid")), cell(s.at("test"))});
        }
        return render_table({"Model", "Valid", "Test"}, rows);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("malformed manifest data for table '" + std::string(to_string(table)) + "': " + e.what());
  }
  throw missing("?");
}

PosteditSummary postedit_files(const fs::path& src, const fs::path& hyp, const fs::path& out,
                               const fs::path& report, Direction direction, const postedit::Rules& rules) {
  const auto src_lines = read_lines(src);
  const auto hyp_lines = read_lines(hyp);
  if (src_lines.size() != hyp_lines.size()) {
    throw corpus::CorpusError(corpus::CorpusError::Kind::misaligned,
                              src.string() + " has " + std::to_string(src_lines.size()) + " lines but " +
                                  hyp.string() + " has " + std::to_string(hyp_lines.size()));
  }
  std::ofstream o(out, std::ios::binary | std::ios::trunc);
  std::ofstream r(report, std::ios::binary | std::ios::trunc);
  if (!o || !r) throw corpus::CorpusError(corpus::CorpusError::Kind::io, "cannot write post-edit outputs");
  r << "line\tbegin\tend\tbefore\tafter\treason\n";
  PosteditSummary summary;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    for (const auto* line : {&src_lines[i], &hyp_lines[i]}) {
      if (!text::is_valid_utf8(*line)) {
        throw corpus::CorpusError(corpus::CorpusError::Kind::invalid_utf8, "invalid UTF-8 at line " + std::to_string(i + 1), i + 1);
      }
    }
    const auto c = direction == Direction::zh_vi ? postedit::correct_translation(src_lines[i], hyp_lines[i], rules)
                                                 : postedit::correct_translation_vi_zh(src_lines[i], hyp_lines[i], rules);
    o << c.text << '\n';
    ++summary.lines;
    summary.edits += c.edits.size();
    summary.skipped += c.skipped.size();
    if (!c.edits.empty()) ++summary.edited_lines;
    for (const auto& e : c.edits) {
      r << i + 1 << '\t' << e.begin << '\t' << e.end << '\t' << e.before << '\t' << e.after << '\t' << e.reason << '\n';
    }
  }
  if (!o.flush() || !r.flush()) throw corpus::CorpusError(corpus::CorpusError::Kind::io, "write failed for post-edit outputs");
  return summary;
}

}  // namespace mtkit::pipeline
