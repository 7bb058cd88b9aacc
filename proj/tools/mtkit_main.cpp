// mtkit command-line interface.
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 backend error.

#include <charconv>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtkit/backend.hpp"
#include "mtkit/backtranslate.hpp"
#include "mtkit/bleu.hpp"
#include "mtkit/checksum.hpp"
#include "mtkit/config.hpp"
#include "mtkit/corpus.hpp"
#include "mtkit/modelstore.hpp"
#include "mtkit/pipeline.hpp"
#include "mtkit/postedit.hpp"
#include "mtkit/subword.hpp"
#include "mtkit/text.hpp"

namespace {

using namespace mtkit;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitBackend = 3;

/// Usage problems found after CLI11 parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kLangs = {"zh", "vi"};
const std::vector<std::string> kModes = {"greedy", "beam", "sample_topk"};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (path != "-") {
    file.open(path, std::ios::binary);
    if (!file) throw corpus::CorpusError(corpus::CorpusError::Kind::io, "cannot open " + path);
    in = &file;
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(*in, line)) lines.emplace_back(text::trim_cr(line));
  return lines;
}

/// Writes to `path`, or stdout for "-".
class Output {
 public:
  explicit Output(const std::string& path) : path_(path) {
    if (path != "-") {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw corpus::CorpusError(corpus::CorpusError::Kind::io, "cannot write " + path);
    }
  }
  std::ostream& stream() { return path_ == "-" ? std::cout : file_; }
  void close() {
    stream().flush();
    if (!stream()) throw corpus::CorpusError(corpus::CorpusError::Kind::io, "write failed for " + path_);
  }

 private:
  std::string path_;
  std::ofstream file_;
};

void write_text(const std::string& path, const std::string& content) {
  Output out(path);
  out.stream() << content;
  out.close();
}

corpus::TokenizationPolicy resolve_policy(const std::string& lang, const std::string& policy) {
  if (!policy.empty()) return corpus::parse_policy(policy);
  return corpus::policy_for_language(lang);
}

void add_lang(CLI::App* cmd, std::string& lang, const std::string& what = "language") {
  cmd->add_option("--lang", lang, what)->check(CLI::IsMember(kLangs));
}

struct Globals {
  unsigned threads = 1;
};

// stats

struct StatsArgs {
  std::vector<std::string> files;
  std::string lang = "vi";
  std::string policy;
  bool json = false;
};

void cmd_stats(const StatsArgs& a, const Globals& g) {
  const auto policy = resolve_policy(a.lang, a.policy);
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& f : a.files) {
    const auto loaded = corpus::load_corpus(f, policy);
    const auto stats = corpus::compute_stats(loaded.corpus, policy, g.threads);
    if (a.json) {
      all.push_back({{"file", f},
                     {"policy", corpus::to_string(policy)},
                     {"n_sents", stats.n_sents},
                     {"vocab_size", stats.vocab_size},
                     {"avg_len", stats.avg_len},
                     {"blank_dropped", loaded.report.blank_dropped}});
    } else {
      if (a.files.size() > 1) std::cout << "file=" << f << '\n';
      std::cout << corpus::render_key_value(stats) << "blank_dropped=" << loaded.report.blank_dropped << '\n';
    }
  }
  if (a.json) std::cout << (a.files.size() == 1 ? all[0] : all).dump(2) << '\n';
}

// filter

struct FilterArgs {
  std::string input;
  std::string output;
  std::size_t min_len = 10;
  std::size_t max_len = 60;
  std::string lang = "vi";
  std::string policy;
  bool dedup = false;
  bool json = false;
};

void cmd_filter(const FilterArgs& a) {
  corpus::LengthFilter f{a.min_len, a.max_len, resolve_policy(a.lang, a.policy)};
  f.validate();
  auto loaded = corpus::load_corpus(a.input, f.policy);
  std::size_t removed = 0;
  if (a.dedup) {
    auto d = corpus::dedup(loaded.corpus);
    removed = d.removed;
    loaded.corpus = std::move(d.corpus);
  }
  const auto res = corpus::filter_by_length(loaded.corpus, f);
  corpus::write_corpus(a.output, res.corpus);
  if (a.json) {
    auto j = corpus::to_json(res.report);
    if (a.dedup) j["duplicates_removed"] = removed;
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << corpus::render_key_value(res.report);
    if (a.dedup) std::cout << "duplicates_removed=" << removed << '\n';
  }
}

// sample

struct SampleArgs {
  std::string input;
  std::string output;
  std::size_t n = 0;
  std::uint64_t seed = 1;
  bool clamp = false;
};

void cmd_sample(const SampleArgs& a) {
  const auto loaded = corpus::load_corpus(a.input, corpus::TokenizationPolicy::whitespace);
  const std::size_t n = a.clamp ? std::min(a.n, loaded.corpus.size()) : a.n;
  const auto sampled = corpus::sample_uniform(loaded.corpus, n, a.seed);
  corpus::write_corpus(a.output, sampled);
  std::cout << "sampled=" << sampled.size() << "\navailable=" << loaded.corpus.size() << "\nseed=" << a.seed << '\n';
}

// spm

struct SpmTrainArgs {
  std::vector<std::string> inputs;
  std::size_t merges = 0;
  std::string output;
};

void cmd_spm_train(const SpmTrainArgs& a) {
  corpus::Corpus all;
  for (const auto& f : a.inputs) {
    auto c = corpus::load_corpus(f, corpus::TokenizationPolicy::whitespace).corpus;
    all.sentences.insert(all.sentences.end(), c.sentences.begin(), c.sentences.end());
  }
  const auto model = subword::train_bpe(all, a.merges);
  subword::save_model(model, a.output);
  std::cout << "merges=" << model.merges().merges.size() << "\nvocab_size=" << model.vocab().size() << '\n';
}

struct SpmCodecArgs {
  std::string model;
  std::string input = "-";
  std::string output = "-";
  bool pieces = false;
};

void cmd_spm_encode(const SpmCodecArgs& a) {
  const auto model = subword::load_model(a.model);
  Output out(a.output);
  for (const auto& line : read_lines(a.input)) {
    std::string sep;
    if (a.pieces) {
      for (const auto& p : model.segment(line)) {
        out.stream() << sep << p;
        sep = " ";
      }
    } else {
      for (auto id : model.encode(line)) {
        out.stream() << sep << id;
        sep = " ";
      }
    }
    out.stream() << '\n';
  }
  out.close();
}

void cmd_spm_decode(const SpmCodecArgs& a) {
  const auto model = subword::load_model(a.model);
  Output out(a.output);
  std::size_t line_no = 0;
  for (const auto& line : read_lines(a.input)) {
    ++line_no;
    std::vector<subword::TokenId> ids;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) {
      subword::TokenId id = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), id);
      if (ec != std::errc() || p != tok.data() + tok.size() || id >= model.vocab().size()) {
        throw subword::SubwordError("line " + std::to_string(line_no) + ": invalid token id '" + tok + "'", line_no);
      }
      ids.push_back(id);
    }
    out.stream() << model.decode(ids) << '\n';
  }
  out.close();
}

// ckpt

struct CkptAvgArgs {
  std::vector<std::string> inputs;
  std::size_t last = modelstore::kDefaultLastN;
  std::string output;
};

void cmd_ckpt_avg(const CkptAvgArgs& a, const Globals& g) {
  std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
  const auto avg = modelstore::average_checkpoint_files(paths, a.last, g.threads);
  modelstore::write_checkpoint(avg, a.output);
  std::cout << "averaged=" << std::min(a.last, paths.size()) << "\nstep=" << avg.meta.step
            << "\ntensors=" << avg.tensors.size() << "\nsha256=" << sha256_file(a.output) << '\n';
}

struct CkptPruneArgs {
  std::string input;
  std::string model;
  std::vector<std::string> corpora;
  std::string embed_name = "embed_tokens";
  std::string output;
  std::string vocab_out;
  bool json = false;
};

void cmd_ckpt_prune(const CkptPruneArgs& a, const Globals& g) {
  const auto ckpt = modelstore::read_checkpoint(a.input);
  const auto model = subword::load_model(a.model);
  std::vector<corpus::Corpus> corpora;
  for (const auto& f : a.corpora) corpora.push_back(corpus::load_corpus(f, corpus::TokenizationPolicy::whitespace).corpus);
  const auto keep = subword::corpus_vocab(corpora, model, g.threads);
  const auto res = modelstore::prune_embeddings(ckpt, a.embed_name, model.vocab(), keep);
  modelstore::write_checkpoint(res.checkpoint, a.output);
  if (!a.vocab_out.empty()) subword::save_vocab(res.vocab, a.vocab_out);
  if (a.json) {
    nlohmann::ordered_json j = {{"original_vocab", res.report.original_vocab},
                                {"kept_vocab", res.report.kept_vocab},
                                {"ratio", res.report.ratio},
                                {"pruned_tensors", res.pruned_tensors}};
    std::cout << j.dump(2) << '\n';
  } else {
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%.2f", res.report.ratio);
    std::cout << "original_vocab=" << res.report.original_vocab << "\nkept_vocab=" << res.report.kept_vocab
              << "\nratio=" << ratio << '\n';
  }
}

struct CkptInspectArgs {
  std::string input;
  bool json = false;
};

void cmd_ckpt_inspect(const CkptInspectArgs& a) {
  const auto c = modelstore::read_checkpoint(a.input);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& t : c.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"sha256", modelstore::tensor_checksum(t.tensor)}});
  }
  if (a.json) {
    nlohmann::ordered_json j = {{"format_version", c.meta.format_version}, {"step", c.meta.step}, {"tensors", tensors}};
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::cout << "format_version=" << c.meta.format_version << "\nstep=" << c.meta.step << "\ntensors=" << c.tensors.size()
            << '\n';
  for (const auto& t : tensors) {
    std::string shape;
    for (const auto& d : t["shape"]) shape += (shape.empty() ? "" : "x") + std::to_string(d.get<std::uint64_t>());
    std::cout << t["name"].get<std::string>() << '\t' << shape << '\t' << t["sha256"].get<std::string>() << '\n';
  }
}

// bt

struct BtArgs {
  std::string mono;
  std::string backend = "toy";
  std::string out_src;
  std::string out_tgt;
  std::string report;
  std::string mode = "sample_topk";
  std::uint32_t k = 5;
  std::uint64_t seed = 1;
  std::string src_lang = "zh";
  std::string tgt_lang = "vi";
  std::size_t min_len = 1;
  std::size_t max_len = 250;
  double max_len_ratio = 1.5;
  bool keep_empty = false;
  bool keep_src_eq_tgt = false;
  bool permissive = false;
  std::uint64_t timeout_ms = 30000;
  std::size_t max_in_flight = 64;
  std::size_t batch_size = 256;
  std::size_t toy_shift = 1;
  double toy_epsilon = 0.0;
};

void cmd_bt_run(const BtArgs& a, const Globals& g) {
  const auto tgt_policy = corpus::policy_for_language(a.tgt_lang);
  const auto mono = corpus::load_corpus(a.mono, tgt_policy).corpus;
  std::unique_ptr<decoder::TranslationBackend> backend;
  if (a.backend == "toy") {
    auto tr = std::make_shared<decoder::ToyCipherTranslator>(
        decoder::ToyCipherTranslator::from_texts(mono.lines(), {a.toy_shift, a.toy_epsilon, 1}));
    backend = std::make_unique<decoder::LocalBackend>(tr, g.threads);
  } else {
    backend = std::make_unique<decoder::RemoteBackend>(
        a.backend, decoder::ClientOptions{std::chrono::milliseconds(a.timeout_ms), a.max_in_flight});
  }
  backtranslate::BTOptions o;
  o.mode = decoder::parse_mode(a.mode);
  o.k = a.k;
  o.seed = a.seed;
  if (a.permissive) {
    o.filter = backtranslate::PairFilter::permissive();
  } else {
    o.filter = {a.min_len, a.max_len, a.max_len_ratio, !a.keep_empty, !a.keep_src_eq_tgt};
  }
  o.filter.validate();
  o.src_policy = corpus::policy_for_language(a.src_lang);
  o.tgt_policy = tgt_policy;
  o.batch_size = a.batch_size;
  o.threads = g.threads;
  const auto res = backtranslate::run_backtranslation(mono, *backend, o);
  corpus::write_parallel(a.out_src, a.out_tgt, res.corpus(o.src_policy, o.tgt_policy));
  if (!a.report.empty()) write_text(a.report, backtranslate::to_json(res.report, o.filter).dump(2) + "\n");
  std::cout << backtranslate::render_key_value(res.report);
}

// postedit

struct PosteditArgs {
  std::string src;
  std::string hyp;
  std::string out;
  std::string report;
  std::string direction = "zh-vi";
  std::string rules;
};

void cmd_postedit(const PosteditArgs& a) {
  const auto rules = a.rules.empty() ? postedit::Rules::defaults() : postedit::load_rules(a.rules);
  const auto dir = a.direction == "zh-vi" ? pipeline::Direction::zh_vi : pipeline::Direction::vi_zh;
  const std::string report = a.report.empty() ? a.out + ".report.tsv" : a.report;
  const auto s = pipeline::postedit_files(a.src, a.hyp, a.out, report, dir, rules);
  std::cout << "lines=" << s.lines << "\nedited_lines=" << s.edited_lines << "\nedits=" << s.edits
            << "\nskipped=" << s.skipped << '\n';
}

// score

struct ScoreArgs {
  std::string hyp;
  std::string ref;
  std::string lang = "vi";
  bool json = false;
};

void cmd_score(const ScoreArgs& a, const Globals& g) {
  const auto s = bleu::corpus_bleu(read_lines(a.hyp), read_lines(a.ref), bleu::parse_lang(a.lang), g.threads);
  if (a.json) {
    std::cout << bleu::to_json(s).dump(2) << '\n';
  } else {
    std::cout << bleu::render_key_value(s);
  }
}

// pipeline

struct PipelineArgs {
  std::optional<std::string> config;
  bool print_default = false;
  bool quiet = false;
};

void cmd_pipeline(const PipelineArgs& a, const std::optional<unsigned>& threads) {
  if (a.print_default) {
    std::cout << config::render_config(config::PipelineConfig{});
    return;
  }
  std::optional<fs::path> cli;
  if (a.config) cli = *a.config;
  const auto path = config::resolve_config_path(cli);
  if (!path) {
    throw UsageError(std::string("no config given: pass --config or set ") + config::kConfigEnv);
  }
  const auto cfg = config::load_config(*path);
  pipeline::RunOptions opts;
  opts.base_dir = path->has_parent_path() ? path->parent_path() : fs::path(".");
  opts.threads = threads;
  if (!a.quiet) opts.log = &std::cerr;
  const auto manifest = pipeline::run_pipeline(cfg, opts);
  std::cout << "stages_run=";
  std::string sep;
  for (const auto& s : manifest["stages_run"]) {
    std::cout << sep << s.get<std::string>();
    sep = ",";
  }
  std::cout << "\nmanifest=" << (opts.base_dir / cfg.work_dir / "manifest.json").string() << '\n';
}

// report

struct ReportArgs {
  std::string manifest;
  std::string table;
};

void cmd_report(const ReportArgs& a) {
  const auto table = pipeline::parse_table(a.table);
  std::cout << pipeline::report_table(pipeline::read_manifest(a.manifest), table);
}

// serve

struct ServeArgs {
  bool stdio = false;
  std::uint16_t port = 0;
  std::vector<std::string> alphabet_from;
  std::size_t shift = 1;
  double epsilon = 0.0;
  std::size_t copies = 1;
};

void cmd_serve(const ServeArgs& a) {
  std::vector<std::string> texts;
  for (const auto& f : a.alphabet_from) {
    auto lines = read_lines(f);
    texts.insert(texts.end(), lines.begin(), lines.end());
  }
  const auto translator = decoder::ToyCipherTranslator::from_texts(texts, {a.shift, a.epsilon, a.copies});
  if (a.stdio) {
    decoder::serve_fd(0, 1, translator);
    return;
  }
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // inherited by the server thread
  decoder::TcpLineServer server(a.port, [&](const std::string& line) {
    return std::optional<std::vector<std::string>>{{decoder::handle_request_line(line, translator)}};
  });
  std::cout << server.endpoint() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
}

int exit_code(const pipeline::PipelineError& e) {
  switch (e.category()) {
    case pipeline::PipelineError::Category::config: return kExitUsage;
    case pipeline::PipelineError::Category::data: return kExitData;
    case pipeline::PipelineError::Category::backend: return kExitBackend;
  }
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtkit: machine-translation pipeline toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pipeline::kToolVersion));
  Globals g;
  std::optional<unsigned> threads_opt;
  app.add_option("--threads", threads_opt, "worker threads for data-parallel work")
      ->check(CLI::Range(1u, 1024u));

  std::function<void()> action;

  StatsArgs stats;
  auto* c_stats = app.add_subcommand("stats", "corpus statistics (#Sents, #Vocab, Avg.Len)");
  c_stats->add_option("files", stats.files, "corpus files")->required()->check(CLI::ExistingFile);
  add_lang(c_stats, stats.lang, "language: zh counts characters, vi counts words (default vi)");
  c_stats->add_option("--policy", stats.policy, "tokenization policy, overrides --lang")
      ->check(CLI::IsMember({"char_cjk", "whitespace"}));
  c_stats->add_flag("--json", stats.json);
  c_stats->callback([&] { action = [&] { cmd_stats(stats, g); }; });

  FilterArgs filter;
  auto* c_filter = app.add_subcommand("filter", "keep sentences whose length lies in [min, max]");
  c_filter->add_option("input", filter.input)->required()->check(CLI::ExistingFile);
  c_filter->add_option("output", filter.output)->required();
  c_filter->add_option("--min-len", filter.min_len)->capture_default_str();
  c_filter->add_option("--max-len", filter.max_len)->capture_default_str();
  add_lang(c_filter, filter.lang);
  c_filter->add_option("--policy", filter.policy)->check(CLI::IsMember({"char_cjk", "whitespace"}));
  c_filter->add_flag("--dedup", filter.dedup, "drop exact duplicates before filtering");
  c_filter->add_flag("--json", filter.json);
  c_filter->callback([&] { action = [&] { cmd_filter(filter); }; });

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "uniform sample without replacement, order kept");
  c_sample->add_option("input", sample.input)->required()->check(CLI::ExistingFile);
  c_sample->add_option("output", sample.output)->required();
  c_sample->add_option("-n,--size", sample.n)->required();
  c_sample->add_option("--seed", sample.seed)->capture_default_str();
  c_sample->add_flag("--clamp", sample.clamp, "sample min(n, corpus size) instead of failing");
  c_sample->callback([&] { action = [&] { cmd_sample(sample); }; });

  auto* c_spm = app.add_subcommand("spm", "BPE subword model");
  c_spm->require_subcommand(1);
  SpmTrainArgs spm_train;
  auto* c_spm_train = c_spm->add_subcommand("train", "learn merges from corpora");
  c_spm_train->add_option("inputs", spm_train.inputs)->required()->check(CLI::ExistingFile);
  c_spm_train->add_option("--merges", spm_train.merges)->required();
  c_spm_train->add_option("-o,--output", spm_train.output)->required();
  c_spm_train->callback([&] { action = [&] { cmd_spm_train(spm_train); }; });
  SpmCodecArgs spm_enc;
  auto* c_spm_enc = c_spm->add_subcommand("encode", "text lines to token ids (or pieces)");
  c_spm_enc->add_option("--model", spm_enc.model)->required()->check(CLI::ExistingFile);
  c_spm_enc->add_option("-i,--input", spm_enc.input, "'-' for stdin")->capture_default_str();
  c_spm_enc->add_option("-o,--output", spm_enc.output, "'-' for stdout")->capture_default_str();
  c_spm_enc->add_flag("--pieces", spm_enc.pieces, "print pieces instead of ids");
  c_spm_enc->callback([&] { action = [&] { cmd_spm_encode(spm_enc); }; });
  SpmCodecArgs spm_dec;
  auto* c_spm_dec = c_spm->add_subcommand("decode", "token id lines to text");
  c_spm_dec->add_option("--model", spm_dec.model)->required()->check(CLI::ExistingFile);
  c_spm_dec->add_option("-i,--input", spm_dec.input)->capture_default_str();
  c_spm_dec->add_option("-o,--output", spm_dec.output)->capture_default_str();
  c_spm_dec->callback([&] { action = [&] { cmd_spm_decode(spm_dec); }; });

  auto* c_ckpt = app.add_subcommand("ckpt", "MTCK checkpoints");
  c_ckpt->require_subcommand(1);
  CkptAvgArgs ckpt_avg;
  auto* c_avg = c_ckpt->add_subcommand("avg", "average the last N checkpoints by step");
  c_avg->add_option("inputs", ckpt_avg.inputs)->required()->check(CLI::ExistingFile);
  c_avg->add_option("--last", ckpt_avg.last)->capture_default_str()->check(CLI::PositiveNumber);
  c_avg->add_option("-o,--output", ckpt_avg.output)->required();
  c_avg->callback([&] { action = [&] { cmd_ckpt_avg(ckpt_avg, g); }; });
  CkptPruneArgs ckpt_prune;
  auto* c_prune = c_ckpt->add_subcommand("prune", "keep embedding rows of tokens used by the corpora");
  c_prune->add_option("input", ckpt_prune.input)->required()->check(CLI::ExistingFile);
  c_prune->add_option("--model", ckpt_prune.model, "BPE model defining the full vocabulary")
      ->required()
      ->check(CLI::ExistingFile);
  c_prune->add_option("--corpus", ckpt_prune.corpora)->required()->check(CLI::ExistingFile);
  c_prune->add_option("--embed-name", ckpt_prune.embed_name)->capture_default_str();
  c_prune->add_option("-o,--output", ckpt_prune.output)->required();
  c_prune->add_option("--vocab-out", ckpt_prune.vocab_out, "write the pruned vocabulary here");
  c_prune->add_flag("--json", ckpt_prune.json);
  c_prune->callback([&] { action = [&] { cmd_ckpt_prune(ckpt_prune, g); }; });
  CkptInspectArgs ckpt_inspect;
  auto* c_inspect = c_ckpt->add_subcommand("inspect", "list tensors with shapes and checksums");
  c_inspect->add_option("input", ckpt_inspect.input)->required()->check(CLI::ExistingFile);
  c_inspect->add_flag("--json", ckpt_inspect.json);
  c_inspect->callback([&] { action = [&] { cmd_ckpt_inspect(ckpt_inspect); }; });

  auto* c_bt = app.add_subcommand("bt", "backtranslation");
  c_bt->require_subcommand(1);
  BtArgs bt;
  auto* c_bt_run = c_bt->add_subcommand("run", "translate monolingual target text into synthetic pairs");
  c_bt_run->add_option("--mono", bt.mono)->required()->check(CLI::ExistingFile);
  c_bt_run->add_option("--backend", bt.backend, "toy | tcp://HOST:PORT | exec:COMMAND")->capture_default_str();
  c_bt_run->add_option("--out-src", bt.out_src)->required();
  c_bt_run->add_option("--out-tgt", bt.out_tgt)->required();
  c_bt_run->add_option("--report", bt.report, "JSON report path");
  c_bt_run->add_option("--mode", bt.mode)->capture_default_str()->check(CLI::IsMember(kModes));
  c_bt_run->add_option("-k", bt.k)->capture_default_str()->check(CLI::PositiveNumber);
  c_bt_run->add_option("--seed", bt.seed)->capture_default_str();
  c_bt_run->add_option("--src-lang", bt.src_lang)->capture_default_str()->check(CLI::IsMember(kLangs));
  c_bt_run->add_option("--tgt-lang", bt.tgt_lang)->capture_default_str()->check(CLI::IsMember(kLangs));
  c_bt_run->add_option("--min-len", bt.min_len)->capture_default_str();
  c_bt_run->add_option("--max-len", bt.max_len)->capture_default_str();
  c_bt_run->add_option("--max-len-ratio", bt.max_len_ratio)->capture_default_str();
  c_bt_run->add_flag("--keep-empty", bt.keep_empty);
  c_bt_run->add_flag("--keep-src-eq-tgt", bt.keep_src_eq_tgt);
  c_bt_run->add_flag("--permissive", bt.permissive, "drop only empty sides");
  c_bt_run->add_option("--timeout-ms", bt.timeout_ms)->capture_default_str();
  c_bt_run->add_option("--max-in-flight", bt.max_in_flight)->capture_default_str()->check(CLI::PositiveNumber);
  c_bt_run->add_option("--batch-size", bt.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  c_bt_run->add_option("--toy-shift", bt.toy_shift)->capture_default_str();
  c_bt_run->add_option("--toy-epsilon", bt.toy_epsilon)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  c_bt_run->callback([&] { action = [&] { cmd_bt_run(bt, g); }; });

  auto* c_pe = app.add_subcommand("postedit", "number and date post-editing");
  c_pe->require_subcommand(1);
  PosteditArgs pe;
  auto* c_pe_run = c_pe->add_subcommand("run", "correct numbers and dates in a translation file");
  c_pe_run->add_option("--src", pe.src)->required()->check(CLI::ExistingFile);
  c_pe_run->add_option("--hyp", pe.hyp)->required()->check(CLI::ExistingFile);
  c_pe_run->add_option("-o,--output", pe.out)->required();
  c_pe_run->add_option("--report", pe.report, "TSV of edits (default OUTPUT.report.tsv)");
  c_pe_run->add_option("--direction", pe.direction, "zh-vi, or vi-zh (experimental)")
      ->capture_default_str()
      ->check(CLI::IsMember({"zh-vi", "vi-zh"}));
  c_pe_run->add_option("--rules", pe.rules, "extra unit and digit patterns")->check(CLI::ExistingFile);
  c_pe_run->callback([&] { action = [&] { cmd_postedit(pe); }; });

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "corpus BLEU against one reference");
  c_score->add_option("--hyp", score.hyp)->required()->check(CLI::ExistingFile);
  c_score->add_option("--ref", score.ref)->required()->check(CLI::ExistingFile);
  add_lang(c_score, score.lang, "target language for tokenization (default vi)");
  c_score->add_flag("--json", score.json);
  c_score->callback([&] { action = [&] { cmd_score(score, g); }; });

  PipelineArgs pl;
  auto* c_pl = app.add_subcommand("pipeline", "run the stages enabled in a config file");
  c_pl->add_option("-c,--config", pl.config, std::string("config file (default $") + config::kConfigEnv + ")");
  c_pl->add_flag("--print-default-config", pl.print_default, "print a config with every default and exit");
  c_pl->add_flag("-q,--quiet", pl.quiet);
  c_pl->callback([&] { action = [&] { cmd_pipeline(pl, threads_opt); }; });

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "render a summary table from a run manifest");
  c_report->add_option("--manifest", report.manifest)->required();
  c_report->add_option("--table", report.table)
      ->required()
      ->check(CLI::IsMember({"data_stats", "synthetic_stats", "results"}));
  c_report->callback([&] { action = [&] { cmd_report(report); }; });

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "serve the toy cipher translator over the line protocol");
  auto* o_stdio = c_serve->add_flag("--stdio", serve.stdio, "speak on stdin/stdout");
  c_serve->add_option("--port", serve.port, "TCP port on 127.0.0.1 (0 picks one)")->excludes(o_stdio);
  c_serve->add_option("--alphabet-from", serve.alphabet_from, "files whose characters form the alphabet")
      ->required()
      ->check(CLI::ExistingFile);
  c_serve->add_option("--shift", serve.shift)->capture_default_str();
  c_serve->add_option("--epsilon", serve.epsilon)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  c_serve->add_option("--copies", serve.copies)->capture_default_str()->check(CLI::PositiveNumber);
  c_serve->callback([&] { action = [&] { cmd_serve(serve); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  if (threads_opt) g.threads = *threads_opt;

  try {
    action();
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const pipeline::PipelineError& e) {
    std::cerr << "error";
    if (!e.stage().empty()) std::cerr << " in stage " << e.stage();
    std::cerr << ": " << e.what() << '\n';
    return exit_code(e);
  } catch (const decoder::BackendUnavailable& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return kExitBackend;
  } catch (const corpus::CorpusError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == corpus::CorpusError::Kind::invalid_argument ? kExitUsage : kExitData;
  } catch (const backtranslate::BacktranslateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}
