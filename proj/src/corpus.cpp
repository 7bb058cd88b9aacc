#include "mtkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mtkit/parallel.hpp"
#include "mtkit/rng.hpp"
#include "mtkit/text.hpp"

namespace mtkit::corpus {

std::string_view to_string(TokenizationPolicy p) {
  return p == TokenizationPolicy::char_cjk ? "char_cjk" : "whitespace";
}

TokenizationPolicy parse_policy(std::string_view name) {
  if (name == "char_cjk") return TokenizationPolicy::char_cjk;
  if (name == "whitespace") return TokenizationPolicy::whitespace;
  throw CorpusError(CorpusError::Kind::invalid_argument,
                    "unknown tokenization policy '" + std::string(name) + "'");
}

TokenizationPolicy policy_for_language(std::string_view lang) {
  if (lang == "zh") return TokenizationPolicy::char_cjk;
  if (lang == "vi") return TokenizationPolicy::whitespace;
  throw CorpusError(CorpusError::Kind::invalid_argument,
                    "unknown language '" + std::string(lang) + "' (expected zh or vi)");
}

Corpus Corpus::from_lines(const std::vector<std::string>& lines, TokenizationPolicy policy) {
  Corpus c;
  c.policy = policy;
  c.sentences.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) c.sentences.push_back({lines[i], i});
  return c;
}

std::vector<std::string> Corpus::lines() const {
  std::vector<std::string> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(s.text);
  return out;
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError(CorpusError::Kind::io, "cannot open " + path.string());
  return in;
}

void check_utf8(std::string_view line, const std::filesystem::path& path, std::size_t lineno) {
  if (auto bad = text::find_invalid_utf8(line)) {
    throw CorpusError(CorpusError::Kind::invalid_utf8,
                      path.string() + ":" + std::to_string(lineno) + ": invalid UTF-8 at byte " +
                          std::to_string(*bad),
                      lineno);
  }
}

}  // namespace

LoadedCorpus load_corpus(const std::filesystem::path& path, TokenizationPolicy policy) {
  auto in = open_input(path);
  LoadedCorpus out;
  out.corpus.policy = policy;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    const std::size_t lineno = index + 1;
    std::string_view view = text::trim_cr(line);
    check_utf8(view, path, lineno);
    if (text::is_blank(view)) {
      ++out.report.blank_dropped;
    } else {
      out.corpus.sentences.push_back({std::string(view), index});
    }
    ++index;
  }
  if (in.bad()) throw CorpusError(CorpusError::Kind::io, "read error on " + path.string());
  out.report.lines = index;
  return out;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError(CorpusError::Kind::io, "cannot write " + path.string());
  for (const auto& s : corpus.sentences) out << s.text << '\n';
  if (!out) throw CorpusError(CorpusError::Kind::io, "write error on " + path.string());
}

std::vector<std::string_view> tokenize(std::string_view s, TokenizationPolicy policy) {
  std::vector<std::string_view> tokens;
  std::size_t run_start = std::string_view::npos;
  auto close_run = [&](std::size_t end) {
    if (run_start != std::string_view::npos) {
      tokens.push_back(s.substr(run_start, end - run_start));
      run_start = std::string_view::npos;
    }
  };
  const std::u32string cps = text::decode(s);
  std::size_t byte = 0;
  for (char32_t cp : cps) {
    const std::size_t len = text::utf8_length(cp);
    if (text::is_space(cp)) {
      close_run(byte);
    } else if (policy == TokenizationPolicy::char_cjk && text::is_cjk(cp)) {
      close_run(byte);
      tokens.push_back(s.substr(byte, len));
    } else if (run_start == std::string_view::npos) {
      run_start = byte;
    }
    byte += len;
  }
  close_run(byte);
  return tokens;
}

std::size_t token_count(std::string_view s, TokenizationPolicy policy) {
  return tokenize(s, policy).size();
}

CorpusStats compute_stats(const Corpus& corpus, TokenizationPolicy policy, unsigned threads) {
  const std::size_t n = corpus.size();
  const std::size_t shards = shard_count(n, threads);
  std::vector<std::unordered_set<std::string_view>> vocab(shards);
  std::vector<std::size_t> tokens(shards, 0);
  parallel_shards(n, threads, [&](std::size_t shard, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (auto tok : tokenize(corpus.sentences[i].text, policy)) {
        vocab[shard].insert(tok);
        ++tokens[shard];
      }
    }
  });
  for (std::size_t s = 1; s < shards; ++s) vocab[0].merge(vocab[s]);

  CorpusStats stats;
  stats.n_sents = n;
  stats.vocab_size = vocab[0].size();
  const std::size_t total = std::accumulate(tokens.begin(), tokens.end(), std::size_t{0});
  stats.avg_len = n == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(n);
  return stats;
}

void LengthFilter::validate() const {
  if (min_len < 1 || min_len > max_len) {
    throw CorpusError(CorpusError::Kind::invalid_argument,
                      "length filter requires 1 <= min_len <= max_len, got [" +
                          std::to_string(min_len) + ", " + std::to_string(max_len) + "]");
  }
}

FilteredCorpus filter_by_length(const Corpus& corpus, const LengthFilter& filter) {
  filter.validate();
  FilteredCorpus out;
  out.corpus.policy = corpus.policy;
  for (const auto& s : corpus.sentences) {
    const std::size_t len = token_count(s.text, filter.policy);
    if (len >= filter.min_len && len <= filter.max_len) {
      out.corpus.sentences.push_back(s);
    }
  }
  out.report.kept = out.corpus.size();
  out.report.dropped = corpus.size() - out.report.kept;
  out.report.coverage = corpus.empty() ? 0.0
                                       : static_cast<double>(out.report.kept) /
                                             static_cast<double>(corpus.size());
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed) {
  if (n > total) {
    throw CorpusError(CorpusError::Kind::invalid_argument,
                      "cannot sample " + std::to_string(n) + " sentences from a corpus of " +
                          std::to_string(total));
  }
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n == total) return idx;
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Corpus sample_uniform(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  Corpus out;
  out.policy = corpus.policy;
  out.sentences.reserve(n);
  for (std::size_t i : sample_indices(corpus.size(), n, seed)) {
    out.sentences.push_back(corpus.sentences[i]);
  }
  return out;
}

DedupResult dedup(const Corpus& corpus) {
  DedupResult out;
  out.corpus.policy = corpus.policy;
  std::unordered_set<std::string_view> seen;
  for (const auto& s : corpus.sentences) {
    if (seen.insert(s.text).second) {
      out.corpus.sentences.push_back(s);
    } else {
      ++out.removed;
    }
  }
  return out;
}

Corpus ParallelCorpus::source_side() const {
  Corpus c;
  c.policy = src_policy;
  for (std::size_t i = 0; i < pairs.size(); ++i) c.sentences.push_back({pairs[i].src, i});
  return c;
}

Corpus ParallelCorpus::target_side() const {
  Corpus c;
  c.policy = tgt_policy;
  for (std::size_t i = 0; i < pairs.size(); ++i) c.sentences.push_back({pairs[i].tgt, i});
  return c;
}

LoadedParallel load_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt,
                             TokenizationPolicy src_policy, TokenizationPolicy tgt_policy) {
  auto in_src = open_input(src);
  auto in_tgt = open_input(tgt);
  LoadedParallel out;
  out.corpus.src_policy = src_policy;
  out.corpus.tgt_policy = tgt_policy;
  std::string a;
  std::string b;
  std::size_t lineno = 0;
  for (;;) {
    const bool has_a = static_cast<bool>(std::getline(in_src, a));
    const bool has_b = static_cast<bool>(std::getline(in_tgt, b));
    if (!has_a && !has_b) break;
    ++lineno;
    if (has_a != has_b) {
      throw CorpusError(CorpusError::Kind::misaligned,
                        "parallel files differ in line count: " + src.string() + " vs " +
                            tgt.string() + " (diverge at line " + std::to_string(lineno) + ")");
    }
    std::string_view va = text::trim_cr(a);
    std::string_view vb = text::trim_cr(b);
    check_utf8(va, src, lineno);
    check_utf8(vb, tgt, lineno);
    if (text::is_blank(va) || text::is_blank(vb)) {
      ++out.report.blank_dropped;
    } else {
      out.corpus.pairs.push_back({std::string(va), std::string(vb)});
    }
  }
  out.report.lines = lineno;
  return out;
}

void write_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt,
                    const ParallelCorpus& corpus) {
  write_corpus(src, corpus.source_side());
  write_corpus(tgt, corpus.target_side());
}

std::string render_key_value(const CorpusStats& stats) {
  std::ostringstream os;
  os << "n_sents=" << stats.n_sents << '\n'
     << "vocab_size=" << stats.vocab_size << '\n'
     << "avg_len=" << std::llround(stats.avg_len) << '\n';
  return os.str();
}

std::string render_key_value(const FilterReport& report) {
  std::ostringstream os;
  os << "kept=" << report.kept << '\n'
     << "dropped=" << report.dropped << '\n'
     << "coverage=" << report.coverage << '\n';
  return os.str();
}

nlohmann::json to_json(const CorpusStats& stats) {
  return {{"n_sents", stats.n_sents}, {"vocab_size", stats.vocab_size}, {"avg_len", stats.avg_len}};
}

nlohmann::json to_json(const FilterReport& report) {
  return {{"kept", report.kept}, {"dropped", report.dropped}, {"coverage", report.coverage}};
}

nlohmann::json to_json(const LoadReport& report) {
  return {{"lines", report.lines}, {"blank_dropped", report.blank_dropped}};
}

CorpusStats stats_from_json(const nlohmann::json& j) {
  CorpusStats s;
  s.n_sents = j.at("n_sents").get<std::size_t>();
  s.vocab_size = j.at("vocab_size").get<std::size_t>();
  s.avg_len = j.at("avg_len").get<double>();
  return s;
}

}  // namespace mtkit::corpus
