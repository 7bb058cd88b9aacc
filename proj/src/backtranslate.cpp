#include "mtkit/backtranslate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mtkit/checksum.hpp"
#include "mtkit/rng.hpp"
#include "mtkit/text.hpp"

namespace mtkit::backtranslate {

std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::empty: return "empty";
    case DropReason::src_eq_tgt: return "src_eq_tgt";
    case DropReason::too_short: return "too_short";
    case DropReason::too_long: return "too_long";
    case DropReason::len_ratio: return "len_ratio";
  }
  return "?";
}

std::string_view to_string(Origin o) { return o == Origin::bitext ? "bitext" : "synthetic"; }

void PairFilter::validate() const {
  if (min_len > max_len) throw BacktranslateError("pair filter needs min_len <= max_len");
  if (!(max_len_ratio >= 1.0)) throw BacktranslateError("pair filter needs max_len_ratio >= 1");
}

std::optional<DropReason> PairFilter::check(std::string_view src, std::string_view tgt,
                                            TokenizationPolicy src_policy,
                                            TokenizationPolicy tgt_policy) const {
  if (drop_empty && (text::is_blank(src) || text::is_blank(tgt))) return DropReason::empty;
  if (drop_src_eq_tgt && src == tgt) return DropReason::src_eq_tgt;
  const auto ls = corpus::token_count(src, src_policy);
  const auto lt = corpus::token_count(tgt, tgt_policy);
  if (ls < min_len || lt < min_len) return DropReason::too_short;
  if (ls > max_len || lt > max_len) return DropReason::too_long;
  const auto lo = std::min(ls, lt);
  const auto hi = std::max(ls, lt);
  if (hi > 0 && (lo == 0 || static_cast<double>(hi) / static_cast<double>(lo) > max_len_ratio)) {
    return DropReason::len_ratio;
  }
  return std::nullopt;
}

PairFilter PairFilter::permissive() {
  PairFilter f;
  f.min_len = 0;
  f.max_len = SIZE_MAX;
  f.max_len_ratio = 1e300;
  f.drop_src_eq_tgt = false;
  return f;
}

std::size_t BTReport::n_dropped() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : drops) n += count;
  return n;
}

bool BTReport::consistent() const { return n_pairs + n_dropped() + failures.size() == n_mono; }

ParallelCorpus BTResult::corpus(TokenizationPolicy src_policy, TokenizationPolicy tgt_policy) const {
  ParallelCorpus pc;
  pc.src_policy = src_policy;
  pc.tgt_policy = tgt_policy;
  pc.pairs.reserve(pairs.size());
  for (const auto& p : pairs) pc.pairs.push_back({p.src, p.tgt});
  return pc;
}

std::string pair_checksum(const std::vector<corpus::SentencePair>& pairs) {
  Sha256 h;
  for (const auto& p : pairs) {
    h.update(p.src);
    h.update("\t");
    h.update(p.tgt);
    h.update("\n");
  }
  return h.hex_digest();
}

BTResult run_backtranslation(const Corpus& mono, decoder::TranslationBackend& backend,
                             const BTOptions& options) {
  options.filter.validate();
  if (options.k == 0) throw BacktranslateError("k must be >= 1");
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);

  BTResult result;
  BTReport& report = result.report;
  report.n_mono = mono.size();
  report.model_id = backend.id();
  report.mode = options.mode;
  report.k = options.k;
  report.seed = options.seed;
  for (auto r : kDropReasons) report.drops[r] = 0;

  for (std::size_t first = 0; first < mono.size(); first += batch) {
    const std::size_t last = std::min(mono.size(), first + batch);
    std::vector<std::string> texts;
    texts.reserve(last - first);
    for (std::size_t i = first; i < last; ++i) texts.push_back(mono.sentences[i].text);
    auto translated = backend.translate_batch(texts, options.mode, options.k, options.seed, first);
    if (translated.size() != texts.size()) {
      throw BacktranslateError("backend returned " + std::to_string(translated.size()) +
                               " results for " + std::to_string(texts.size()) + " sentences");
    }
    for (std::size_t j = 0; j < texts.size(); ++j) {
      const std::size_t i = first + j;
      auto& t = translated[j];
      if (t.ok() && t.text->find_first_of("\r\n") != std::string::npos) {
        t.failure = FailureKind::protocol;
        t.message = "translation contains a line break";
        t.text.reset();
      }
      if (t.ok() && !text::is_valid_utf8(*t.text)) {
        t.failure = FailureKind::protocol;
        t.message = "translation is not valid UTF-8";
        t.text.reset();
      }
      if (!t.ok()) {
        report.failures.push_back({i, t.failure == FailureKind::none ? FailureKind::server_error : t.failure,
                                   t.message});
        continue;
      }
      const auto& tgt = texts[j];
      if (auto reason = options.filter.check(*t.text, tgt, options.src_policy, options.tgt_policy)) {
        ++report.drops[*reason];
        continue;
      }
      result.pairs.push_back(
          {std::move(*t.text), tgt, {stream_seed(options.seed, i), report.model_id, options.k}});
    }
  }

  report.n_pairs = result.pairs.size();
  const auto pc = result.corpus(options.src_policy, options.tgt_policy);
  report.src_stats = corpus::compute_stats(pc.source_side(), options.src_policy, options.threads);
  report.tgt_stats = corpus::compute_stats(pc.target_side(), options.tgt_policy, options.threads);
  report.checksum = pair_checksum(pc.pairs);
  return result;
}

nlohmann::json to_json(const BTReport& report, const PairFilter& filter) {
  nlohmann::json drops = nlohmann::json::object();
  for (const auto& [reason, count] : report.drops) drops[std::string(to_string(reason))] = count;
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : report.failures) {
    failures.push_back({{"index", f.index},
                        {"kind", std::string(decoder::to_string(f.kind))},
                        {"message", f.message}});
  }
  return {
      {"n_mono", report.n_mono},
      {"n_pairs", report.n_pairs},
      {"n_dropped", report.n_dropped()},
      {"n_failures", report.failures.size()},
      {"drops", drops},
      {"failures", failures},
      {"src_stats", corpus::to_json(report.src_stats)},
      {"tgt_stats", corpus::to_json(report.tgt_stats)},
      {"checksum", report.checksum},
      {"config",
       {{"model_id", report.model_id},
        {"mode", std::string(decoder::to_string(report.mode))},
        {"k", report.k},
        {"seed", report.seed},
        {"pair_filter",
         {{"min_len", filter.min_len},
          {"max_len", filter.max_len},
          {"max_len_ratio", filter.max_len_ratio},
          {"drop_empty", filter.drop_empty},
          {"drop_src_eq_tgt", filter.drop_src_eq_tgt}}}}},
  };
}

std::string render_key_value(const BTReport& report) {
  std::ostringstream os;
  os << "n_mono=" << report.n_mono << '\n'
     << "n_pairs=" << report.n_pairs << '\n'
     << "n_failures=" << report.failures.size() << '\n';
  for (const auto& [reason, count] : report.drops) os << "drop." << to_string(reason) << '=' << count << '\n';
  os << "src.vocab_size=" << report.src_stats.vocab_size << '\n'
     << "src.avg_len=" << std::llround(report.src_stats.avg_len) << '\n'
     << "tgt.vocab_size=" << report.tgt_stats.vocab_size << '\n'
     << "tgt.avg_len=" << std::llround(report.tgt_stats.avg_len) << '\n'
     << "checksum=" << report.checksum << '\n';
  return os.str();
}

MergedCorpus merge_corpora(const ParallelCorpus& bitext, const ParallelCorpus& synthetic,
                           std::size_t upsample_bitext) {
  if (upsample_bitext == 0) throw BacktranslateError("upsample_bitext must be >= 1");
  MergedCorpus out;
  out.corpus.src_policy = bitext.src_policy;
  out.corpus.tgt_policy = bitext.tgt_policy;
  out.corpus.pairs.reserve(bitext.size() * upsample_bitext + synthetic.size());
  for (std::size_t c = 0; c < upsample_bitext; ++c) {
    for (std::size_t i = 0; i < bitext.size(); ++i) {
      out.corpus.pairs.push_back(bitext.pairs[i]);
      out.origins.push_back({Origin::bitext, c, i});
    }
  }
  for (std::size_t i = 0; i < synthetic.size(); ++i) {
    out.corpus.pairs.push_back(synthetic.pairs[i]);
    out.origins.push_back({Origin::synthetic, 0, i});
  }
  return out;
}

void write_origin_sidecar(const std::filesystem::path& path, const std::vector<OriginTag>& origins) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw BacktranslateError("cannot write " + path.string());
  out << "origin\tcopy\tindex\n";
  for (const auto& o : origins) out << to_string(o.origin) << '\t' << o.copy << '\t' << o.index << '\n';
  if (!out.flush()) throw BacktranslateError("write failed: " + path.string());
}

std::vector<OriginTag> read_origin_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BacktranslateError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "origin\tcopy\tindex") {
    throw BacktranslateError(path.string() + ": missing sidecar header");
  }
  std::vector<OriginTag> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string origin;
    OriginTag tag;
    if (!(std::getline(fields, origin, '\t') && fields >> tag.copy >> tag.index) ||
        (origin != "bitext" && origin != "synthetic")) {
      throw BacktranslateError(path.string() + ":" + std::to_string(line_no) + ": bad sidecar line");
    }
    tag.origin = origin == "bitext" ? Origin::bitext : Origin::synthetic;
    out.push_back(tag);
  }
  return out;
}

}  // namespace mtkit::backtranslate
