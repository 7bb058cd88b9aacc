#include "mtkit/bleu.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "mtkit/parallel.hpp"
#include "mtkit/text.hpp"

namespace mtkit::bleu {

std::string_view to_string(Lang lang) { return lang == Lang::zh ? "zh" : "vi"; }

Lang parse_lang(std::string_view name) {
  if (name == "zh") return Lang::zh;
  if (name == "vi") return Lang::vi;
  throw BleuError("unknown language '" + std::string(name) + "' (expected zh or vi)");
}

std::vector<std::string> tokenize_for_bleu(std::string_view s, Lang lang) {
  const std::u32string cps = text::decode(s);
  std::vector<std::string> out;
  if (lang == Lang::zh) {
    std::u32string run;
    auto flush = [&] {
      if (!run.empty()) out.push_back(text::encode(run));
      run.clear();
    };
    for (char32_t c : cps) {
      if (text::is_space(c)) {
        flush();
      } else if (text::is_cjk(c) || text::is_punct(c)) {
        flush();
        out.push_back(text::encode(c));
      } else {
        run.push_back(c);
      }
    }
    flush();
    return out;
  }
  std::size_t i = 0;
  while (i < cps.size()) {
    while (i < cps.size() && text::is_space(cps[i])) ++i;
    std::size_t j = i;
    while (j < cps.size() && !text::is_space(cps[j])) ++j;
    if (i == j) break;
    std::size_t b = i, e = j;
    while (b < e && text::is_punct(cps[b])) out.push_back(text::encode(cps[b++]));
    std::size_t te = e;
    while (te > b && text::is_punct(cps[te - 1])) --te;
    if (b < te) out.push_back(text::encode(std::u32string_view(cps).substr(b, te - b)));
    for (std::size_t k = te; k < e; ++k) out.push_back(text::encode(cps[k]));
    i = j;
  }
  return out;
}

NgramStats& NgramStats::operator+=(const NgramStats& o) {
  for (int n = 0; n < kMaxOrder; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  sys_len += o.sys_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

using Counts = std::unordered_map<std::string, std::uint64_t>;

Counts ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  Counts c;
  if (toks.size() < n) return c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += toks[i + k];
    }
    ++c[key];
  }
  return c;
}

}  // namespace

NgramStats sentence_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  NgramStats st;
  st.sys_len = hyp.size();
  st.ref_len = ref.size();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto h = ngram_counts(hyp, static_cast<std::size_t>(n));
    const auto r = ngram_counts(ref, static_cast<std::size_t>(n));
    std::uint64_t total = 0, match = 0;
    for (const auto& [g, c] : h) {
      total += c;
      if (auto it = r.find(g); it != r.end()) match += std::min(c, it->second);
    }
    st.totals[n - 1] = total;
    st.matches[n - 1] = match;
  }
  return st;
}

BleuScore compute_bleu(const NgramStats& st) {
  BleuScore s;
  s.sys_len = st.sys_len;
  s.ref_len = st.ref_len;
  if (st.sys_len == 0) return s;
  s.bp = st.sys_len < st.ref_len
             ? std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.sys_len))
             : 1.0;
  double smooth = 1.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (st.totals[n] == 0) continue;
    ++s.effective_order;
    if (st.matches[n] == 0) {
      smooth *= 2.0;
      s.precisions[n] = 1.0 / (smooth * static_cast<double>(st.totals[n]));
    } else {
      s.precisions[n] = static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]);
    }
    log_sum += std::log(s.precisions[n]);
  }
  s.bleu = 100.0 * s.bp * std::exp(log_sum / s.effective_order);
  return s;
}

BleuScore corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                      Lang lang, unsigned threads) {
  if (hyps.size() != refs.size()) {
    throw BleuError("hypothesis count " + std::to_string(hyps.size()) + " != reference count " +
                    std::to_string(refs.size()));
  }
  if (hyps.empty()) throw BleuError("cannot score an empty corpus");
  std::vector<NgramStats> partial(shard_count(hyps.size(), threads));
  parallel_shards(hyps.size(), threads, [&](std::size_t shard, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      partial[shard] += sentence_stats(tokenize_for_bleu(hyps[i], lang), tokenize_for_bleu(refs[i], lang));
    }
  });
  NgramStats total;
  for (const auto& p : partial) total += p;
  return compute_bleu(total);
}

double round_half_up(double value, int decimals) {
  const double f = std::pow(10.0, decimals);
  // The small bias absorbs binary representation error at exact halves.
  return std::floor(value * f + 0.5 + 1e-9) / f;
}

double BleuScore::rounded() const { return round_half_up(bleu, 1); }

std::string BleuScore::formatted() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", rounded());
  return buf;
}

std::string render_key_value(const BleuScore& s) {
  std::ostringstream os;
  os << "bleu=" << s.formatted() << '\n';
  for (int n = 0; n < kMaxOrder; ++n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", s.precisions[n]);
    os << "p" << n + 1 << '=' << buf << '\n';
  }
  char bp[32];
  std::snprintf(bp, sizeof bp, "%.4f", s.bp);
  os << "bp=" << bp << '\n' << "sys_len=" << s.sys_len << '\n' << "ref_len=" << s.ref_len << '\n';
  return os.str();
}

nlohmann::json to_json(const BleuScore& s) {
  return {{"bleu", s.rounded()},        {"bleu_raw", s.bleu},       {"precisions", s.precisions},
          {"bp", s.bp},                 {"sys_len", s.sys_len},     {"ref_len", s.ref_len},
          {"effective_order", s.effective_order}};
}

}  // namespace mtkit::bleu
