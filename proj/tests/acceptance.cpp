// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mtkit/backend.hpp"
#include "mtkit/backtranslate.hpp"
#include "mtkit/bleu.hpp"
#include "mtkit/config.hpp"
#include "mtkit/corpus.hpp"
#include "mtkit/decoder.hpp"
#include "mtkit/modelstore.hpp"
#include "mtkit/pipeline.hpp"
#include "mtkit/postedit.hpp"
#include "mtkit/rng.hpp"
#include "mtkit/subword.hpp"
#include "test_util.hpp"

using namespace mtkit;
using mtkit::testing::PrefixHashModel;
using mtkit::testing::read_file;
using mtkit::testing::TableModel;
using mtkit::testing::TempDir;
using mtkit::testing::write_file;

namespace {

pipeline::RunOptions at(const TempDir& dir) {
  pipeline::RunOptions o;
  o.base_dir = dir.path();
  return o;
}

/// Collects the first few failure messages of a criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_.size() < 3) failures_.push_back(what);
    ++count_;
  }
  bool ok() const { return count_ == 0; }
  std::string detail() const {
    std::string out;
    for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + f;
    if (count_ > failures_.size()) out += "; +" + std::to_string(count_ - failures_.size()) + " more";
    return out;
  }

 private:
  std::vector<std::string> failures_;
  std::size_t count_ = 0;
};

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  const auto p = s.find(from);
  if (p != std::string::npos) s.replace(p, from.size(), to);
  return s;
}

// 1. Post-edit goldens.
void postedit_goldens(Check& c) {
  const std::vector<std::tuple<std::string, std::string, std::string, std::string>> pairs = {
      {"原因在于澳大利亚决定取消总额400亿美元的向法国采购核潜艇合同，转而与美国和英国开展联合项目。",
       "Nguyên nhân là do Australia quyết định hủy hợp đồng mua tàu ngầm hạt nhân trị giá 4 tỷ USD cho Pháp, "
       "chuyển sang triển khai dự án chung với Mỹ và Anh.",
       "4 tỷ", "40 tỷ"},
      {"目前，美国和欧盟都期待在2021年12月1日前达成解决钢铁和铝贸易争端的协议。",
       "Hiện cả Mỹ và EU đều trông đợi một thỏa thuận giải quyết tranh chấp thương mại thép và nhôm trước ngày "
       "1/1/2021.",
       "1/1/2021", "1/12/2021"},
  };
  for (const auto& [src, hyp, before, after] : pairs) {
    const std::string want = replace_once(hyp, before, after);
    const auto once = postedit::correct_translation(src, hyp);
    c.expect(once.text == want, "got '" + once.text + "'");
    const auto twice = postedit::correct_translation(src, once.text);
    c.expect(twice.text == once.text && twice.edits.empty(), "second pass changed '" + once.text + "'");
  }
}

/// Independent zh form for v < 10^12: X亿Y万Z with empty parts left out.
std::string zh_form(std::uint64_t v, bool with_tail) {
  const auto x = v / 100000000, y = v / 10000 % 10000, z = v % 10000;
  std::string s;
  if (x) s += std::to_string(x) + "亿";
  if (y) s += std::to_string(y) + "万";
  if (z && with_tail && y) s += std::to_string(z);
  if (s.empty()) s = std::to_string(z);
  return s;
}

// 2. Numeral oracle.
void numeral_oracle(Check& c) {
  std::mt19937_64 gen(20221);
  for (int i = 0; i < 10000; ++i) {
    // Mix magnitudes so every unit word is exercised.
    const std::uint64_t cap = std::uint64_t(1) << (1 + gen() % 39);
    std::uint64_t v = gen() % std::min<std::uint64_t>(cap, 1000000000000ULL);
    if (i % 4 == 0) v -= v % 100000000;  // round values favour unit renderings
    const auto value = postedit::DecimalValue::integer(static_cast<std::int64_t>(v));
    const auto vi = postedit::render_vi_number(value);
    const auto es = postedit::extract_vi_entities("giá " + vi + " đồng");
    c.expect(es.size() == 1 && es[0].value == value, "vi " + std::to_string(v) + " -> '" + vi + "'");

    // zh: numbers with both 亿 and 万 parts, optionally with a tail.
    const std::uint64_t x = gen() % 10000, y = gen() % 10000, z = i % 2 ? gen() % 10000 : 0;
    const std::uint64_t w = x * 100000000 + y * 10000 + z;
    const auto zh = zh_form(w, z != 0);
    const std::uint64_t expect = (y || !x) ? w : w - z;  // a tail is only written after a 万 part
    const auto zs = postedit::extract_zh_entities("总额" + zh + "美元");
    c.expect(zs.size() == 1 && zs[0].value == postedit::DecimalValue::integer(static_cast<std::int64_t>(expect)),
             "zh '" + zh + "'");
  }
}

modelstore::Checkpoint random_checkpoint(std::mt19937_64& gen, std::uint64_t step) {
  std::uniform_real_distribution<float> d(-100.0f, 100.0f);
  modelstore::Checkpoint ck;
  ck.meta.step = step;
  for (const auto& [name, shape] : std::vector<std::pair<std::string, std::vector<std::uint64_t>>>{
           {"embed_tokens", {50, 8}}, {"layer.0.w", {8, 8}}, {"layer.0.b", {8}}}) {
    std::vector<float> data(std::accumulate(shape.begin(), shape.end(), std::uint64_t(1), std::multiplies<>()));
    for (auto& x : data) x = d(gen);
    ck.add(name, modelstore::Tensor(shape, data));
  }
  return ck;
}

// 3. Checkpoint averaging.
void averaging(Check& c) {
  std::mt19937_64 gen(3);
  std::vector<modelstore::Checkpoint> cks;
  for (int i = 1; i <= 7; ++i) cks.push_back(random_checkpoint(gen, 1000 * i));
  const auto avg = modelstore::average_checkpoints(cks, 5);
  for (const auto& nt : avg.tensors) {
    for (std::size_t j = 0; j < nt.tensor.data().size(); ++j) {
      double sum = 0;
      for (int i = 2; i < 7; ++i) sum += cks[i].find(nt.name)->data()[j];
      c.expect(std::abs(nt.tensor.data()[j] - sum / 5) <= 1e-6 * std::max(1.0, std::abs(sum / 5)),
               nt.name + " element " + std::to_string(j));
    }
  }
  c.expect(avg.meta.step == 7000, "step");
  std::vector<modelstore::Checkpoint> same(5, cks[0]);
  for (std::size_t i = 0; i < same.size(); ++i) same[i].meta.step = i + 1;
  const auto id = modelstore::average_checkpoints(same, 5);
  for (const auto& nt : id.tensors) c.expect(nt.tensor == *cks[0].find(nt.name), "identity " + nt.name);
  auto shuffled = cks;
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  c.expect(modelstore::average_checkpoints(shuffled, 5) == avg, "permutation changed the average");
  c.expect(modelstore::average_checkpoints(cks, 5, 4) == avg, "thread count changed the average");
}

// 4. Pruning.
void pruning(Check& c) {
  std::vector<std::string> toks(subword::kSpecialTokens.begin(), subword::kSpecialTokens.end());
  for (std::size_t i = toks.size(); i < 250; ++i) toks.push_back("t" + std::to_string(i));
  const subword::SubwordVocab vocab(toks);
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> emb(250 * 16);
  for (auto& x : emb) x = d(gen);
  modelstore::Checkpoint ck;
  ck.add("embed_tokens", modelstore::Tensor({250, 16}, emb));
  ck.add("layer.w", modelstore::Tensor::filled({16, 16}, 0.5f));
  std::set<subword::TokenId> keep;
  while (keep.size() < 61) keep.insert(static_cast<subword::TokenId>(6 + gen() % 244));
  const auto r = modelstore::prune_embeddings(ck, "embed_tokens", vocab, keep);
  c.expect(r.report.original_vocab == 250, "original " + std::to_string(r.report.original_vocab));
  c.expect(r.report.kept_vocab == 67, "kept " + std::to_string(r.report.kept_vocab));
  c.expect(std::abs(r.report.ratio - 3.73) < 0.005, "ratio " + std::to_string(r.report.ratio));
  std::vector<subword::TokenId> kept_ids;
  for (subword::TokenId i = 0; i < 6; ++i) kept_ids.push_back(i);
  kept_ids.insert(kept_ids.end(), keep.begin(), keep.end());
  const auto& pe = *r.checkpoint.find("embed_tokens");
  c.expect(pe.shape() == std::vector<std::uint64_t>{67, 16}, "pruned shape");
  for (std::size_t row = 0; row < kept_ids.size() && row < 67; ++row) {
    c.expect(std::memcmp(pe.data().data() + row * 16, emb.data() + kept_ids[row] * 16, 16 * sizeof(float)) == 0,
             "row " + std::to_string(row));
    c.expect(r.vocab.token(static_cast<subword::TokenId>(row)) == toks[kept_ids[row]], "vocab row " + std::to_string(row));
  }
  const auto none = modelstore::prune_embeddings(ck, "embed_tokens", vocab, {});
  c.expect(none.report.kept_vocab == 6, "specials must survive an empty keep set");
  c.expect(*r.checkpoint.find("layer.w") == *ck.find("layer.w"), "other tensors must pass through");
}

/// Rank of `t` among `logits` with lower id first on ties; computed here independently.
std::size_t rank_of(const std::vector<double>& logits, decoder::TokenId t) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i] > logits[t] || (logits[i] == logits[t] && i < t)) ++r;
  }
  return r;
}

// 5. Top-k sampling.
void topk(Check& c) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const PrefixHashModel m(12, 0, seed / 10);
    const auto h = decoder::decode_topk_sample(m, {}, 5, seed, 8);
    for (std::size_t i = 0; i < h.tokens.size(); ++i) {
      const auto logits = m.next_logits({}, std::span(h.tokens).first(i));
      c.expect(rank_of(logits, h.tokens[i]) <= 5, "seed " + std::to_string(seed) + " step " + std::to_string(i));
    }
    c.expect(decoder::decode_topk_sample(m, {}, 1, seed, 8).tokens == decoder::decode_greedy(m, {}, 8).tokens,
             "k=1 differs from greedy, seed " + std::to_string(seed));
  }
  const TableModel two({{std::log(3.0), 0.0, -50.0}}, 2);
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) hits += decoder::decode_topk_sample(two, {}, 2, seed, 1).tokens.at(0) == 0;
  const double sigma = std::sqrt(10000 * 0.75 * 0.25);
  c.expect(std::abs(hits - 7500) <= 3 * sigma, "binomial count " + std::to_string(hits));
}

// 6. Beam search against exhaustive enumeration.
void beam_oracle(Check& c) {
  for (std::uint64_t t = 0; t < 100; ++t) {
    const std::size_t V = 2 + t % 4, L = 1 + t % 3;
    const decoder::TokenId eos = static_cast<decoder::TokenId>(t % V);
    const PrefixHashModel m(V, eos, 1000 + t);
    std::vector<decoder::TokenId> best;
    double best_score = -INFINITY;
    std::function<void(std::vector<decoder::TokenId>&, double)> walk = [&](std::vector<decoder::TokenId>& seq, double score) {
      const bool done = !seq.empty() && seq.back() == eos;
      if (done || seq.size() == L) {
        if (score > best_score + 1e-12 || (std::abs(score - best_score) <= 1e-12 && seq < best)) {
          best_score = score;
          best = seq;
        }
        return;
      }
      const auto logits = m.next_logits({}, seq);
      double mx = *std::max_element(logits.begin(), logits.end()), z = 0;
      for (double x : logits) z += std::exp(x - mx);
      for (decoder::TokenId v = 0; v < V; ++v) {
        seq.push_back(v);
        walk(seq, score + logits[v] - mx - std::log(z));
        seq.pop_back();
      }
    };
    std::vector<decoder::TokenId> seq;
    walk(seq, 0.0);
    std::size_t width = 1;
    for (std::size_t i = 0; i < L; ++i) width *= V;
    const auto hs = decoder::decode_beam(m, {}, width, L);
    c.expect(!hs.empty() && hs[0].tokens == best && std::abs(hs[0].score - best_score) <= 1e-9,
             "table " + std::to_string(t));
  }
}

/// Reference BLEU for the smoothing contract, written against plain maps.
double reference_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  double match[4] = {}, total[4] = {}, sys = 0, ref = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = bleu::tokenize_for_bleu(hyps[s], bleu::Lang::vi), r = bleu::tokenize_for_bleu(refs[s], bleu::Lang::vi);
    sys += h.size();
    ref += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, int> hc, rc;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hc[{h.begin() + i, h.begin() + i + n}];
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++rc[{r.begin() + i, r.begin() + i + n}];
      for (const auto& [g, k] : hc) {
        total[n - 1] += k;
        if (rc.count(g)) match[n - 1] += std::min(k, rc[g]);
      }
    }
  }
  if (sys == 0) return 0;
  double logs = 0, smooth = 1;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0) continue;
    ++orders;
    if (match[n] == 0) smooth *= 2;
    logs += std::log(match[n] == 0 ? 1.0 / (smooth * total[n]) : match[n] / total[n]);
  }
  return 100.0 * (sys < ref ? std::exp(1 - ref / sys) : 1.0) * std::exp(logs / orders);
}

// 7. BLEU.
void bleu_oracle(Check& c) {
  const std::vector<std::string> corpus = {"xin chào thế giới .", "hôm nay trời đẹp", "một hai ba bốn năm sáu"};
  c.expect(bleu::corpus_bleu(corpus, corpus, bleu::Lang::vi).bleu == 100.0, "identical corpora");
  const auto s = bleu::corpus_bleu({"a b c d"}, {"a b c d e"}, bleu::Lang::vi);
  c.expect(std::abs(s.bleu - 77.9) <= 0.05, "4-vs-5 example scored " + std::to_string(s.bleu));
  std::mt19937_64 gen(7);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f", "g"};
  int zero_cases = 0;
  for (int t = 0; t < 2000 && zero_cases < 300; ++t) {
    std::vector<std::string> hyps, refs;
    const auto n = 1 + gen() % 3;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string h, r;
      for (std::uint64_t j = 0, l = gen() % 7; j < l; ++j) h += (j ? " " : "") + words[gen() % words.size()];
      for (std::uint64_t j = 0, l = 1 + gen() % 7; j < l; ++j) r += (j ? " " : "") + words[gen() % words.size()];
      hyps.push_back(h);
      refs.push_back(r);
    }
    bleu::NgramStats st;
    for (std::size_t i = 0; i < n; ++i) {
      st += bleu::sentence_stats(bleu::tokenize_for_bleu(hyps[i], bleu::Lang::vi), bleu::tokenize_for_bleu(refs[i], bleu::Lang::vi));
    }
    bool zero_overlap = false;
    for (int k = 0; k < 4; ++k) zero_overlap |= st.totals[k] > 0 && st.matches[k] == 0;
    if (!zero_overlap) continue;
    ++zero_cases;
    const double got = bleu::corpus_bleu(hyps, refs, bleu::Lang::vi).bleu, want = reference_bleu(hyps, refs);
    c.expect(std::abs(got - want) <= 1e-9, "zero-overlap case " + std::to_string(t));
  }
  c.expect(zero_cases >= 100, "too few zero-overlap cases");
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string mono_fixture(std::size_t n) {
  std::mt19937_64 gen(8);
  const std::vector<std::string> words = {"xin", "chào", "thế", "giới", "hôm", "nay", "trời", "đẹp", "Việt", "Nam", "2021", "."};
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = 3 + gen() % 12;
    for (std::uint64_t j = 0; j < len; ++j) out += (j ? " " : "") + words[gen() % words.size()];
    out += "\n";
  }
  return out;
}

// 8. Backtranslation end to end.
void backtranslation(Check& c) {
  TempDir dir;
  write_file(dir / "mono.vi", mono_fixture(300));
  const auto mono = corpus::load_corpus(dir / "mono.vi", corpus::TokenizationPolicy::whitespace).corpus;
  auto tr = std::make_shared<decoder::ToyCipherTranslator>(decoder::ToyCipherTranslator::from_texts(mono.lines(), {3, 0.0, 1}));
  decoder::LocalBackend backend(tr, 2);
  backtranslate::BTOptions o;
  o.seed = 11;
  const auto res = backtranslate::run_backtranslation(mono, backend, o);
  c.expect(res.pairs.size() == mono.size(), "noiseless run kept " + std::to_string(res.pairs.size()));
  for (const auto& p : res.pairs) c.expect(tr->decipher(p.src) == p.tgt && tr->encipher(p.tgt) == p.src, "inversion: " + p.tgt);

  config::PipelineConfig cfg;
  cfg.stages = {"backtranslate"};
  cfg.mono = "mono.vi";
  cfg.toy_epsilon = 0.3;
  cfg.seed = 5;
  const auto m1 = pipeline::run_pipeline(cfg, at(dir));
  const auto& r = m1["stages"]["backtranslate"];
  const auto total = r["n_pairs"].get<std::size_t>() + r["n_dropped"].get<std::size_t>() + r["n_failures"].get<std::size_t>();
  c.expect(total == mono.size(), "report does not add up: " + std::to_string(total));
  c.expect(r["n_dropped"].get<std::size_t>() > 0, "noisy run should drop something");
  cfg.work_dir = "work2";
  cfg.threads = 3;
  const auto m2 = pipeline::run_pipeline(cfg, at(dir));
  c.expect(m2["stages"]["backtranslate"]["checksum"] == r["checksum"], "checksums differ between runs");
  c.expect(read_file(dir / "work" / "synthetic.zh") == read_file(dir / "work2" / "synthetic.zh"), "outputs differ");
}

// 9. Corpus stage and defaults.
void corpus_stage(Check& c) {
  auto line_of = [](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
    return s;
  };
  const auto fixture = corpus::Corpus::from_lines({line_of(9), line_of(10), line_of(60), line_of(61)},
                                                   corpus::TokenizationPolicy::whitespace);
  const auto f = corpus::filter_by_length(fixture, corpus::LengthFilter{});
  c.expect(f.corpus.lines() == std::vector<std::string>{line_of(10), line_of(60)}, "filter [10,60] boundaries");
  c.expect(f.report.kept == 2 && f.report.dropped == 2, "filter report");

  // Hand count: 3 sentences, 4+2+3 = 9 tokens, types {a,b,c,d,e}.
  const auto hand = corpus::Corpus::from_lines({"a b c a", "d e", "a b e"}, corpus::TokenizationPolicy::whitespace);
  const auto st = corpus::compute_stats(hand, corpus::TokenizationPolicy::whitespace);
  c.expect(st.n_sents == 3 && st.vocab_size == 5 && st.avg_len == 3.0, corpus::render_key_value(st));
  const auto zh = corpus::Corpus::from_lines({"你好世界", "世界和平!"}, corpus::TokenizationPolicy::char_cjk);
  const auto zs = corpus::compute_stats(zh, corpus::TokenizationPolicy::char_cjk);
  c.expect(zs.n_sents == 2 && zs.vocab_size == 7 && zs.avg_len == 4.5, corpus::render_key_value(zs));

  const config::TrainingConfig t;
  c.expect(t.max_updates == 120000, "max updates");
  c.expect(t.patience == 10, "patience");
  c.expect(t.optimizer == "adam", "optimizer");
  c.expect(t.adam_eps == 1e-06, "adam eps");
  c.expect(t.adam_betas == std::vector<double>{0.9, 0.98}, "adam betas");
  c.expect(t.warmup_updates == 2500, "warmup");
  c.expect(t.lr == 3e-05, "lr");
  c.expect(t.dropout == 0.3, "dropout");
  c.expect(t.attention_dropout == 0.1, "attention dropout");
  c.expect(t.max_tokens == 1024, "max tokens");
  c.expect(config::parse_config("").training == t, "empty config must give the defaults");
}

// 10. Format round-trips.
void round_trips(Check& c) {
  TempDir dir;
  std::mt19937_64 gen(10);
  auto ck = random_checkpoint(gen, 424242);
  ck.add("neg_zero", modelstore::Tensor({2}, {-0.0f, std::numeric_limits<float>::quiet_NaN()}));
  modelstore::write_checkpoint(ck, dir / "a.mtck");
  const auto ck2 = modelstore::read_checkpoint(dir / "a.mtck");
  c.expect(ck2 == ck, "checkpoint load(save(x)) != x");
  modelstore::write_checkpoint(ck2, dir / "b.mtck");
  c.expect(read_file(dir / "a.mtck") == read_file(dir / "b.mtck"), "checkpoint bytes differ");

  const auto corpus = corpus::Corpus::from_lines(split_lines(mono_fixture(50)), corpus::TokenizationPolicy::whitespace);
  const auto model = subword::train_bpe(corpus, 40);
  subword::save_model(model, dir / "m.bpe");
  const auto model2 = subword::load_model(dir / "m.bpe");
  c.expect(model2 == model, "subword model load(save(x)) != x");
  subword::save_model(model2, dir / "m2.bpe");
  c.expect(read_file(dir / "m.bpe") == read_file(dir / "m2.bpe"), "subword model bytes differ");

  config::PipelineConfig cfg;
  cfg.stages = {"stats", "filter", "sample", "backtranslate"};
  cfg.mono = "mono.vi";
  cfg.toy_epsilon = 0.05;
  cfg.systems = {{"Base", "b.valid", "b.test"}};
  config::save_config(cfg, dir / "p.cfg");
  const auto cfg2 = config::load_config(dir / "p.cfg");
  c.expect(cfg2 == cfg, "config load(save(x)) != x");
  config::save_config(cfg2, dir / "p2.cfg");
  c.expect(read_file(dir / "p.cfg") == read_file(dir / "p2.cfg"), "config bytes differ");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"post-edit goldens and fixed points", postedit_goldens},
      {"numeral render/extract oracle", numeral_oracle},
      {"checkpoint averaging", averaging},
      {"embedding pruning 250 -> 67", pruning},
      {"top-k sampling", topk},
      {"beam search vs brute force", beam_oracle},
      {"BLEU oracle", bleu_oracle},
      {"backtranslation end to end", backtranslation},
      {"corpus filter, stats and defaults", corpus_stage},
      {"format round-trips", round_trips},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    std::cout << (c.ok() ? "PASS" : "FAIL") << ' ' << i + 1 << ' ' << criteria[i].first;
    if (!c.ok()) std::cout << ": " << c.detail();
    std::cout << '\n';
    failed += !c.ok();
  }
  return failed ? 1 : 0;
}
