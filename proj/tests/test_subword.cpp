#include "doctest.h"
#include "mtkit/subword.hpp"
#include "mtkit/text.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <map>
#include <random>

using namespace mtkit;
using namespace mtkit::subword;
using corpus::Corpus;
using mtkit::testing::TempDir;

namespace {

const std::string kEow(kEndOfWordUtf8);

/// Textbook BPE: recount every pair each round, merge left to right.
std::vector<Merge> reference_bpe(const std::vector<std::string>& lines, std::size_t n_merges) {
  std::vector<std::vector<std::string>> words;
  for (const auto& line : lines) {
    std::size_t start = 0;
    for (;;) {
      const auto sp = line.find(' ', start);
      const std::string w = line.substr(start, sp == std::string::npos ? std::string::npos : sp - start);
      std::vector<std::string> syms = text::split_code_points(w);
      syms.push_back(kEow);
      words.push_back(syms);
      if (sp == std::string::npos) break;
      start = sp + 1;
    }
  }
  std::vector<Merge> merges;
  while (merges.size() < n_merges) {
    std::map<std::pair<std::string, std::string>, std::size_t> counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.size(); ++i) counts[{w[i], w[i + 1]}]++;
    }
    std::pair<std::string, std::string> best;
    std::size_t best_n = 0;
    for (const auto& [p, n] : counts) {
      if (n > best_n) {  // map order is lexicographic, so the first maximum wins ties
        best = p;
        best_n = n;
      }
    }
    if (best_n < 2) break;
    merges.push_back({best.first, best.second});
    for (auto& w : words) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == best.first && w[i + 1] == best.second) {
          out.push_back(best.first + best.second);
          ++i;
        } else {
          out.push_back(w[i]);
        }
      }
      w = std::move(out);
    }
  }
  return merges;
}

}  // namespace

TEST_CASE("hand-run merges on the low/lower corpus") {
  const auto m = train_bpe(Corpus::from_lines({"low low low", "lower"}), 2);
  REQUIRE(m.merges().merges.size() == 2);
  CHECK(m.merges().merges[0] == Merge{"l", "o"});
  CHECK(m.merges().merges[1] == Merge{"lo", "w"});
  // Two merges leave the end-of-word symbol separate.
  CHECK(m.segment("low") == std::vector<std::string>{"low", kEow});
}

TEST_CASE("a third merge absorbs the end-of-word symbol") {
  const auto m = train_bpe(Corpus::from_lines({"low low low", "lower"}), 3);
  REQUIRE(m.merges().merges.size() == 3);
  CHECK(m.merges().merges[2] == Merge{"low", kEow});
  CHECK(m.segment("low") == std::vector<std::string>{"low" + kEow});
  CHECK(m.encode("low").size() == 1);
}

TEST_CASE("a repeated word ends as a single token after full merges") {
  const auto m = train_bpe(Corpus::from_lines({"banana banana", "banana"}), 100);
  CHECK(m.encode("banana").size() == 1);
  CHECK(m.vocab().token(m.encode("banana")[0]) == "banana" + kEow);
}

TEST_CASE("zero merges: specials, marker and characters only") {
  const auto m = train_bpe(Corpus::from_lines({"ba ab", "c"}), 0);
  CHECK(m.merges().merges.empty());
  CHECK(m.vocab().tokens() ==
        std::vector<std::string>{"<pad>", "<unk>", "<s>", "</s>", "zh_CN", "vi_VN", kEow, "a", "b", "c"});
}

TEST_CASE("training stops when no pair occurs twice") {
  const auto m = train_bpe(Corpus::from_lines({"abc"}), 10);
  CHECK(m.merges().merges.empty());
  CHECK_THROWS_AS(train_bpe(Corpus{}, 3), SubwordError);
}

TEST_CASE("trainer agrees with the textbook algorithm on random corpora") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> alphabet = {"a", "b", "c", "ă", "中", "文"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> lines;
    const int n_lines = 1 + static_cast<int>(rng() % 8);
    for (int l = 0; l < n_lines; ++l) {
      std::string line;
      const int n_words = 1 + static_cast<int>(rng() % 5);
      for (int w = 0; w < n_words; ++w) {
        if (w) line += ' ';
        const int len = 1 + static_cast<int>(rng() % 5);
        for (int c = 0; c < len; ++c) line += alphabet[rng() % alphabet.size()];
      }
      lines.push_back(line);
    }
    const std::size_t n = rng() % 25;
    CHECK(train_bpe(Corpus::from_lines(lines), n).merges().merges == reference_bpe(lines, n));
  }
}

TEST_CASE("encode and decode") {
  const std::vector<std::string> lines = {"xin chào thế giới", "  hai  dấu cách ", "中文 句子", "chào chào"};
  const auto m = train_bpe(Corpus::from_lines(lines), 20);
  CHECK(m.encode("").empty());
  CHECK(m.decode({}).empty());
  for (const auto& l : lines) CHECK(m.decode(m.encode(l)) == l);
  const auto ids = m.encode("xQn");
  CHECK(std::count(ids.begin(), ids.end(), kUnkId) == 1);
  CHECK(m.decode(ids).find("<unk>") != std::string::npos);
  CHECK_THROWS_AS(m.encode("a" + kEow), SubwordError);
  CHECK(m.decode({kBosId, kZhTagId, kEosId, kPadId}).empty());
  CHECK(encode("chào", m) == m.encode("chào"));
}

TEST_CASE("retraining is deterministic") {
  const auto c = Corpus::from_lines({"aa bb aa", "ab ab ba", "bbb aaa"});
  CHECK(train_bpe(c, 6) == train_bpe(c, 6));
}

TEST_CASE("corpus_vocab") {
  const auto m = train_bpe(Corpus::from_lines({"ab", "cd"}), 0);
  const std::set<TokenId> specials = {0, 1, 2, 3, 4, 5};
  CHECK(corpus_vocab({}, m) == specials);
  auto one = corpus_vocab({Corpus::from_lines({"ab"})}, m);
  std::set<TokenId> expected = specials;
  for (auto t : {"a", "b"}) expected.insert(*m.vocab().find(t));
  expected.insert(*m.vocab().find(kEow));
  CHECK(one == expected);
  const auto c1 = Corpus::from_lines({"ab"});
  const auto c2 = Corpus::from_lines({"dc a"});
  auto u = corpus_vocab({c1}, m);
  const auto v2 = corpus_vocab({c2}, m);
  u.insert(v2.begin(), v2.end());
  CHECK(corpus_vocab({c1, c2}, m) == u);
  CHECK(corpus_vocab({c1, c2}, m, 3) == u);
  // Monotone: adding sentences never shrinks it.
  const auto bigger = corpus_vocab({Corpus::from_lines({"ab", "dc a"})}, m);
  CHECK(std::includes(bigger.begin(), bigger.end(), one.begin(), one.end()));
}

TEST_CASE("vocab validation") {
  CHECK_THROWS_AS(SubwordVocab({"<unk>", "<pad>", "<s>", "</s>", "zh_CN", "vi_VN"}), SubwordError);
  CHECK_THROWS_AS(SubwordVocab({"<pad>", "<unk>", "<s>", "</s>", "zh_CN", "vi_VN", "a", "a"}), SubwordError);
}

TEST_CASE("model file round-trips bit-exactly") {
  TempDir d;
  const auto m = train_bpe(Corpus::from_lines({"a\\b c\td", "a\\b a\\b", "c\td c\td"}), 10);
  save_model(m, d / "m.bpe");
  const auto bytes = mtkit::testing::read_file(d / "m.bpe");
  CHECK(bytes.rfind("#mtkit-bpe 1\nspecials 6\n<pad>\n", 0) == 0);
  const auto back = load_model(d / "m.bpe");
  CHECK(back == m);
  save_model(back, d / "m2.bpe");
  CHECK(mtkit::testing::read_file(d / "m2.bpe") == bytes);
  CHECK(serialize_model(parse_model(bytes)) == bytes);
}

TEST_CASE("model file errors carry line numbers") {
  CHECK_THROWS_AS(parse_model("nope\n"), SubwordError);
  CHECK_THROWS_AS(parse_model("#mtkit-bpe 1\nspecials 6\n"), SubwordError);
  try {
    parse_model("#mtkit-bpe 1\nspecials x\n");
    FAIL("expected an error");
  } catch (const SubwordError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("vocab file round-trips") {
  const SubwordVocab v({"<pad>", "<unk>", "<s>", "</s>", "zh_CN", "vi_VN", "a b", "\\"});
  const auto s = serialize_vocab(v);
  CHECK(parse_vocab(s) == v);
  CHECK(serialize_vocab(parse_vocab(s)) == s);
  CHECK_THROWS_AS(parse_vocab("#mtkit-vocab 1\ntokens 3\n<pad>\n"), SubwordError);
}
