#include "doctest.h"
#include "mtkit/checksum.hpp"
#include "mtkit/modelstore.hpp"
#include "test_util.hpp"

#include <bit>
#include <cstring>
#include <random>

using namespace mtkit;
using namespace mtkit::modelstore;
using mtkit::testing::TempDir;

namespace {

/// Independent little-endian encoder for hand-built files.
struct Bytes {
  std::string s;
  Bytes& raw(std::string_view v) {
    s.append(v);
    return *this;
  }
  Bytes& u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
    return *this;
  }
  Bytes& u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
    return *this;
  }
  Bytes& f32(float v) { return u32(std::bit_cast<std::uint32_t>(v)); }
};

Checkpoint two_tensor(std::uint64_t step = 10) {
  Checkpoint c;
  c.meta.step = step;
  c.add("embed_tokens", Tensor({2, 3}, {1.f, -0.f, 2.5f, 3.f, 1e-30f, -7.f}));
  c.add("layer.0.bias", Tensor({2}, {0.125f, std::bit_cast<float>(0x7FC00001u)}));
  return c;
}

Checkpoint random_checkpoint(std::mt19937_64& rng, std::uint64_t step) {
  std::normal_distribution<float> d(0.f, 1.f);
  Checkpoint c;
  c.meta.step = step;
  for (auto [name, shape] : {std::pair<std::string, std::vector<std::uint64_t>>{"a", {4, 5}},
                             {"b", {7}},
                             {"c", {2, 2, 3}}}) {
    std::vector<float> v(Tensor::filled(shape, 0).numel());
    for (auto& x : v) x = d(rng);
    c.add(name, Tensor(shape, v));
  }
  return c;
}

ModelStoreError::Kind kind_of(std::string_view bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const ModelStoreError& e) {
    return e.kind();
  }
  FAIL("expected a ModelStoreError");
  return ModelStoreError::Kind::io;
}

}  // namespace

TEST_CASE("MTCK layout matches the documented byte order") {
  Checkpoint c;
  c.meta.step = 5000;
  c.add("w", Tensor({1, 2}, {1.0f, -2.0f}));
  const auto expected = Bytes{}
                            .raw("MTCK")
                            .u32(1)
                            .u64(5000)
                            .u32(1)
                            .u32(1)
                            .raw("w")
                            .u32(2)
                            .u64(1)
                            .u64(2)
                            .u64(2)
                            .f32(1.0f)
                            .f32(-2.0f)
                            .s;
  CHECK(serialize_checkpoint(c) == expected);
  CHECK(parse_checkpoint(expected) == c);
}

TEST_CASE("checkpoint file round-trip is bit-exact, including -0 and NaN payloads") {
  TempDir d;
  const auto c = two_tensor();
  write_checkpoint(c, d / "a.mtck");
  const auto back = read_checkpoint(d / "a.mtck");
  CHECK(back == c);
  CHECK(std::bit_cast<std::uint32_t>(back.find("layer.0.bias")->data()[1]) == 0x7FC00001u);
  write_checkpoint(back, d / "b.mtck");
  CHECK(mtkit::testing::read_file(d / "a.mtck") == mtkit::testing::read_file(d / "b.mtck"));
}

TEST_CASE("each corruption gives a distinct error") {
  const auto good = serialize_checkpoint(two_tensor());
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == ModelStoreError::Kind::magic_mismatch);
  CHECK(kind_of("MT") == ModelStoreError::Kind::magic_mismatch);
  std::string bad_version = good;
  bad_version[4] = 2;
  CHECK(kind_of(bad_version) == ModelStoreError::Kind::version_mismatch);
  CHECK(kind_of(std::string_view(good).substr(0, good.size() - 3)) == ModelStoreError::Kind::truncated);
  CHECK(kind_of(std::string_view(good).substr(0, 10)) == ModelStoreError::Kind::truncated);
  CHECK(kind_of(good + "x") == ModelStoreError::Kind::trailing_data);
  const auto five_for_six = Bytes{}
                                .raw("MTCK")
                                .u32(1)
                                .u64(0)
                                .u32(1)
                                .u32(1)
                                .raw("t")
                                .u32(2)
                                .u64(2)
                                .u64(3)
                                .u64(5)
                                .f32(0)
                                .f32(0)
                                .f32(0)
                                .f32(0)
                                .f32(0)
                                .s;
  CHECK(kind_of(five_for_six) == ModelStoreError::Kind::length_mismatch);
  const auto dup = Bytes{}.raw("MTCK").u32(1).u64(0).u32(2)
                       .u32(1).raw("t").u32(1).u64(1).u64(1).f32(1)
                       .u32(1).raw("t").u32(1).u64(1).u64(1).f32(1).s;
  CHECK(kind_of(dup) == ModelStoreError::Kind::invalid_name);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), ModelStoreError);
  CHECK_THROWS_AS(Tensor({}, {}), ModelStoreError);
  CHECK(Tensor::filled({3, 4}, 1.f).row_size() == 4);
  CHECK(Tensor({1}, {0.f}) != Tensor({1}, {-0.f}));
}

TEST_CASE("averaging: midpoint, last-N mean and identity") {
  Checkpoint a, b;
  a.meta.step = 1;
  b.meta.step = 2;
  a.add("t", Tensor::filled({3, 2}, 0.f));
  b.add("t", Tensor::filled({3, 2}, 2.f));
  const auto mid = average_checkpoints({a, b}, 2);
  CHECK(*mid.find("t") == Tensor::filled({3, 2}, 1.f));
  CHECK(mid.meta.step == 2);

  std::vector<Checkpoint> seven;
  for (int v = 1; v <= 7; ++v) {
    Checkpoint c;
    c.meta.step = static_cast<std::uint64_t>(v) * 5000;
    c.add("s", Tensor({1}, {static_cast<float>(v)}));
    seven.push_back(c);
  }
  const auto avg = average_checkpoints(seven, 5);
  CHECK(avg.find("s")->data()[0] == 5.0f);
  CHECK(avg.meta.step == 35000);

  std::mt19937_64 rng(3);
  const auto c = random_checkpoint(rng, 9);
  std::vector<Checkpoint> same;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    auto copy = c;
    copy.meta.step = s;
    same.push_back(copy);
  }
  auto ident = average_checkpoints(same, 5);
  ident.meta.step = c.meta.step;
  CHECK(ident == c);
}

TEST_CASE("averaging matches a double reference and ignores input order and threads") {
  std::mt19937_64 rng(11);
  std::vector<Checkpoint> cs;
  for (std::uint64_t s : {300, 100, 500, 200, 400, 600}) cs.push_back(random_checkpoint(rng, s));
  const auto avg = average_checkpoints(cs, 5);
  // Reference: the five highest steps are 600..200.
  for (const auto& [name, t] : avg.tensors) {
    for (std::size_t i = 0; i < t.data().size(); ++i) {
      double sum = 0;
      for (const auto& c : cs) {
        if (c.meta.step >= 200) sum += c.find(name)->data()[i];
      }
      CHECK(std::abs(t.data()[i] - sum / 5) <= 1e-6);
    }
  }
  auto shuffled = cs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(average_checkpoints(shuffled, 5) == avg);
  CHECK(average_checkpoints(cs, 5, 3) == avg);
}

TEST_CASE("averaging errors") {
  std::mt19937_64 rng(5);
  const auto a = random_checkpoint(rng, 1);
  auto b = random_checkpoint(rng, 2);
  auto kind = [](const std::vector<Checkpoint>& cs, std::size_t n) {
    try {
      average_checkpoints(cs, n);
    } catch (const ModelStoreError& e) {
      return e.kind();
    }
    return ModelStoreError::Kind::io;
  };
  CHECK(kind({a, b}, 3) == ModelStoreError::Kind::not_enough_checkpoints);
  CHECK(kind({a, a}, 2) == ModelStoreError::Kind::duplicate_step);
  Checkpoint renamed;
  renamed.meta.step = 3;
  for (const auto& t : a.tensors) renamed.add(t.name == "b" ? "bb" : t.name, t.tensor);
  CHECK(kind({a, renamed}, 2) == ModelStoreError::Kind::name_mismatch);
  Checkpoint reshaped;
  reshaped.meta.step = 4;
  for (const auto& t : a.tensors) {
    reshaped.add(t.name, t.name == "a" ? Tensor({5, 4}, t.tensor.data()) : t.tensor);
  }
  CHECK(kind({a, reshaped}, 2) == ModelStoreError::Kind::shape_mismatch);
}

TEST_CASE("averaging files") {
  TempDir d;
  std::mt19937_64 rng(8);
  std::vector<std::filesystem::path> paths;
  std::vector<Checkpoint> cs;
  for (std::uint64_t s = 1; s <= 6; ++s) {
    cs.push_back(random_checkpoint(rng, s * 5000));
    paths.push_back(d / ("c" + std::to_string(s) + ".mtck"));
    write_checkpoint(cs.back(), paths.back());
  }
  CHECK(average_checkpoint_files(paths) == average_checkpoints(cs));
}

namespace {

subword::SubwordVocab make_vocab(std::size_t n) {
  std::vector<std::string> toks(subword::kSpecialTokens.begin(), subword::kSpecialTokens.end());
  for (std::size_t i = toks.size(); i < n; ++i) toks.push_back("t" + std::to_string(i));
  return subword::SubwordVocab(toks);
}

Checkpoint embed_checkpoint(std::size_t vocab, std::size_t dim) {
  Checkpoint c;
  std::vector<float> e(vocab * dim), bias(vocab), other(6);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<float>(i) * 0.37f - 11.f;
  for (std::size_t i = 0; i < vocab; ++i) bias[i] = static_cast<float>(i);
  c.add("embed_tokens", Tensor({vocab, dim}, e));
  c.add("encoder.layer", Tensor({2, 3}, other));
  c.add("output_bias", Tensor({vocab}, bias));
  return c;
}

}  // namespace

TEST_CASE("pruning keeps exact rows, specials and order") {
  const auto v = make_vocab(20);
  const auto c = embed_checkpoint(20, 4);
  const std::set<subword::TokenId> keep = {15, 7, 9};
  const auto r = prune_embeddings(c, "embed_tokens", v, keep);
  CHECK(r.report.original_vocab == 20);
  CHECK(r.report.kept_vocab == 9);
  CHECK(r.report.ratio == doctest::Approx(20.0 / 9.0));
  CHECK(r.vocab.tokens() == std::vector<std::string>{"<pad>", "<unk>", "<s>", "</s>", "zh_CN", "vi_VN", "t7", "t9", "t15"});
  const auto& e = *r.checkpoint.find("embed_tokens");
  CHECK(e.shape() == std::vector<std::uint64_t>{9, 4});
  for (subword::TokenId old = 0; old < 20; ++old) {
    if (!r.remap[old]) continue;
    const auto nid = *r.remap[old];
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::bit_cast<std::uint32_t>(e.data()[nid * 4 + j]) ==
            std::bit_cast<std::uint32_t>(c.find("embed_tokens")->data()[old * 4 + j]));
    }
  }
  CHECK(!r.remap[8]);
  CHECK(r.checkpoint.find("output_bias")->data() == std::vector<float>{0, 1, 2, 3, 4, 5, 7, 9, 15});
  CHECK(*r.checkpoint.find("encoder.layer") == *c.find("encoder.layer"));
  CHECK(r.pruned_tensors == std::vector<std::string>{"embed_tokens", "output_bias"});
}

TEST_CASE("pruning edge cases") {
  const auto v = make_vocab(12);
  const auto c = embed_checkpoint(12, 3);
  std::set<subword::TokenId> all;
  for (subword::TokenId i = 0; i < 12; ++i) all.insert(i);
  const auto full = prune_embeddings(c, "embed_tokens", v, all);
  CHECK(full.checkpoint == c);
  CHECK(full.report.ratio == 1.0);
  const auto none = prune_embeddings(c, "embed_tokens", v, {});
  CHECK(none.vocab.size() == subword::kNumSpecials);
  CHECK(none.checkpoint.find("embed_tokens")->data() ==
        std::vector<float>(c.find("embed_tokens")->data().begin(), c.find("embed_tokens")->data().begin() + 18));
  auto kind = [&](const Checkpoint& ck, std::string_view name, const std::set<subword::TokenId>& keep) {
    try {
      prune_embeddings(ck, name, v, keep);
    } catch (const ModelStoreError& e) {
      return e.kind();
    }
    return ModelStoreError::Kind::io;
  };
  CHECK(kind(c, "missing", {}) == ModelStoreError::Kind::missing_tensor);
  CHECK(kind(embed_checkpoint(13, 3), "embed_tokens", {}) == ModelStoreError::Kind::vocab_mismatch);
  CHECK(kind(c, "embed_tokens", {12}) == ModelStoreError::Kind::vocab_mismatch);
}

TEST_CASE("tensor checksum is the sha256 of the little-endian payload") {
  const Tensor t({2}, {1.0f, -2.0f});
  CHECK(tensor_checksum(t) == sha256_hex(Bytes{}.f32(1.0f).f32(-2.0f).s));
}
