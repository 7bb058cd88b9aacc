#include "doctest.h"
#include "mtkit/checksum.hpp"
#include "mtkit/parallel.hpp"
#include "mtkit/rng.hpp"
#include "mtkit/text.hpp"

#include <atomic>
#include <set>

using namespace mtkit;

TEST_CASE("utf8 validation rejects malformed sequences") {
  CHECK(text::is_valid_utf8("héllo 你好"));
  CHECK(text::find_invalid_utf8("ab\xC0\xAF") == 2u);      // overlong '/'
  CHECK(text::find_invalid_utf8("\xED\xA0\x80") == 0u);    // surrogate
  CHECK(text::find_invalid_utf8("\xF4\x90\x80\x80") == 0u);  // above U+10FFFF
  CHECK(text::find_invalid_utf8("abc\xE4\xBD") == 3u);     // truncated
}

TEST_CASE("utf8 decode and encode round-trip") {
  const std::string s = "Việt 中文 ▁";
  CHECK(text::encode(text::decode(s)) == s);
  CHECK(text::split_code_points("a你b").size() == 3);
  CHECK_THROWS_AS(text::decode("\xFF"), std::invalid_argument);
}

TEST_CASE("character classes") {
  CHECK(text::is_cjk(U'中'));
  CHECK(text::is_cjk(0x3400));
  CHECK_FALSE(text::is_cjk(U'a'));
  CHECK(text::is_space(0x3000));
  CHECK(text::is_punct(U'，'));
  CHECK(text::is_punct(U'.'));
  CHECK(text::is_letter(U'ệ'));
  CHECK_FALSE(text::is_letter(U'5'));
  CHECK(text::trim_cr("ab\r\r") == "ab");
  CHECK(text::is_blank(" \t"));
}

TEST_CASE("sha256 matches the FIPS 180-2 test vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  Sha256 h;
  h.update("a");
  h.update("bc");
  CHECK(h.hex_digest() == sha256_hex("abc"));
}

TEST_CASE("splitmix64 matches the reference sequence") {
  // Reference values of SplitMix64 seeded with 0.
  SplitMix64 r(0);
  CHECK(r.next() == 0xE220A8397B1DCDAFULL);
  CHECK(r.next() == 0x6E789E6AA1B965F4ULL);
  CHECK(r.next() == 0x06C45D188009454FULL);
}

TEST_CASE("splitmix64 below stays in range and covers it") {
  SplitMix64 r(42);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  SplitMix64 u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("stream seeds differ per index and are stable") {
  CHECK(stream_seed(1, 0) != stream_seed(1, 1));
  CHECK(stream_seed(1, 5) == mix64(1 ^ mix64(6)));
}

TEST_CASE("parallel_shards covers the range exactly once") {
  for (unsigned threads : {1u, 2u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(101);
    parallel_shards(hits.size(), threads, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) hits[i]++;
    });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK(shard_count(0, 4) == 1);
  CHECK(shard_count(3, 8) == 3);
  CHECK_THROWS_AS(parallel_shards(10, 3, [](std::size_t s, std::size_t, std::size_t) {
                    if (s == 1) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}
