#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "mtkit/decoder.hpp"

namespace mtkit::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mtkit_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Step model with a fixed logit table per step; the source is ignored.
/// Steps beyond the table reuse its last row.
class TableModel : public decoder::StepModel {
 public:
  TableModel(std::vector<std::vector<double>> table, decoder::TokenId eos)
      : table_(std::move(table)), eos_(eos) {}
  std::size_t vocab_size() const override { return table_.front().size(); }
  decoder::TokenId eos_id() const override { return eos_; }
  std::vector<double> next_logits(std::span<const decoder::TokenId>,
                                  std::span<const decoder::TokenId> prefix) const override {
    return table_[std::min(prefix.size(), table_.size() - 1)];
  }

 private:
  std::vector<std::vector<double>> table_;
  decoder::TokenId eos_;
};

/// Logits depend on the whole prefix: a seeded hash picks each row.
class PrefixHashModel : public decoder::StepModel {
 public:
  PrefixHashModel(std::size_t vocab, decoder::TokenId eos, std::uint64_t seed)
      : vocab_(vocab), eos_(eos), seed_(seed) {}
  std::size_t vocab_size() const override { return vocab_; }
  decoder::TokenId eos_id() const override { return eos_; }
  std::vector<double> next_logits(std::span<const decoder::TokenId>,
                                  std::span<const decoder::TokenId> prefix) const override {
    std::uint64_t h = seed_;
    for (auto t : prefix) h = h * 1000003ULL + t + 1;
    std::mt19937_64 rng(h);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    std::vector<double> out(vocab_);
    for (auto& x : out) x = d(rng);
    return out;
  }

 private:
  std::size_t vocab_;
  decoder::TokenId eos_;
  std::uint64_t seed_;
};

}  // namespace mtkit::testing
