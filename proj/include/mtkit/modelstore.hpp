#pragma once

// Named-tensor checkpoints in the MTCK binary format, checkpoint weight
// averaging and vocabulary pruning of embedding matrices.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mtkit/subword.hpp"

namespace mtkit::modelstore {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kDefaultLastN = 5;

class ModelStoreError : public std::runtime_error {
 public:
  enum class Kind {
    io,
    magic_mismatch,
    version_mismatch,
    truncated,
    length_mismatch,
    trailing_data,
    invalid_name,
    invalid_tensor,
    name_mismatch,
    shape_mismatch,
    not_enough_checkpoints,
    duplicate_step,
    missing_tensor,
    vocab_mismatch,
  };

  ModelStoreError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string_view to_string(ModelStoreError::Kind kind);

/// Row-major float32 tensor. Invariants: rank >= 1, data.size() == numel().
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::uint64_t> shape, std::vector<float> data);
  static Tensor filled(std::vector<std::uint64_t> shape, float value);

  const std::vector<std::uint64_t>& shape() const { return shape_; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& mutable_data() { return data_; }
  std::uint64_t numel() const;
  /// Elements per slice along the first axis.
  std::uint64_t row_size() const;

  /// Bitwise comparison of shape and payload (distinguishes -0.0 and NaN payloads).
  bool operator==(const Tensor& other) const;

 private:
  std::vector<std::uint64_t> shape_;
  std::vector<float> data_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;

  bool operator==(const NamedTensor&) const = default;
};

struct CheckpointMeta {
  std::uint64_t step = 0;
  std::uint32_t format_version = kFormatVersion;

  bool operator==(const CheckpointMeta&) const = default;
};

/// Tensors in file order; names are unique.
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  CheckpointMeta meta;

  const Tensor* find(std::string_view name) const;
  /// Appends a tensor; throws invalid_name on a duplicate name.
  void add(std::string name, Tensor tensor);

  bool operator==(const Checkpoint&) const = default;
};

// MTCK format, all integers and floats little-endian:
//   "MTCK" | u32 version | u64 step | u32 tensor_count |
//   per tensor: u32 name_len | name | u32 rank | rank x u64 extents |
//               u64 value_count | value_count x f32
std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(std::string_view bytes);
void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the tensor's little-endian payload.
std::string tensor_checksum(const Tensor& t);

/// Element-wise mean of the n_last checkpoints with the highest meta.step.
/// Accumulates in double in ascending-step order and rounds once to float,
/// so the result does not depend on input order. Tensor order and names
/// follow the newest checkpoint; meta.step is the maximum step.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints,
                               std::size_t n_last = kDefaultLastN, unsigned threads = 1);
Checkpoint average_checkpoint_files(const std::vector<std::filesystem::path>& paths,
                                    std::size_t n_last = kDefaultLastN, unsigned threads = 1);

struct PruneReport {
  std::size_t original_vocab = 0;
  std::size_t kept_vocab = 0;
  double ratio = 1.0;  // original / kept
};

struct PruneResult {
  Checkpoint checkpoint;
  subword::SubwordVocab vocab;
  PruneReport report;
  /// remap[old_id] = new id, or nullopt when the token was dropped.
  std::vector<std::optional<subword::TokenId>> remap;
  /// Names of every tensor whose rows were selected (the embedding first).
  std::vector<std::string> pruned_tensors;
};

/// Keeps the embedding rows of `keep` plus all specials, in original id order.
/// Every tensor whose leading extent equals the vocabulary size (tied output
/// projections, biases) is row-selected the same way; other tensors pass through.
PruneResult prune_embeddings(const Checkpoint& c, std::string_view embed_name,
                             const subword::SubwordVocab& full_vocab,
                             const std::set<subword::TokenId>& keep);

}  // namespace mtkit::modelstore
