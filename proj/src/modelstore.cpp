#include "mtkit/modelstore.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "mtkit/checksum.hpp"
#include "mtkit/parallel.hpp"
#include "mtkit/text.hpp"

namespace mtkit::modelstore {

using Kind = ModelStoreError::Kind;

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::io: return "io";
    case Kind::magic_mismatch: return "magic_mismatch";
    case Kind::version_mismatch: return "version_mismatch";
    case Kind::truncated: return "truncated";
    case Kind::length_mismatch: return "length_mismatch";
    case Kind::trailing_data: return "trailing_data";
    case Kind::invalid_name: return "invalid_name";
    case Kind::invalid_tensor: return "invalid_tensor";
    case Kind::name_mismatch: return "name_mismatch";
    case Kind::shape_mismatch: return "shape_mismatch";
    case Kind::not_enough_checkpoints: return "not_enough_checkpoints";
    case Kind::duplicate_step: return "duplicate_step";
    case Kind::missing_tensor: return "missing_tensor";
    case Kind::vocab_mismatch: return "vocab_mismatch";
  }
  return "unknown";
}

namespace {

std::string shape_string(const std::vector<std::uint64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::uint64_t product(const std::vector<std::uint64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::uint64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ModelStoreError(Kind::invalid_tensor, "tensor shape must be non-empty");
  if (product(shape_) != data_.size()) {
    throw ModelStoreError(Kind::length_mismatch,
                          "tensor shape " + shape_string(shape_) + " needs " +
                              std::to_string(product(shape_)) + " values, got " +
                              std::to_string(data_.size()));
  }
}

Tensor Tensor::filled(std::vector<std::uint64_t> shape, float value) {
  const auto n = product(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value));
}

std::uint64_t Tensor::numel() const { return data_.size(); }

std::uint64_t Tensor::row_size() const {
  if (shape_.empty()) return 0;
  return product(std::vector<std::uint64_t>(shape_.begin() + 1, shape_.end()));
}

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

void Checkpoint::add(std::string name, Tensor tensor) {
  if (find(name)) throw ModelStoreError(Kind::invalid_name, "duplicate tensor name '" + name + "'");
  tensors.push_back({std::move(name), std::move(tensor)});
}

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > remaining()) {
      throw ModelStoreError(Kind::truncated, std::string("truncated checkpoint while reading ") +
                                                 what + " at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::uint64_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "MTCK";

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic);
  w.u32(c.meta.format_version);
  w.u64(c.meta.step);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    if (t.shape().empty() || product(t.shape()) != t.data().size()) {
      throw ModelStoreError(Kind::invalid_tensor, "tensor '" + name + "' is inconsistent");
    }
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) w.u64(e);
    w.u64(t.data().size());
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.remaining() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw ModelStoreError(Kind::magic_mismatch, "not an MTCK checkpoint (bad magic)");
  }
  r.bytes(kMagic.size(), "magic");
  Checkpoint c;
  c.meta.format_version = r.u32("format version");
  if (c.meta.format_version != kFormatVersion) {
    throw ModelStoreError(Kind::version_mismatch,
                          "unsupported MTCK version " + std::to_string(c.meta.format_version) +
                              " (expected " + std::to_string(kFormatVersion) + ")");
  }
  c.meta.step = r.u64("step");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    std::string name(r.bytes(name_len, "tensor name"));
    if (!text::is_valid_utf8(name)) {
      throw ModelStoreError(Kind::invalid_name, "tensor name is not valid UTF-8");
    }
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0) throw ModelStoreError(Kind::invalid_tensor, "tensor '" + name + "' has rank 0");
    std::vector<std::uint64_t> shape(rank);
    for (auto& e : shape) e = r.u64("extent");
    const std::uint64_t n = r.u64("value count");
    if (n != product(shape)) {
      throw ModelStoreError(Kind::length_mismatch,
                            "tensor '" + name + "' declares shape " + shape_string(shape) +
                                " but carries " + std::to_string(n) + " values");
    }
    if (n > r.remaining() / 4) {
      throw ModelStoreError(Kind::truncated, "truncated payload for tensor '" + name + "'");
    }
    std::vector<float> data(n);
    auto raw = r.bytes(n * 4, "payload");
    for (std::uint64_t k = 0; k < n; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[k * 4 + b])) << (8 * b);
      }
      data[k] = std::bit_cast<float>(bits);
    }
    c.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) {
    throw ModelStoreError(Kind::trailing_data, std::to_string(r.remaining()) +
                                                   " unexpected bytes after the last tensor");
  }
  return c;
}

void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelStoreError(Kind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelStoreError(Kind::io, "write error on " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelStoreError(Kind::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

std::string tensor_checksum(const Tensor& t) {
  Writer w;
  for (float v : t.data()) w.f32(v);
  return sha256_hex(w.take());
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints, std::size_t n_last,
                               unsigned threads) {
  if (n_last == 0) throw ModelStoreError(Kind::not_enough_checkpoints, "n_last must be >= 1");
  if (checkpoints.size() < n_last) {
    throw ModelStoreError(Kind::not_enough_checkpoints,
                          "need " + std::to_string(n_last) + " checkpoints, got " +
                              std::to_string(checkpoints.size()));
  }
  std::vector<const Checkpoint*> order;
  for (const auto& c : checkpoints) order.push_back(&c);
  std::sort(order.begin(), order.end(),
            [](const Checkpoint* a, const Checkpoint* b) { return a->meta.step > b->meta.step; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->meta.step == order[i - 1]->meta.step) {
      throw ModelStoreError(Kind::duplicate_step, "two checkpoints share step " +
                                                      std::to_string(order[i]->meta.step));
    }
  }
  order.resize(n_last);
  // Accumulate oldest first so the summation order is fixed by step alone.
  std::reverse(order.begin(), order.end());
  const Checkpoint& newest = *order.back();

  for (const Checkpoint* c : order) {
    if (c->tensors.size() != newest.tensors.size()) {
      throw ModelStoreError(Kind::name_mismatch, "checkpoint at step " +
                                                     std::to_string(c->meta.step) +
                                                     " has a different tensor count");
    }
    for (const auto& [name, t] : newest.tensors) {
      const Tensor* other = c->find(name);
      if (!other) {
        throw ModelStoreError(Kind::name_mismatch, "tensor '" + name + "' missing at step " +
                                                       std::to_string(c->meta.step));
      }
      if (other->shape() != t.shape()) {
        throw ModelStoreError(Kind::shape_mismatch,
                              "tensor '" + name + "' has shape " + shape_string(other->shape()) +
                                  " at step " + std::to_string(c->meta.step) + ", expected " +
                                  shape_string(t.shape()));
      }
    }
  }

  Checkpoint out;
  out.meta.step = newest.meta.step;
  out.tensors.resize(newest.tensors.size());
  const double n = static_cast<double>(n_last);
  parallel_shards(newest.tensors.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t ti = begin; ti < end; ++ti) {
      const auto& name = newest.tensors[ti].name;
      const auto& shape = newest.tensors[ti].tensor.shape();
      std::vector<double> acc(newest.tensors[ti].tensor.numel(), 0.0);
      for (const Checkpoint* c : order) {
        const auto& data = c->find(name)->data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(data[i]);
      }
      std::vector<float> mean(acc.size());
      for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / n);
      out.tensors[ti] = {name, Tensor(shape, std::move(mean))};
    }
  });
  return out;
}

Checkpoint average_checkpoint_files(const std::vector<std::filesystem::path>& paths,
                                    std::size_t n_last, unsigned threads) {
  std::vector<Checkpoint> cks;
  cks.reserve(paths.size());
  for (const auto& p : paths) cks.push_back(read_checkpoint(p));
  return average_checkpoints(cks, n_last, threads);
}

PruneResult prune_embeddings(const Checkpoint& c, std::string_view embed_name,
                             const subword::SubwordVocab& full_vocab,
                             const std::set<subword::TokenId>& keep) {
  const Tensor* embed = c.find(embed_name);
  if (!embed) {
    throw ModelStoreError(Kind::missing_tensor,
                          "embedding tensor '" + std::string(embed_name) + "' not found");
  }
  const std::size_t vocab_size = full_vocab.size();
  if (embed->shape().size() != 2 || embed->shape()[0] != vocab_size) {
    throw ModelStoreError(Kind::vocab_mismatch,
                          "embedding shape " + shape_string(embed->shape()) +
                              " does not match vocabulary size " + std::to_string(vocab_size));
  }
  std::set<subword::TokenId> kept = keep;
  for (subword::TokenId i = 0; i < subword::kNumSpecials && i < vocab_size; ++i) kept.insert(i);
  if (!kept.empty() && *kept.rbegin() >= vocab_size) {
    throw ModelStoreError(Kind::vocab_mismatch, "keep set contains id " +
                                                    std::to_string(*kept.rbegin()) +
                                                    " outside the vocabulary");
  }

  PruneResult out;
  out.remap.assign(vocab_size, std::nullopt);
  std::vector<std::string> tokens;
  std::vector<subword::TokenId> rows(kept.begin(), kept.end());
  for (std::size_t new_id = 0; new_id < rows.size(); ++new_id) {
    out.remap[rows[new_id]] = static_cast<subword::TokenId>(new_id);
    tokens.push_back(full_vocab.token(rows[new_id]));
  }
  out.vocab = subword::SubwordVocab(std::move(tokens));

  auto select_rows = [&](const Tensor& t) {
    const auto row = t.row_size();
    std::vector<float> data;
    data.reserve(rows.size() * row);
    for (auto r : rows) {
      auto first = t.data().begin() + static_cast<std::ptrdiff_t>(r * row);
      data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(row));
    }
    auto shape = t.shape();
    shape[0] = rows.size();
    return Tensor(std::move(shape), std::move(data));
  };

  out.checkpoint.meta = c.meta;
  out.pruned_tensors.emplace_back(embed_name);
  for (const auto& [name, t] : c.tensors) {
    if (name == embed_name) {
      out.checkpoint.add(name, select_rows(t));
    } else if (t.shape()[0] == vocab_size) {
      out.checkpoint.add(name, select_rows(t));
      out.pruned_tensors.push_back(name);
    } else {
      out.checkpoint.add(name, t);
    }
  }
  out.report.original_vocab = vocab_size;
  out.report.kept_vocab = rows.size();
  out.report.ratio = static_cast<double>(vocab_size) / static_cast<double>(rows.size());
  return out;
}

}  // namespace mtkit::modelstore
