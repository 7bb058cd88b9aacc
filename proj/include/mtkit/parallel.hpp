#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mtkit {

/// Splits [0, n) into contiguous shards and runs fn(shard, begin, end) on up to
/// `threads` workers. Shard boundaries depend only on n and the shard count,
/// so per-shard results can be reduced in shard order deterministically.
/// The first exception thrown by any shard is rethrown on the caller.
template <class Fn>
void parallel_shards(std::size_t n, unsigned threads, Fn&& fn) {
  const std::size_t shards = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (shards == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(shards);
  {
    std::vector<std::jthread> workers;
    workers.reserve(shards);
    for (std::size_t s = 0; s < shards; ++s) {
      const std::size_t begin = n * s / shards;
      const std::size_t end = n * (s + 1) / shards;
      workers.emplace_back([&, s, begin, end] {
        try {
          fn(s, begin, end);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Number of shards parallel_shards will use.
inline std::size_t shard_count(std::size_t n, unsigned threads) {
  return std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
}

}  // namespace mtkit
