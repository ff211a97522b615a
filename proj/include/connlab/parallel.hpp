#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace connlab {

inline int default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Calls fn(chunk, begin, end) for every fixed-size chunk of [0, count).
/// Chunk boundaries do not depend on `workers`, so callers that reduce
/// per-chunk results in chunk order get bit-identical sums for any worker count.
template <typename Fn>
void parallel_chunks(std::size_t count, std::size_t chunk_size, int workers, Fn&& fn) {
  if (count == 0) return;
  chunk_size = std::max<std::size_t>(chunk_size, 1);
  const std::size_t chunks = (count + chunk_size - 1) / chunk_size;
  auto run = [&](std::size_t c) { fn(c, c * chunk_size, std::min(count, (c + 1) * chunk_size)); };
  const auto threads = static_cast<std::size_t>(std::max(1, std::min<int>(workers, static_cast<int>(chunks))));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < chunks; c += threads) run(c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace connlab
