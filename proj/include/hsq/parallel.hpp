#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace hsq {

namespace detail {
inline std::atomic<unsigned>& thread_limit() {
  static std::atomic<unsigned> n{
      std::thread::hardware_concurrency() ? std::thread::hardware_concurrency() : 1u};
  return n;
}
}  // namespace detail

inline unsigned max_threads() { return detail::thread_limit().load(); }

inline void set_max_threads(unsigned n) { detail::thread_limit().store(n ? n : 1u); }

// Runs body over contiguous chunks of [0, count). Results must not depend on
// the partition; every chunked computation in the library keeps per-index
// arithmetic identical regardless of which thread runs it.
inline void parallel_for(std::size_t count,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  const unsigned want = max_threads();
  if (want <= 1 || count < 2) {
    if (count > 0) body(0, count);
    return;
  }
  const std::size_t nthreads = std::min<std::size_t>(want, count);
  const std::size_t chunk = (count + nthreads - 1) / nthreads;
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace hsq
