#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace divlab {

// Thread-count resolution: explicit request > DIVLAB_THREADS > hardware.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DIVLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Static block partition over [0, n) with a stable worker id, so callers can
// give each worker its own scratch space. Each index is visited exactly once
// and side effects must target index-owned slots; with that discipline
// results are identical for every thread count.
inline void parallel_for_workers(std::size_t n, int threads,
                                 const std::function<void(std::size_t, std::size_t)>& body) {
  threads = std::max(1, threads);
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(0, i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = n * w / workers;
    const std::size_t hi = n * (w + 1) / workers;
    pool.emplace_back([&, w, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(w, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& body) {
  parallel_for_workers(n, threads, [&](std::size_t, std::size_t i) { body(i); });
}

}  // namespace divlab
