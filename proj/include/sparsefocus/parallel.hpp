#ifndef SPARSEFOCUS_PARALLEL_HPP
#define SPARSEFOCUS_PARALLEL_HPP

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace sparsefocus {

// Thread cap from SPARSEFOCUS_THREADS; fallback when the variable is unset.
inline int thread_cap(int fallback) {
  if (const char* env = std::getenv("SPARSEFOCUS_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return std::max(1, fallback);
}

inline int default_threads() {
  return thread_cap(static_cast<int>(std::thread::hardware_concurrency()));
}

// Each index is processed by exactly one worker; results must be written to
// disjoint slots so the outcome is identical for any thread count.
inline void parallel_for(int begin, int end, int threads, const std::function<void(int)>& fn) {
  const int count = end - begin;
  if (count <= 0) return;
  threads = std::clamp(threads, 1, count);
  if (threads == 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = begin + t; i < end; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_PARALLEL_HPP
