#pragma once

// Deterministic fan-out helper: index i always computes the same work
// item regardless of worker count, so parallelism affects wall time
// only. Exceptions from workers are rethrown on the calling thread.

#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace warpfool {

inline int hardware_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : int(n);
}

template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers < 1) workers = 1;
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = int(std::min<std::size_t>(std::size_t(workers), n));
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = std::size_t(t); i < n; i += std::size_t(workers)) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace warpfool
