#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace rage {

/// Worker count after applying the RAGE_THREADS cap; 0 means "one per core".
/// Never less than 1.
inline std::size_t resolve_threads(std::size_t requested) {
  std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  if (const char* cap = std::getenv("RAGE_THREADS")) {
    try {
      const long v = std::stol(cap);
      if (v > 0) n = std::min(n, static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      // A malformed cap is ignored rather than fatal.
    }
  }
  return std::max<std::size_t>(n, 1);
}

/// Number of workers parallel_for will use.
inline std::size_t worker_count(std::size_t n, std::size_t threads) {
  return std::max<std::size_t>(1, std::min(threads, n));
}

/// Calls fn(i, worker) for every i in [0, n), worker < worker_count(n,
/// threads). Indices are claimed dynamically, so fn must only write to slot i
/// of its outputs (or to per-worker state). The exception from the lowest
/// failing index is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = worker_count(n, threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0});
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i, w);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rage
