#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace rank1 {

namespace detail {
inline std::atomic<std::size_t>& thread_cap() {
  static std::atomic<std::size_t> cap{1};
  return cap;
}
}  // namespace detail

/// Worker count used by batch-parallel loops. Defaults to 1.
inline std::size_t max_threads() { return detail::thread_cap().load(); }

inline void set_max_threads(std::size_t n) { detail::thread_cap().store(std::max<std::size_t>(n, 1)); }

/// Hardware concurrency, capped by RANK1_THREADS when it holds a positive integer.
inline std::size_t threads_from_environment() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RANK1_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) n = std::min(n, static_cast<std::size_t>(v));
    } catch (const std::exception&) {
    }
  }
  return n;
}

/// Split [0, n) into contiguous chunks, one per worker, and run
/// fn(begin, end, worker). Chunk boundaries depend only on n and the worker
/// count, so a fixed count gives a fixed schedule.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
    pool.emplace_back([&, begin, end, w] {
      try {
        if (begin < end) fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Number of workers parallel_for will actually use for n items.
inline std::size_t worker_count(std::size_t n) { return std::max<std::size_t>(1, std::min(max_threads(), n)); }

}  // namespace rank1
