#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mstrace {

/// Runs body(i) for i in [0, n) over at most `threads` workers with static
/// contiguous chunks. If several indices throw, the lowest-index exception is
/// rethrown, so failures are reported identically for any thread count.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  if (n == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(threads == 0 ? 1 : threads, 1, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::size_t> error_index(workers, n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      pool.emplace_back([&, w, begin, end] {
        for (std::size_t i = begin; i < end; ++i) {
          try {
            body(i);
          } catch (...) {
            errors[w] = std::current_exception();
            error_index[w] = i;
            return;
          }
        }
      });
    }
  }
  std::size_t first = n;
  std::exception_ptr err;
  for (std::size_t w = 0; w < workers; ++w) {
    if (errors[w] && error_index[w] < first) {
      first = error_index[w];
      err = errors[w];
    }
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace mstrace
