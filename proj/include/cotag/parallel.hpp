#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace cotag {

// Runs fn(i) for i in [0, n) across up to `workers` threads. Work items are
// claimed from a shared counter, so the assignment of items to threads is
// nondeterministic, but callers only use this for pure per-item work whose
// results land in preallocated slots; outputs are then independent of the
// schedule. The first exception (by item index) is rethrown on the caller.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  std::size_t nthreads = workers > 1 ? static_cast<std::size_t>(workers) : 1;
  if (nthreads > n) nthreads = n;
  if (nthreads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::pair<std::size_t, std::exception_ptr>> errors(nthreads,
                                                                 {n, nullptr});
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) {
    pool.emplace_back([&, t] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          if (i < errors[t].first) errors[t] = {i, std::current_exception()};
        }
      }
    });
  }
  for (auto& th : pool) th.join();

  std::exception_ptr first;
  std::size_t first_index = n;
  for (auto& [idx, ep] : errors) {
    if (ep && idx < first_index) {
      first_index = idx;
      first = ep;
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace cotag
