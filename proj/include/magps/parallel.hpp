#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace magps {

/// Runs fn(k) for k in [0, count) on up to `threads` workers, each taking a
/// contiguous chunk. Results must be written by index so the outcome does not
/// depend on scheduling. The first exception (lowest chunk) is rethrown.
template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  const int chunk = (count + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int k = w * chunk; k < std::min(count, (w + 1) * chunk); ++k) fn(k);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace magps
