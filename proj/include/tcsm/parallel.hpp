#pragma once

#include <exception>
#include <thread>
#include <vector>

namespace tcsm {

// Runs fn(k) for k in [0, n) on up to `workers` threads with static
// contiguous chunks. Each fn(k) must only write state owned by index k.
// The exception from the lowest failing chunk is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t c = 0; c < w; ++c) {
    threads.emplace_back([&, c] {
      const std::size_t lo = n * c / w, hi = n * (c + 1) / w;
      try {
        for (std::size_t k = lo; k < hi; ++k) fn(k);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace tcsm
