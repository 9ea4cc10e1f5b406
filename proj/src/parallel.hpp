#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace dwm::detail {

// Runs body(i) for i in [0, n) on up to `threads` workers with a static
// strided partition. Callers write results to per-index slots.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dwm::detail
