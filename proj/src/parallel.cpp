// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace rbfssm {

namespace {
std::atomic<int> g_max_threads{1};
}

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n); }

int max_threads() { return g_max_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  const int threads = std::min<std::size_t>(g_max_threads.load(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }

  struct ChunkFailure {
    std::size_t index;
    std::exception_ptr error;
  };
  std::vector<ChunkFailure> failures(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));

  const std::size_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::size_t begin = static_cast<std::size_t>(t) * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    failures[static_cast<std::size_t>(t)] = {n, nullptr};
    if (begin >= end) continue;
    pool.emplace_back([&, t, begin, end]() {
      for (std::size_t i = begin; i < end; ++i) {
        try {
          body(i);
        } catch (...) {
          failures[static_cast<std::size_t>(t)] = {i, std::current_exception()};
          return;
        }
      }
    });
  }
  for (auto& worker : pool) worker.join();

  const ChunkFailure* first = nullptr;
  for (const auto& failure : failures) {
    if (!failure.error) continue;
    if (!first || failure.index < first->index) first = &failure;
  }
  if (first) std::rethrow_exception(first->error);
}

}  // namespace rbfssm
