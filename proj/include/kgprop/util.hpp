#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace kgprop {

// Runs body(lo, hi) over contiguous chunks of [0, n). Chunk boundaries
// depend only on n and the thread count, so any use with disjoint writes is
// deterministic regardless of scheduling.
inline void parallel_for(int64_t n, int threads,
                         const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  if (threads < 1) threads = 1;
  int workers = static_cast<int>(std::min<int64_t>(threads, n));
  if (workers == 1) {
    body(0, n);
    return;
  }
  int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 1; w < workers; ++w) {
    int64_t lo = w * chunk;
    int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(body, lo, hi);
  }
  body(0, std::min<int64_t>(n, chunk));
  for (auto& t : pool) t.join();
}

class StopWatch {
 public:
  StopWatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void reset() { start_ = std::chrono::steady_clock::now(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace kgprop
