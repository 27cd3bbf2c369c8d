#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mmrl {

// Worker-thread count, read once from MMRL_THREADS (default 1). This is the
// only environment variable the library consults.
inline int thread_count() {
  static const int n = [] {
    const char* env = std::getenv("MMRL_THREADS");
    if (env == nullptr) return 1;
    int v = std::atoi(env);
    return v < 1 ? 1 : v;
  }();
  return n;
}

// Static partition of [0, n) across worker threads. Each chunk writes only
// its own outputs, so results are deterministic for a fixed thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = thread_count();
  if (workers <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(workers, n);
  const std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t lo = c * per;
    const std::size_t hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mmrl
