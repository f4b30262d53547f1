#include "pcsharp/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace pcsharp {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int threads) { g_threads = std::max(1, threads); }
int num_threads() { return g_threads.load(); }

void parallel_chunks(std::size_t n,
                     const std::function<void(int, std::size_t, std::size_t)>& body) {
  const int workers = static_cast<int>(std::min<std::size_t>(std::max(1, num_threads()), std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    body(0, 0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(n, w * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&body, w, begin, end] { body(w, begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pcsharp
