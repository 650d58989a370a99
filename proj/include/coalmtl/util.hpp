#ifndef COALMTL_UTIL_HPP
#define COALMTL_UTIL_HPP

#include <charconv>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace coalmtl {

// Shortest round-trip decimal formatting. All numeric output (Newick, CSV,
// model containers) goes through this so repeated runs are byte-identical.
inline std::string fmt_double(double x) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written to disjoint slots; the call returns once all items are done.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t nworkers = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(nworkers);
  for (std::size_t w = 0; w < nworkers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += nworkers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace coalmtl

#endif
