#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <thread>
#include <vector>

namespace nplps {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

// splitmix64: cheap stateless mixer used to derive independent RNG streams
// from (seed, index...) tuples so results do not depend on thread scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  return splitmix64(seed ^ splitmix64(a ^ splitmix64(b ^ splitmix64(c))));
}

inline int worker_count() {
  static int n = [] {
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

// Runs fn(chunk_index) for chunk_index in [0, n_chunks). Chunks are assigned to
// workers in a strided pattern; each chunk writes only to its own slot, so the
// result is identical for any worker count.
inline void parallel_for_chunks(int n_chunks, const std::function<void(int)>& fn) {
  if (n_chunks <= 0) return;
  int workers = std::min(worker_count(), n_chunks);
  if (workers <= 1) {
    for (int i = 0; i < n_chunks; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([=, &fn] {
      for (int i = w; i < n_chunks; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Convenience: parallel loop over [0, n) in blocks of block_size.
inline void parallel_for_blocks(int n, int block_size, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  int n_blocks = (n + block_size - 1) / block_size;
  parallel_for_chunks(n_blocks, [&](int b) {
    int lo = b * block_size;
    int hi = std::min(n, lo + block_size);
    fn(lo, hi);
  });
}

}  // namespace nplps
