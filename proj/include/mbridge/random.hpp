#pragma once

// Reproducible random streams. Each path gets its own engine seeded from
// (seed, stream index), so results do not depend on how paths are split
// across threads.

#include <algorithm>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

namespace mbridge {

using Engine = std::mt19937_64;

inline Engine substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6d62u};
  return Engine(seq);
}

// Runs body(i) for i in [0, n) on up to hardware_concurrency threads.
// Iterations must write to disjoint outputs.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  const std::size_t workers =
      std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mbridge
