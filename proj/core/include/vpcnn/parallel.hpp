#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace vpcnn {

/// Worker count used by the numeric kernels. Defaults to 1. Work is split by
/// output element, so results do not depend on this setting.
void set_num_threads(unsigned n);
unsigned num_threads();

/// Calls fn(i) for i in [0, n), partitioned across num_threads() workers.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(num_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

}  // namespace vpcnn
