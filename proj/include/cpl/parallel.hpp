#ifndef CPL_PARALLEL_HPP_
#define CPL_PARALLEL_HPP_

#include <algorithm>
#include <thread>
#include <vector>

#include "cpl/types.hpp"

namespace cpl {

// Static range split over std::thread. Each index is processed exactly once
// and writers touch disjoint slots, so results do not depend on thread count.
template <class Fn>
void parallel_for(Index n, Fn&& fn, Index grain = 256) {
  if (n <= 0) return;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const Index max_tasks = std::max<Index>(1, n / grain);
  const Index n_tasks = std::min<Index>(hw, max_tasks);
  if (n_tasks <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(n_tasks));
  const Index chunk = (n + n_tasks - 1) / n_tasks;
  for (Index t = 0; t < n_tasks; ++t) {
    const Index begin = t * chunk;
    const Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([begin, end, &fn] {
      for (Index i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace cpl

#endif  // CPL_PARALLEL_HPP_
