#ifndef CPL_ACQUIRE_HPP_
#define CPL_ACQUIRE_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpl/pool.hpp"
#include "cpl/types.hpp"

namespace cpl {

struct AcquisitionPlan {
  std::vector<Index> selected;
  std::string strategy;
  double rho = 0.0;          // greedy only
  std::uint64_t seed = 0;    // random only
  std::vector<Index> gains;  // greedy per-step marginal gains

  Index k() const { return static_cast<Index>(selected.size()); }
};

/// Pool indices strictly within distance rho of point i (i always included).
std::vector<Index> ball(const EmbeddingPool& pool, Index i, double rho);

/// |union of balls around the selected points|; 0 for the empty set.
Index coverage_value(const EmbeddingPool& pool, std::span<const Index> selected,
                     double rho);
inline Index coverage_value(const EmbeddingPool& pool,
                            const std::vector<Index>& selected, double rho) {
  return coverage_value(pool, std::span<const Index>(selected), rho);
}

/// Exact greedy maximization of ball-union coverage: each step picks the
/// candidate with the largest marginal gain (ties to the lowest index) and
/// keeps selecting even once gains hit zero, until the budget is spent.
AcquisitionPlan greedy_coverage(const EmbeddingPool& pool, double rho,
                                Index k);

/// Farthest-first traversal seeded at the medoid (minimum summed distance
/// to the pool, ties to the lowest index). Deterministic, no RNG.
AcquisitionPlan kcenter(const EmbeddingPool& pool, Index k);

/// Uniform sample without replacement: Fisher-Yates over indices driven by
/// the xoshiro256** generator seeded with splitmix64 (see rng.hpp).
AcquisitionPlan random_acquire(const EmbeddingPool& pool, Index k,
                               std::uint64_t seed);

/// q-quantile (nearest-rank) over pool points of the distance to each
/// point's r-th nearest neighbor.
double suggest_radius(const EmbeddingPool& pool, double quantile,
                      Index neighbor_rank);

/// Plan serialization: JSON {strategy, k, rho, seed, selected, gains}.
void save_plan(const std::filesystem::path& path, const AcquisitionPlan& plan);
AcquisitionPlan load_plan(const std::filesystem::path& path);

}  // namespace cpl

#endif  // CPL_ACQUIRE_HPP_
