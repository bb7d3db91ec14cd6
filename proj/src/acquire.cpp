#include "cpl/acquire.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cpl/errors.hpp"
#include "cpl/rng.hpp"

namespace cpl {
namespace {

void check_budget(Index k, Index n) {
  if (k < 1) throw ConsistencyError("budget must be >= 1");
  if (k > n)
    throw ConsistencyError("budget " + std::to_string(k) +
                           " exceeds pool size " + std::to_string(n));
}

Vector distances_from(const EmbeddingPool& pool, Index i) {
  return (pool.vectors.rowwise() - pool.vectors.row(i)).rowwise().norm();
}

}  // namespace

std::vector<Index> ball(const EmbeddingPool& pool, Index i, double rho) {
  if (!(rho > 0.0)) throw ConsistencyError("rho must be > 0");
  if (i < 0 || i >= pool.n_points())
    throw ConsistencyError("ball center out of range");
  const Vector d = distances_from(pool, i);
  std::vector<Index> members;
  for (Index u = 0; u < pool.n_points(); ++u)
    if (d[u] < rho) members.push_back(u);
  return members;
}

Index coverage_value(const EmbeddingPool& pool,
                     std::span<const Index> selected, double rho) {
  std::vector<bool> covered(static_cast<std::size_t>(pool.n_points()), false);
  for (Index i : selected)
    for (Index u : ball(pool, i, rho)) covered[static_cast<std::size_t>(u)] = true;
  return static_cast<Index>(std::count(covered.begin(), covered.end(), true));
}

AcquisitionPlan greedy_coverage(const EmbeddingPool& pool, double rho,
                                Index k) {
  if (!(rho > 0.0)) throw ConsistencyError("rho must be > 0");
  const Index n = pool.n_points();
  check_budget(k, n);

  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  std::vector<bool> selected(static_cast<std::size_t>(n), false);
  AcquisitionPlan plan;
  plan.strategy = "greedy";
  plan.rho = rho;
  for (Index step = 0; step < k; ++step) {
    Index best = -1;
    Index best_gain = -1;
    for (Index x = 0; x < n; ++x) {
      if (selected[static_cast<std::size_t>(x)]) continue;
      const Vector d = distances_from(pool, x);
      Index gain = 0;
      for (Index u = 0; u < n; ++u)
        if (d[u] < rho && !covered[static_cast<std::size_t>(u)]) ++gain;
      if (gain > best_gain) {  // strict: ties keep the lowest index
        best_gain = gain;
        best = x;
      }
    }
    selected[static_cast<std::size_t>(best)] = true;
    plan.selected.push_back(best);
    plan.gains.push_back(best_gain);
    const Vector d = distances_from(pool, best);
    for (Index u = 0; u < n; ++u)
      if (d[u] < rho) covered[static_cast<std::size_t>(u)] = true;
  }
  return plan;
}

AcquisitionPlan kcenter(const EmbeddingPool& pool, Index k) {
  const Index n = pool.n_points();
  check_budget(k, n);

  Index medoid = 0;
  double best_sum = kInf;
  for (Index i = 0; i < n; ++i) {
    // plain sequential accumulation so an independent recount sees the
    // same doubles
    const Vector d = distances_from(pool, i);
    double sum = 0.0;
    for (Index u = 0; u < n; ++u) sum += d[u];
    if (sum < best_sum) {  // strict: ties keep the lowest index
      best_sum = sum;
      medoid = i;
    }
  }

  AcquisitionPlan plan;
  plan.strategy = "kcenter";
  plan.selected.push_back(medoid);
  Vector nearest = distances_from(pool, medoid);
  for (Index step = 1; step < k; ++step) {
    Index farthest = -1;
    double best_dist = -kInf;
    for (Index u = 0; u < n; ++u) {
      if (std::find(plan.selected.begin(), plan.selected.end(), u) !=
          plan.selected.end())
        continue;
      if (nearest[u] > best_dist) {
        best_dist = nearest[u];
        farthest = u;
      }
    }
    plan.selected.push_back(farthest);
    nearest = nearest.cwiseMin(distances_from(pool, farthest));
  }
  return plan;
}

AcquisitionPlan random_acquire(const EmbeddingPool& pool, Index k,
                               std::uint64_t seed) {
  const Index n = pool.n_points();
  check_budget(k, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  for (Index t = 0; t < k; ++t) {
    const Index j =
        t + static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(n - t)));
    std::swap(order[static_cast<std::size_t>(t)],
              order[static_cast<std::size_t>(j)]);
  }
  AcquisitionPlan plan;
  plan.strategy = "random";
  plan.seed = seed;
  plan.selected.assign(order.begin(), order.begin() + k);
  return plan;
}

double suggest_radius(const EmbeddingPool& pool, double quantile,
                      Index neighbor_rank) {
  const Index n = pool.n_points();
  if (n < 2) throw ConsistencyError("suggest_radius needs at least 2 points");
  if (!(quantile > 0.0 && quantile < 1.0))
    throw ConsistencyError("quantile must be in (0,1)");
  if (neighbor_rank < 1 || neighbor_rank >= n)
    throw ConsistencyError("neighbor rank out of range");

  std::vector<double> kth(static_cast<std::size_t>(n));
  std::vector<double> others;
  for (Index i = 0; i < n; ++i) {
    const Vector d = distances_from(pool, i);
    others.clear();
    for (Index u = 0; u < n; ++u)
      if (u != i) others.push_back(d[u]);
    auto nth = others.begin() + (neighbor_rank - 1);
    std::nth_element(others.begin(), nth, others.end());
    kth[static_cast<std::size_t>(i)] = *nth;
  }
  std::sort(kth.begin(), kth.end());
  const Index rank = std::min<Index>(
      n, std::max<Index>(1, static_cast<Index>(std::ceil(
                                quantile * static_cast<double>(n)))));
  return kth[static_cast<std::size_t>(rank - 1)];
}

void save_plan(const std::filesystem::path& path,
               const AcquisitionPlan& plan) {
  nlohmann::json j;
  j["schema"] = "cpl-plan/1";
  j["strategy"] = plan.strategy;
  j["k"] = plan.k();
  j["rho"] = plan.rho;
  j["seed"] = plan.seed;
  j["selected"] = plan.selected;
  j["gains"] = plan.gains;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

AcquisitionPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad plan JSON: " + std::string(e.what()));
  }
  AcquisitionPlan plan;
  plan.strategy = j.at("strategy").get<std::string>();
  plan.rho = j.at("rho").get<double>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.selected = j.at("selected").get<std::vector<Index>>();
  plan.gains = j.at("gains").get<std::vector<Index>>();
  return plan;
}

}  // namespace cpl
