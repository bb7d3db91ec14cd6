#include "cpl/certify.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "cpl/errors.hpp"
#include "cpl/parallel.hpp"

namespace cpl {
namespace {

void check_alignment(const CenterSet& centers, const DistanceView& dist) {
  if (centers.size() != dist.n_sources())
    throw ConsistencyError("distance view does not match center set");
  for (Index i = 0; i < centers.size(); ++i)
    if (dist.sources[static_cast<std::size_t>(i)] !=
        centers.indices[static_cast<std::size_t>(i)])
      throw ConsistencyError("distance view sources out of order");
}

const char* rule_name(DecisionKind kind) {
  switch (kind) {
    case DecisionKind::singleton: return "singleton";
    case DecisionKind::gap: return "gap";
    case DecisionKind::threshold: return "threshold";
    case DecisionKind::abstain: return "";
  }
  return "";
}

}  // namespace

double lower_envelope(Index u, int cls, const CenterSet& centers,
                      const DistanceView& dist, const LipschitzBounds& lip) {
  check_alignment(centers, dist);
  if (u < 0 || u >= dist.n_targets())
    throw ConsistencyError("pool index out of range");
  if (cls < 0 || cls >= lip.per_class.size())
    throw ConsistencyError("class out of range");
  double best = -kInf;
  for (Index i = 0; i < centers.size(); ++i) {
    if (centers.labels[static_cast<std::size_t>(i)] != cls) continue;
    best = std::max(best, centers.margin_lb[i] -
                              lip.per_class[cls] * dist.distances(i, u));
  }
  return best;
}

double upper_envelope(Index u, int cls, const CenterSet& centers,
                      const DistanceView& dist, const LipschitzBounds& lip) {
  check_alignment(centers, dist);
  if (u < 0 || u >= dist.n_targets())
    throw ConsistencyError("pool index out of range");
  if (cls < 0 || cls >= lip.per_class.size())
    throw ConsistencyError("class out of range");
  double best = kInf;
  for (Index i = 0; i < centers.size(); ++i) {
    if (centers.labels[static_cast<std::size_t>(i)] == cls) continue;
    best = std::min(best, -centers.margin_lb[i] +
                              lip.per_class[cls] * dist.distances(i, u));
  }
  return best;
}

EnvelopeTable compute_envelopes(const CenterSet& centers,
                                const DistanceView& dist,
                                const LipschitzBounds& lip, Index n_classes) {
  check_alignment(centers, dist);
  if (lip.per_class.size() != n_classes)
    throw ConsistencyError("lipschitz bounds do not match class count");
  const Index n = dist.n_targets();
  EnvelopeTable env{Matrix::Constant(n, n_classes, -kInf),
                    Matrix::Constant(n, n_classes, kInf)};
  parallel_for(n, [&](Index u) {
    for (Index i = 0; i < centers.size(); ++i) {
      const int label = centers.labels[static_cast<std::size_t>(i)];
      const double margin_lb = centers.margin_lb[i];
      const double distance = dist.distances(i, u);
      for (Index c = 0; c < n_classes; ++c) {
        const double reach = lip.per_class[c] * distance;
        if (c == label) {
          env.lb(u, c) = std::max(env.lb(u, c), margin_lb - reach);
        } else {
          env.ub(u, c) = std::min(env.ub(u, c), -margin_lb + reach);
        }
      }
    }
  });
  return env;
}

FeasibleSets feasible_sets(const EnvelopeTable& env, double tau) {
  if (!(tau >= 0.0)) throw ConsistencyError("tau must be >= 0");
  FeasibleSets sets{env.ub.array() >= 0.0, env.ub.array() >= -tau, tau};
  return sets;
}

Decision force_label(Index u, const EnvelopeTable& env, double tau,
                     double kappa) {
  if (!(tau >= 0.0)) throw ConsistencyError("tau must be >= 0");
  if (!(kappa >= 0.0)) throw ConsistencyError("kappa must be >= 0");
  const Index c_count = env.n_classes();

  int candidate = -1;
  int tau_survivors = 0;
  for (Index c = 0; c < c_count; ++c) {
    if (env.ub(u, c) >= -tau) {
      ++tau_survivors;
      candidate = static_cast<int>(c);
    }
  }
  if (tau_survivors == 1)
    return Decision{DecisionKind::singleton, candidate};

  int gap_class = -1;
  for (Index c = 0; c < c_count; ++c) {
    const double lb = env.lb(u, c);
    if (!(lb >= kappa)) continue;
    double rival_ub = -kInf;
    for (Index k = 0; k < c_count; ++k)
      if (k != c) rival_ub = std::max(rival_ub, env.ub(u, k));
    if (lb > rival_ub + tau + kNumericSlack) {
      if (gap_class >= 0)
        throw ConsistencyError(
            "two classes satisfy the gap condition at point " +
            std::to_string(u) + "; envelopes are inconsistent");
      gap_class = static_cast<int>(c);
    }
  }
  if (gap_class >= 0) return Decision{DecisionKind::gap, gap_class};
  return Decision{DecisionKind::abstain, -1};
}

CertificationResult certify_pool(const EmbeddingPool& pool,
                                 const LinearHead& head,
                                 const CenterSet& centers, double tau,
                                 double kappa, bool shared_lipschitz) {
  LipschitzBounds lip = lipschitz_bounds(head);
  if (shared_lipschitz) lip = as_shared(lip);
  for (int label : centers.labels)
    if (label >= head.n_classes())
      throw ConsistencyError("center label out of head range");
  const DistanceView dist = build_distance_view(pool, centers.indices);
  EnvelopeTable env =
      compute_envelopes(centers, dist, lip, head.n_classes());
  FeasibleSets feasible = feasible_sets(env, tau);

  const Index n = pool.n_points();
  SelectiveLabeling labeling;
  labeling.decisions.resize(static_cast<std::size_t>(n));
  labeling.tau = tau;
  labeling.kappa = kappa;
  parallel_for(n, [&](Index u) {
    labeling.decisions[static_cast<std::size_t>(u)] =
        force_label(u, env, tau, kappa);
  });

  // The trained head is a member of the consistent class, so its own
  // prediction must match every forced label; a mismatch is a pipeline bug.
  const Matrix scores = logits_all(head, pool.vectors);
  for (Index u = 0; u < n; ++u) {
    const Decision& d = labeling.decisions[static_cast<std::size_t>(u)];
    if (!d.predicted()) continue;
    Index own = 0;
    scores.row(u).maxCoeff(&own);
    if (static_cast<int>(own) != d.cls)
      throw ConsistencyError("forced label disagrees with the head at point " +
                             std::to_string(u));
  }
  return CertificationResult{std::move(env), std::move(feasible),
                             std::move(labeling), std::move(lip)};
}

CenterSet augment_with_pseudolabels(const CenterSet& centers,
                                    const SelectiveLabeling& labeling,
                                    double kappa) {
  if (!(kappa >= 0.0)) throw ConsistencyError("kappa must be >= 0");
  std::map<Index, int> existing;
  for (std::size_t i = 0; i < centers.indices.size(); ++i)
    existing[centers.indices[i]] = centers.labels[i];

  std::vector<Index> indices = centers.indices;
  std::vector<int> labels = centers.labels;
  std::vector<double> margins(centers.margin_lb.data(),
                              centers.margin_lb.data() + centers.size());
  for (Index u = 0; u < labeling.n_points(); ++u) {
    const Decision& d = labeling.decisions[static_cast<std::size_t>(u)];
    if (!d.predicted()) continue;
    if (d.kind == DecisionKind::threshold)
      throw ConsistencyError("labeling is not certificate-based");
    auto it = existing.find(u);
    if (it != existing.end()) {
      if (it->second != d.cls)
        throw ConsistencyError("forced label at point " + std::to_string(u) +
                               " contradicts its oracle label");
      continue;  // already a center; original bound kept
    }
    indices.push_back(u);
    labels.push_back(d.cls);
    margins.push_back(d.kind == DecisionKind::singleton ? 0.0 : kappa);
  }
  Vector margin_lb(static_cast<Index>(margins.size()));
  for (std::size_t i = 0; i < margins.size(); ++i)
    margin_lb[static_cast<Index>(i)] = margins[i];
  const Index n_points = labeling.n_points();
  return make_center_set(std::move(indices), std::move(labels),
                         std::move(margin_lb), n_points);
}

double cert_radius(double gamma, const LipschitzBounds& lip) {
  if (!(gamma > 0.0)) throw ConsistencyError("gamma must be > 0");
  if (lip.l_max == 0.0)
    throw ConsistencyError("degenerate head: all Lipschitz bounds are 0");
  return gamma / lip.l_max;
}

void save_certificates_csv(const std::filesystem::path& path,
                           const SelectiveLabeling& labeling,
                           const FeasibleSets& feasible) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "u,decision,rule,forced_class,gamma_size,gamma_tau_size\n";
  for (Index u = 0; u < labeling.n_points(); ++u) {
    const Decision& d = labeling.decisions[static_cast<std::size_t>(u)];
    const Index gamma_size = feasible.gamma.row(u).count();
    const Index gamma_tau_size = feasible.gamma_tau.row(u).count();
    out << u << ',' << (d.predicted() ? "forced" : "abstain") << ','
        << rule_name(d.kind) << ',';
    if (d.predicted()) out << d.cls;
    out << ',' << gamma_size << ',' << gamma_tau_size << '\n';
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace cpl
