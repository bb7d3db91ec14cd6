#ifndef CPL_CERTIFY_HPP_
#define CPL_CERTIFY_HPP_

#include <filesystem>
#include <vector>

#include "cpl/head.hpp"
#include "cpl/pool.hpp"
#include "cpl/types.hpp"

namespace cpl {

/// Certified margin envelopes per (pool point, class). lb is -inf for
/// classes with no labeled center; ub is +inf when every center has that
/// class. Whenever the consistent class is non-empty, lb <= ub.
struct EnvelopeTable {
  Matrix lb;  // N x C
  Matrix ub;  // N x C

  Index n_points() const { return lb.rows(); }
  Index n_classes() const { return lb.cols(); }
};

/// sup over class-`cls` centers of (m_i - L_cls * ||z_u - z_i||); -inf if
/// there is none.
double lower_envelope(Index u, int cls, const CenterSet& centers,
                      const DistanceView& dist, const LipschitzBounds& lip);

/// inf over centers with a different label of (-m_i + L_cls * ||z_u - z_i||);
/// +inf if there is none.
double upper_envelope(Index u, int cls, const CenterSet& centers,
                      const DistanceView& dist, const LipschitzBounds& lip);

/// All envelopes at once; one pass over centers per (u, c), parallel over u.
EnvelopeTable compute_envelopes(const CenterSet& centers,
                                const DistanceView& dist,
                                const LipschitzBounds& lip, Index n_classes);

/// Per-point class masks: gamma keeps classes with ub >= 0, gamma_tau keeps
/// classes with ub >= -tau (both boundaries inclusive).
struct FeasibleSets {
  BoolArray gamma;      // N x C
  BoolArray gamma_tau;  // N x C
  double tau;
};

FeasibleSets feasible_sets(const EnvelopeTable& env, double tau);

enum class DecisionKind { abstain, singleton, gap, threshold };

struct Decision {
  DecisionKind kind = DecisionKind::abstain;
  int cls = -1;

  bool predicted() const { return kind != DecisionKind::abstain; }
};

/// Force-or-abstain output over the whole pool plus the parameters that
/// produced it.
struct SelectiveLabeling {
  std::vector<Decision> decisions;
  double tau = 0.0;
  double kappa = 0.0;

  Index n_points() const { return static_cast<Index>(decisions.size()); }
};

/// Singleton forcing first (|gamma_tau(u)| == 1), then gap forcing
/// (lb_{c*} >= kappa and lb_{c*} > max rival ub + tau + numeric slack),
/// otherwise abstain. At most one class can satisfy the gap condition when
/// the envelopes are consistent; two qualifying classes raise an error.
Decision force_label(Index u, const EnvelopeTable& env, double tau,
                     double kappa);

struct CertificationResult {
  EnvelopeTable envelopes;
  FeasibleSets feasible;
  SelectiveLabeling labeling;
  LipschitzBounds lipschitz;
};

/// End-to-end certification of the pool against the head's version space.
/// Asserts that the head's own prediction matches every forced label.
CertificationResult certify_pool(const EmbeddingPool& pool,
                                 const LinearHead& head,
                                 const CenterSet& centers, double tau,
                                 double kappa, bool shared_lipschitz = false);

/// Adds forced points as new centers: m = 0 for singleton-forced, kappa for
/// gap-forced. Original centers are kept unchanged; a forced point already
/// labeled differently is a consistency error.
CenterSet augment_with_pseudolabels(const CenterSet& centers,
                                    const SelectiveLabeling& labeling,
                                    double kappa);

/// rho_cert = gamma / L_max.
double cert_radius(double gamma, const LipschitzBounds& lip);

/// Certificate dump: CSV with columns u, decision, rule, forced_class,
/// gamma_size, gamma_tau_size.
void save_certificates_csv(const std::filesystem::path& path,
                           const SelectiveLabeling& labeling,
                           const FeasibleSets& feasible);

}  // namespace cpl

#endif  // CPL_CERTIFY_HPP_
