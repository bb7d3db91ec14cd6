#ifndef CPL_ORACLE_HPP_
#define CPL_ORACLE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpl/certify.hpp"
#include "cpl/head.hpp"
#include "cpl/pool.hpp"

namespace cpl {

// Membership tolerance is tighter than the certificate slack (1e-9) so the
// sampler cannot accept a head the certificate logic would treat as outside
// the consistent class.
inline constexpr double kMembershipTol = 1e-12;

/// Sampled members of the Lipschitz-consistent class, with acceptance
/// bookkeeping per candidate family.
struct ConsistentHeadSample {
  std::vector<LinearHead> accepted;
  std::vector<double> min_center_slack;   // per accepted head
  std::vector<double> max_lipschitz_excess;
  Index n_candidates = 0;
  Index rejected_lipschitz = 0;
  Index rejected_center = 0;
};

/// Candidate families: the base head itself, Gaussian perturbations of W and
/// b at scale `noise_scale`, and margin-preserving common shifts
/// f' = f + g*1 with g affine (always accepted). Candidate streams are
/// seeded per candidate index, so results do not depend on scheduling.
ConsistentHeadSample sample_consistent_heads(
    const LinearHead& base, const CenterSet& centers,
    const LipschitzBounds& lip, const EmbeddingPool& pool, Index n_samples,
    double noise_scale, std::uint64_t seed);

struct Violation {
  Index head;
  Index point;
  int cls;
  std::string kind;  // "sandwich_lb" | "sandwich_ub" | "containment" | "forced"
  double value;
  double bound;
};

struct VerificationReport {
  Index heads_checked = 0;
  Index points = 0;
  bool vacuous = false;  // empty sample: nothing was checked
  std::vector<Violation> violations;

  bool clean() const { return violations.empty(); }
};

/// For every accepted head and pool point: envelope sandwich within 1e-9,
/// every logit maximizer inside the feasible set, and agreement with every
/// forced decision (argmax ties at forced points count as violations).
VerificationReport verify_certificates(const ConsistentHeadSample& sample,
                                       const EnvelopeTable& env,
                                       const SelectiveLabeling& labeling,
                                       const EmbeddingPool& pool);

struct CoverageOptimum {
  Index value = 0;
  std::vector<Index> best_set;
};

/// Exact maximum of ball-union coverage over all size-k subsets by
/// enumeration. Guarded: C(N,k) must not exceed 10^7.
CoverageOptimum exhaustive_coverage_opt(const EmbeddingPool& pool, double rho,
                                        Index k);

struct SubmodularityReport {
  Index trials = 0;
  Index monotonicity_violations = 0;
  Index submodularity_violations = 0;

  bool clean() const {
    return monotonicity_violations == 0 && submodularity_violations == 0;
  }
};

/// Random triples A subset of B, x outside B: checks diminishing returns and
/// monotonicity of the coverage proxy.
SubmodularityReport probe_submodularity(const EmbeddingPool& pool, double rho,
                                        Index n_trials, std::uint64_t seed);

struct MetricRecount {
  double coverage = 0.0;
  std::optional<double> risk;
};

/// Naive double-loop recount; must equal the evaluate module exactly.
MetricRecount recount_metrics(const SelectiveLabeling& labeling,
                              std::span<const int> eval_labels);

/// JSON report: {instances, heads_accepted, heads_rejected:{lipschitz,
/// center}, violations:[...]}.
void save_verification_report(const std::filesystem::path& path,
                              Index instances,
                              const ConsistentHeadSample& sample,
                              const VerificationReport& report);

}  // namespace cpl

#endif  // CPL_ORACLE_HPP_
