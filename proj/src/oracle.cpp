#include "cpl/oracle.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cpl/errors.hpp"
#include "cpl/rng.hpp"

namespace cpl {
namespace {

/// Precomputed ball membership bitsets for repeated coverage evaluation.
class CoverageOracle {
 public:
  CoverageOracle(const EmbeddingPool& pool, double rho)
      : n_(pool.n_points()), words_((n_ + 63) / 64) {
    if (!(rho > 0.0)) throw ConsistencyError("rho must be > 0");
    balls_.assign(static_cast<std::size_t>(n_ * words_), 0);
    for (Index i = 0; i < n_; ++i) {
      const Vector d =
          (pool.vectors.rowwise() - pool.vectors.row(i)).rowwise().norm();
      for (Index u = 0; u < n_; ++u)
        if (d[u] < rho) set_bit(i, u);
    }
  }

  Index value(std::span<const Index> selected) const {
    std::vector<std::uint64_t> covered(static_cast<std::size_t>(words_), 0);
    for (Index i : selected) {
      const std::uint64_t* row =
          balls_.data() + static_cast<std::size_t>(i * words_);
      for (Index w = 0; w < words_; ++w)
        covered[static_cast<std::size_t>(w)] |= row[w];
    }
    Index total = 0;
    for (std::uint64_t word : covered) total += std::popcount(word);
    return total;
  }

  Index n() const { return n_; }

 private:
  void set_bit(Index ball_index, Index u) {
    balls_[static_cast<std::size_t>(ball_index * words_ + u / 64)] |=
        std::uint64_t{1} << (u % 64);
  }

  Index n_;
  Index words_;
  std::vector<std::uint64_t> balls_;
};

struct MembershipCheck {
  bool lipschitz_ok = true;
  bool centers_ok = true;
  double max_lipschitz_excess = -kInf;
  double min_center_slack = kInf;
};

MembershipCheck check_membership(const LinearHead& candidate,
                                 const CenterSet& centers,
                                 const LipschitzBounds& lip,
                                 const EmbeddingPool& pool) {
  MembershipCheck check;
  const LipschitzBounds cand_lip = lipschitz_bounds(candidate);
  for (Index c = 0; c < lip.per_class.size(); ++c) {
    const double excess = cand_lip.per_class[c] - lip.per_class[c];
    check.max_lipschitz_excess = std::max(check.max_lipschitz_excess, excess);
    if (excess > kMembershipTol) check.lipschitz_ok = false;
  }
  for (Index i = 0; i < centers.size(); ++i) {
    const Index idx = centers.indices[static_cast<std::size_t>(i)];
    const int label = centers.labels[static_cast<std::size_t>(i)];
    const double slack =
        margin(candidate, pool.vectors.row(idx).transpose(), label) -
        centers.margin_lb[i];
    check.min_center_slack = std::min(check.min_center_slack, slack);
    if (slack < -kMembershipTol) check.centers_ok = false;
  }
  return check;
}

}  // namespace

ConsistentHeadSample sample_consistent_heads(
    const LinearHead& base, const CenterSet& centers,
    const LipschitzBounds& lip, const EmbeddingPool& pool, Index n_samples,
    double noise_scale, std::uint64_t seed) {
  if (n_samples < 1) throw ConsistencyError("n_samples must be >= 1");
  if (!(noise_scale >= 0.0)) throw ConsistencyError("noise scale must be >= 0");
  if (lip.per_class.size() != base.n_classes())
    throw ConsistencyError("lipschitz bounds do not match head");

  ConsistentHeadSample sample;
  sample.n_candidates = n_samples;
  for (Index j = 0; j < n_samples; ++j) {
    LinearHead candidate = base;
    if (j == 0) {
      // the base head itself
    } else if (j % 3 == 2) {
      // margin-preserving shift: add one affine function to every logit
      Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(j));
      Vector direction(base.dim());
      for (Index d = 0; d < base.dim(); ++d)
        direction[d] = noise_scale * rng.normal();
      const double offset = noise_scale * rng.normal();
      candidate.weights.rowwise() += direction.transpose();
      candidate.bias.array() += offset;
    } else {
      Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(j));
      for (Index c = 0; c < base.n_classes(); ++c)
        for (Index d = 0; d < base.dim(); ++d)
          candidate.weights(c, d) += noise_scale * rng.normal();
      for (Index c = 0; c < base.n_classes(); ++c)
        candidate.bias[c] += noise_scale * rng.normal();
    }

    const MembershipCheck check =
        check_membership(candidate, centers, lip, pool);
    if (check.lipschitz_ok && check.centers_ok) {
      sample.accepted.push_back(std::move(candidate));
      sample.min_center_slack.push_back(check.min_center_slack);
      sample.max_lipschitz_excess.push_back(check.max_lipschitz_excess);
    } else {
      if (j == 0)
        throw ConsistencyError(
            "pipeline bug: the base head fails its own constraints");
      if (!check.lipschitz_ok) ++sample.rejected_lipschitz;
      else ++sample.rejected_center;
    }
  }
  return sample;
}

VerificationReport verify_certificates(const ConsistentHeadSample& sample,
                                       const EnvelopeTable& env,
                                       const SelectiveLabeling& labeling,
                                       const EmbeddingPool& pool) {
  VerificationReport report;
  report.points = pool.n_points();
  report.heads_checked = static_cast<Index>(sample.accepted.size());
  report.vacuous = sample.accepted.empty();
  if (env.n_points() != pool.n_points() ||
      labeling.n_points() != pool.n_points())
    throw ConsistencyError("verification inputs disagree on pool size");

  for (std::size_t h = 0; h < sample.accepted.size(); ++h) {
    const LinearHead& head = sample.accepted[h];
    const Matrix scores = logits_all(head, pool.vectors);
    const Matrix margins = margins_all(head, pool.vectors);
    for (Index u = 0; u < pool.n_points(); ++u) {
      for (Index c = 0; c < env.n_classes(); ++c) {
        const double m = margins(u, c);
        if (m < env.lb(u, c) - kNumericSlack)
          report.violations.push_back(Violation{
              static_cast<Index>(h), u, static_cast<int>(c), "sandwich_lb",
              m, env.lb(u, c)});
        if (m > env.ub(u, c) + kNumericSlack)
          report.violations.push_back(Violation{
              static_cast<Index>(h), u, static_cast<int>(c), "sandwich_ub",
              m, env.ub(u, c)});
      }
      const double top = scores.row(u).maxCoeff();
      const Decision& decision =
          labeling.decisions[static_cast<std::size_t>(u)];
      for (Index c = 0; c < env.n_classes(); ++c) {
        if (scores(u, c) != top) continue;  // c is a logit maximizer
        if (!(env.ub(u, c) >= 0.0))
          report.violations.push_back(Violation{
              static_cast<Index>(h), u, static_cast<int>(c), "containment",
              scores(u, c), env.ub(u, c)});
        if (decision.predicted() && static_cast<int>(c) != decision.cls)
          report.violations.push_back(Violation{
              static_cast<Index>(h), u, static_cast<int>(c), "forced",
              scores(u, c), static_cast<double>(decision.cls)});
      }
    }
  }
  return report;
}

CoverageOptimum exhaustive_coverage_opt(const EmbeddingPool& pool, double rho,
                                        Index k) {
  const Index n = pool.n_points();
  if (k < 1 || k > n) throw ConsistencyError("k out of range");

  double combinations = 1.0;
  for (Index i = 0; i < k; ++i)
    combinations *= static_cast<double>(n - i) / static_cast<double>(i + 1);
  if (combinations > 1e7)
    throw GuardError("C(" + std::to_string(n) + "," + std::to_string(k) +
                     ") exceeds the 10^7 enumeration guard");

  const CoverageOracle oracle(pool, rho);
  std::vector<Index> subset(static_cast<std::size_t>(k));
  std::iota(subset.begin(), subset.end(), Index{0});
  CoverageOptimum best;
  for (;;) {
    const Index value = oracle.value(subset);
    if (value > best.value || best.best_set.empty()) {
      best.value = value;
      best.best_set = subset;
    }
    // next lexicographic combination
    Index pos = k - 1;
    while (pos >= 0 && subset[static_cast<std::size_t>(pos)] == n - k + pos)
      --pos;
    if (pos < 0) break;
    ++subset[static_cast<std::size_t>(pos)];
    for (Index q = pos + 1; q < k; ++q)
      subset[static_cast<std::size_t>(q)] =
          subset[static_cast<std::size_t>(q - 1)] + 1;
  }
  return best;
}

SubmodularityReport probe_submodularity(const EmbeddingPool& pool, double rho,
                                        Index n_trials, std::uint64_t seed) {
  if (n_trials < 1) throw ConsistencyError("n_trials must be >= 1");
  const CoverageOracle oracle(pool, rho);
  const Index n = oracle.n();
  Rng rng(seed);
  SubmodularityReport report;
  while (report.trials < n_trials) {
    std::vector<Index> b_set;
    for (Index u = 0; u < n; ++u)
      if (rng.next() & 1) b_set.push_back(u);
    if (static_cast<Index>(b_set.size()) == n) continue;  // no x available
    std::vector<Index> a_set;
    for (Index u : b_set)
      if (rng.next() & 1) a_set.push_back(u);
    std::vector<Index> complement;
    for (Index u = 0; u < n; ++u)
      if (std::find(b_set.begin(), b_set.end(), u) == b_set.end())
        complement.push_back(u);
    const Index x = complement[static_cast<std::size_t>(
        rng.bounded(complement.size()))];

    const Index f_a = oracle.value(a_set);
    const Index f_b = oracle.value(b_set);
    std::vector<Index> a_plus = a_set;
    a_plus.push_back(x);
    std::vector<Index> b_plus = b_set;
    b_plus.push_back(x);
    const Index f_a_plus = oracle.value(a_plus);
    const Index f_b_plus = oracle.value(b_plus);

    if (f_a > f_b) ++report.monotonicity_violations;
    if (f_a_plus - f_a < f_b_plus - f_b) ++report.submodularity_violations;
    ++report.trials;
  }
  return report;
}

MetricRecount recount_metrics(const SelectiveLabeling& labeling,
                              std::span<const int> eval_labels) {
  MetricRecount recount;
  Index predicted = 0;
  Index wrong = 0;
  for (Index u = 0; u < labeling.n_points(); ++u) {
    const Decision& d = labeling.decisions[static_cast<std::size_t>(u)];
    if (!d.predicted()) continue;
    if (u >= static_cast<Index>(eval_labels.size()))
      throw ConsistencyError("missing eval label for predicted point");
    ++predicted;
    if (d.cls != eval_labels[static_cast<std::size_t>(u)]) ++wrong;
  }
  recount.coverage = static_cast<double>(predicted) /
                     static_cast<double>(labeling.n_points());
  if (predicted > 0)
    recount.risk = static_cast<double>(wrong) / static_cast<double>(predicted);
  return recount;
}

void save_verification_report(const std::filesystem::path& path,
                              Index instances,
                              const ConsistentHeadSample& sample,
                              const VerificationReport& report) {
  nlohmann::json j;
  j["schema"] = "cpl-verify/1";
  j["instances"] = instances;
  j["heads_accepted"] = sample.accepted.size();
  j["heads_rejected"] = {{"lipschitz", sample.rejected_lipschitz},
                         {"center", sample.rejected_center}};
  j["candidates"] = sample.n_candidates;
  j["vacuous"] = report.vacuous;
  nlohmann::json violations = nlohmann::json::array();
  for (const Violation& v : report.violations)
    violations.push_back({{"head", v.head},
                          {"point", v.point},
                          {"class", v.cls},
                          {"kind", v.kind},
                          {"value", v.value},
                          {"bound", v.bound}});
  j["violations"] = violations;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace cpl
