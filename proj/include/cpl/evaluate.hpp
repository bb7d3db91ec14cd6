#ifndef CPL_EVALUATE_HPP_
#define CPL_EVALUATE_HPP_

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpl/certify.hpp"
#include "cpl/head.hpp"
#include "cpl/pool.hpp"

namespace cpl {

struct RCPoint {
  double coverage = 0.0;
  std::optional<double> risk;  // undefined at zero coverage
  double control = 0.0;
};

/// Risk-coverage curve: points ordered by increasing coverage, duplicate
/// coverages collapsed keeping the minimum risk.
struct RCCurve {
  std::vector<RCPoint> points;
  std::string method;
  double cov_max = 0.0;
};

/// Fraction of the pool with a prediction.
double coverage(const SelectiveLabeling& labeling);

/// Error rate conditioned on predicting; nullopt when nothing is predicted.
std::optional<double> selective_risk(const SelectiveLabeling& labeling,
                                     std::span<const int> eval_labels);

using Selector = std::function<SelectiveLabeling(double control)>;

RCCurve rc_curve(const std::string& method, const Selector& selector,
                 std::span<const double> grid,
                 std::span<const int> eval_labels);

/// Trapezoidal area under risk over the attained coverage span, divided by
/// the span (a mean risk). Risk left of the smallest attained positive
/// coverage is not extrapolated.
double aurc(const RCCurve& curve);

/// Raw trapezoidal integral without the span normalization.
double aurc_integral(const RCCurve& curve);

/// Restricts integration to [0, cov_max] (linear interpolation at the right
/// endpoint) and divides by cov_max.
double truncated_aurc(const RCCurve& curve, double cov_max);

/// Predict the argmax class iff its stable-softmax probability >= threshold.
SelectiveLabeling softmax_select(const LinearHead& head,
                                 const EmbeddingPool& pool, double threshold);

/// Predict iff the top-1/top-2 logit gap >= threshold.
SelectiveLabeling margin_select(const LinearHead& head,
                                const EmbeddingPool& pool, double threshold);

/// Adaptive-prediction-set conformal selection: calibrates the cumulative
/// descending-probability mass at the conservative quantile and predicts
/// only where the resulting prediction set is a singleton.
SelectiveLabeling aps_conformal(const LinearHead& head,
                                const EmbeddingPool& pool,
                                const LabeledSet& calibration, double alpha);

/// Labels the pool from precomputed envelopes (certificate selector body).
SelectiveLabeling label_pool(const EnvelopeTable& env, double tau,
                             double kappa);

/// Descending tau grid starting high enough to abstain everywhere and
/// ending at exactly 0.
std::vector<double> cert_tau_grid(const EnvelopeTable& env, int n_grid);

/// RC output: CSV columns method, control, coverage, risk (risk empty when
/// undefined).
void save_rc_csv(const std::filesystem::path& path,
                 std::span<const RCCurve> curves);

}  // namespace cpl

#endif  // CPL_EVALUATE_HPP_
