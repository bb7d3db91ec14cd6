#include "cpl/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cpl/errors.hpp"

namespace cpl {
namespace {

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Vector softmax_stable(const Vector& logit_values) {
  const double top = logit_values.maxCoeff();
  Vector p = (logit_values.array() - top).exp();
  p /= p.sum();
  return p;
}

void check_eval_labels(const SelectiveLabeling& labeling,
                       std::span<const int> eval_labels) {
  for (Index u = 0; u < labeling.n_points(); ++u) {
    if (!labeling.decisions[static_cast<std::size_t>(u)].predicted()) continue;
    if (u >= static_cast<Index>(eval_labels.size()))
      throw ConsistencyError("missing eval label for predicted point " +
                             std::to_string(u));
  }
}

}  // namespace

double coverage(const SelectiveLabeling& labeling) {
  if (labeling.n_points() < 1) throw ConsistencyError("empty labeling");
  Index predicted = 0;
  for (const Decision& d : labeling.decisions)
    if (d.predicted()) ++predicted;
  return static_cast<double>(predicted) /
         static_cast<double>(labeling.n_points());
}

std::optional<double> selective_risk(const SelectiveLabeling& labeling,
                                     std::span<const int> eval_labels) {
  check_eval_labels(labeling, eval_labels);
  Index predicted = 0;
  Index wrong = 0;
  for (Index u = 0; u < labeling.n_points(); ++u) {
    const Decision& d = labeling.decisions[static_cast<std::size_t>(u)];
    if (!d.predicted()) continue;
    ++predicted;
    if (d.cls != eval_labels[static_cast<std::size_t>(u)]) ++wrong;
  }
  if (predicted == 0) return std::nullopt;
  return static_cast<double>(wrong) / static_cast<double>(predicted);
}

RCCurve rc_curve(const std::string& method, const Selector& selector,
                 std::span<const double> grid,
                 std::span<const int> eval_labels) {
  if (grid.empty()) throw ConsistencyError("empty control grid");
  std::vector<RCPoint> raw;
  raw.reserve(grid.size());
  for (double control : grid) {
    const SelectiveLabeling labeling = selector(control);
    raw.push_back(RCPoint{coverage(labeling),
                          selective_risk(labeling, eval_labels), control});
  }
  std::stable_sort(raw.begin(), raw.end(),
                   [](const RCPoint& a, const RCPoint& b) {
                     return a.coverage < b.coverage;
                   });
  RCCurve curve;
  curve.method = method;
  for (const RCPoint& p : raw) {
    if (!curve.points.empty() && curve.points.back().coverage == p.coverage) {
      RCPoint& kept = curve.points.back();
      if (p.risk && (!kept.risk || *p.risk < *kept.risk)) kept = p;
      continue;
    }
    curve.points.push_back(p);
  }
  curve.cov_max = curve.points.empty() ? 0.0 : curve.points.back().coverage;
  return curve;
}

namespace {

std::vector<RCPoint> positive_points(const RCCurve& curve) {
  std::vector<RCPoint> pts;
  for (const RCPoint& p : curve.points)
    if (p.coverage > 0.0) {
      if (!p.risk)
        throw ConsistencyError("risk undefined at positive coverage");
      pts.push_back(p);
    }
  if (pts.empty())
    throw ConsistencyError("curve has no point with positive coverage");
  return pts;
}

}  // namespace

double aurc_integral(const RCCurve& curve) {
  const auto pts = positive_points(curve);
  double integral = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    integral += (pts[i].coverage - pts[i - 1].coverage) *
                (*pts[i].risk + *pts[i - 1].risk) * 0.5;
  return integral;
}

double aurc(const RCCurve& curve) {
  const auto pts = positive_points(curve);
  const double span = pts.back().coverage - pts.front().coverage;
  if (span == 0.0) return *pts.front().risk;
  return aurc_integral(curve) / span;
}

double truncated_aurc(const RCCurve& curve, double cov_max) {
  if (!(cov_max > 0.0 && cov_max <= 1.0))
    throw ConsistencyError("cov_max must be in (0,1]");
  const auto pts = positive_points(curve);
  if (cov_max < pts.front().coverage)
    throw ConsistencyError("cov_max below the smallest attained coverage");
  double integral = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double c0 = pts[i - 1].coverage;
    const double c1 = pts[i].coverage;
    if (c0 >= cov_max) break;
    const double r0 = *pts[i - 1].risk;
    const double r1 = *pts[i].risk;
    if (c1 <= cov_max) {
      integral += (c1 - c0) * (r0 + r1) * 0.5;
    } else {
      const double t = (cov_max - c0) / (c1 - c0);
      const double r_cut = r0 + t * (r1 - r0);
      integral += (cov_max - c0) * (r0 + r_cut) * 0.5;
      break;
    }
  }
  return integral / cov_max;
}

SelectiveLabeling softmax_select(const LinearHead& head,
                                 const EmbeddingPool& pool, double threshold) {
  const Matrix scores = logits_all(head, pool.vectors);
  SelectiveLabeling labeling;
  labeling.decisions.resize(static_cast<std::size_t>(pool.n_points()));
  for (Index u = 0; u < pool.n_points(); ++u) {
    const Vector p = softmax_stable(scores.row(u).transpose());
    Index top = 0;
    const double top_p = p.maxCoeff(&top);
    if (top_p >= threshold)
      labeling.decisions[static_cast<std::size_t>(u)] =
          Decision{DecisionKind::threshold, static_cast<int>(top)};
  }
  return labeling;
}

SelectiveLabeling margin_select(const LinearHead& head,
                                const EmbeddingPool& pool, double threshold) {
  const Matrix scores = logits_all(head, pool.vectors);
  SelectiveLabeling labeling;
  labeling.decisions.resize(static_cast<std::size_t>(pool.n_points()));
  for (Index u = 0; u < pool.n_points(); ++u) {
    Index top = 0;
    const double top_logit = scores.row(u).maxCoeff(&top);
    double second = -kInf;
    for (Index c = 0; c < scores.cols(); ++c)
      if (c != top) second = std::max(second, scores(u, c));
    if (top_logit - second >= threshold)
      labeling.decisions[static_cast<std::size_t>(u)] =
          Decision{DecisionKind::threshold, static_cast<int>(top)};
  }
  return labeling;
}

namespace {

/// Classes ordered by descending probability, ties broken by class index.
std::vector<Index> descending_classes(const Vector& p) {
  std::vector<Index> order(static_cast<std::size_t>(p.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return p[a] > p[b]; });
  return order;
}

}  // namespace

SelectiveLabeling aps_conformal(const LinearHead& head,
                                const EmbeddingPool& pool,
                                const LabeledSet& calibration, double alpha) {
  if (calibration.empty()) throw ConsistencyError("empty calibration set");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConsistencyError("alpha must be in (0,1)");
  const Matrix scores = logits_all(head, pool.vectors);

  // APS score: cumulative softmax mass of the descending-probability prefix
  // through the true class.
  std::vector<double> cal_scores;
  cal_scores.reserve(calibration.indices.size());
  for (std::size_t i = 0; i < calibration.indices.size(); ++i) {
    const Index idx = calibration.indices[i];
    const int truth = calibration.labels[i];
    if (truth >= head.n_classes())
      throw ConsistencyError("calibration label out of head range");
    const Vector p = softmax_stable(scores.row(idx).transpose());
    double mass = 0.0;
    for (Index c : descending_classes(p)) {
      mass += p[c];
      if (static_cast<int>(c) == truth) break;
    }
    cal_scores.push_back(mass);
  }
  std::sort(cal_scores.begin(), cal_scores.end());
  const std::size_t n_cal = cal_scores.size();
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil((static_cast<double>(n_cal) + 1.0) * (1.0 - alpha)));
  const double q_hat = rank > n_cal ? 1.0 : cal_scores[rank - 1];

  SelectiveLabeling labeling;
  labeling.decisions.resize(static_cast<std::size_t>(pool.n_points()));
  for (Index u = 0; u < pool.n_points(); ++u) {
    const Vector p = softmax_stable(scores.row(u).transpose());
    const auto order = descending_classes(p);
    double mass = 0.0;
    std::size_t set_size = order.size();
    for (std::size_t j = 0; j < order.size(); ++j) {
      mass += p[order[j]];
      if (mass >= q_hat) {
        set_size = j + 1;
        break;
      }
    }
    if (set_size == 1)
      labeling.decisions[static_cast<std::size_t>(u)] =
          Decision{DecisionKind::threshold, static_cast<int>(order[0])};
  }
  return labeling;
}

SelectiveLabeling label_pool(const EnvelopeTable& env, double tau,
                             double kappa) {
  SelectiveLabeling labeling;
  labeling.decisions.resize(static_cast<std::size_t>(env.n_points()));
  labeling.tau = tau;
  labeling.kappa = kappa;
  for (Index u = 0; u < env.n_points(); ++u)
    labeling.decisions[static_cast<std::size_t>(u)] =
        force_label(u, env, tau, kappa);
  return labeling;
}

std::vector<double> cert_tau_grid(const EnvelopeTable& env, int n_grid) {
  if (n_grid < 2) throw ConsistencyError("tau grid needs >= 2 values");
  double max_lb = -kInf;
  double min_ub = kInf;
  for (Index u = 0; u < env.n_points(); ++u) {
    for (Index c = 0; c < env.n_classes(); ++c) {
      if (std::isfinite(env.lb(u, c))) max_lb = std::max(max_lb, env.lb(u, c));
      if (std::isfinite(env.ub(u, c))) min_ub = std::min(min_ub, env.ub(u, c));
    }
  }
  double hi = 0.0;
  if (std::isfinite(min_ub)) {
    hi = std::max(hi, -min_ub);
    if (std::isfinite(max_lb)) hi = std::max(hi, max_lb - min_ub);
  }
  hi += 1.0;
  std::vector<double> grid(static_cast<std::size_t>(n_grid));
  for (int i = 0; i < n_grid; ++i)
    grid[static_cast<std::size_t>(i)] =
        hi * static_cast<double>(n_grid - 1 - i) /
        static_cast<double>(n_grid - 1);
  grid.back() = 0.0;
  return grid;
}

void save_rc_csv(const std::filesystem::path& path,
                 std::span<const RCCurve> curves) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "method,control,coverage,risk\n";
  for (const RCCurve& curve : curves) {
    for (const RCPoint& p : curve.points) {
      out << curve.method << ',' << format_double(p.control) << ','
          << format_double(p.coverage) << ',';
      if (p.risk) out << format_double(*p.risk);
      out << '\n';
    }
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace cpl
