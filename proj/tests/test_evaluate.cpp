#include <doctest.h>

#include <cmath>
#include <vector>

#include "cpl/errors.hpp"
#include "cpl/evaluate.hpp"
#include "cpl/oracle.hpp"
#include "cpl/rng.hpp"
#include "test_support.hpp"

using namespace cpl;
using cpl_tests::make_instance;

namespace {

/// -1 means abstain; anything else is a predicted class.
SelectiveLabeling labeling_of(const std::vector<int>& predictions) {
  SelectiveLabeling labeling;
  for (int p : predictions) {
    if (p < 0)
      labeling.decisions.push_back(Decision{});
    else
      labeling.decisions.push_back(Decision{DecisionKind::threshold, p});
  }
  return labeling;
}

/// Fixed-logit head: zero weights, logits equal the bias everywhere.
LinearHead constant_head(const std::vector<double>& logit_values, Index dim) {
  Vector bias(static_cast<Index>(logit_values.size()));
  for (std::size_t c = 0; c < logit_values.size(); ++c)
    bias[static_cast<Index>(c)] = logit_values[c];
  return make_head(Matrix::Zero(bias.size(), dim), bias);
}

}  // namespace

TEST_SUITE("evaluate") {

TEST_CASE("coverage") {
  CHECK(coverage(labeling_of({0, -1, 1, -1, 2, -1})) == 0.5);
  CHECK(coverage(labeling_of({-1, -1, -1})) == 0.0);
  CHECK(coverage(labeling_of({0, 1, 0})) == 1.0);
}

TEST_CASE("selective risk") {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  CHECK(*selective_risk(labeling_of({0, -1, 0, 1, -1, -1}), truth) ==
        doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(selective_risk(labeling_of({-1, -1, -1, -1, -1, -1}), truth)
                  .has_value());
  CHECK(*selective_risk(labeling_of({0, 0, 1, 1, 2, 2}), truth) == 0.0);
  CHECK_THROWS_AS(selective_risk(labeling_of({0, 0, 0}),
                                 std::vector<int>{0}),
                  ConsistencyError);
}

TEST_CASE("rc_curve collapses identical coverages keeping the best risk") {
  const std::vector<int> truth = {0, 1};
  const Selector selector = [&](double control) {
    if (control < 1.0) return labeling_of({0, 0});  // coverage 1, risk 1/2
    return labeling_of({0, 1});                     // coverage 1, risk 0
  };
  const std::vector<double> grid = {0.0, 2.0};
  const RCCurve curve = rc_curve("toy", selector, grid, truth);
  REQUIRE(curve.points.size() == 1);
  CHECK(curve.points[0].coverage == 1.0);
  CHECK(*curve.points[0].risk == 0.0);
  CHECK(curve.cov_max == 1.0);
}

TEST_CASE("rc_curve records zero-coverage points without risk") {
  const std::vector<int> truth = {0, 1};
  const Selector selector = [&](double) { return labeling_of({-1, -1}); };
  const std::vector<double> grid = {0.5};
  const RCCurve curve = rc_curve("toy", selector, grid, truth);
  REQUIRE(curve.points.size() == 1);
  CHECK(curve.points[0].coverage == 0.0);
  CHECK_FALSE(curve.points[0].risk.has_value());
}

TEST_CASE("aurc of a flat two-point curve is the constant risk") {
  RCCurve curve;
  curve.points = {RCPoint{0.2, 0.1, 1.0}, RCPoint{1.0, 0.1, 0.0}};
  CHECK(aurc(curve) == doctest::Approx(0.1));
  CHECK(aurc_integral(curve) == doctest::Approx(0.08));
}

TEST_CASE("aurc is zero when risk is zero everywhere") {
  RCCurve curve;
  curve.points = {RCPoint{0.3, 0.0, 0.0}, RCPoint{0.9, 0.0, 0.0}};
  CHECK(aurc(curve) == 0.0);
}

TEST_CASE("aurc is invariant to duplicating a curve point") {
  RCCurve curve;
  curve.points = {RCPoint{0.2, 0.3, 0.0}, RCPoint{0.6, 0.1, 0.0},
                  RCPoint{1.0, 0.2, 0.0}};
  const double before = aurc(curve);
  RCCurve padded = curve;
  padded.points.insert(padded.points.begin() + 1, curve.points[1]);
  CHECK(aurc(padded) == doctest::Approx(before).epsilon(1e-15));
}

TEST_CASE("truncated aurc guards and interpolation") {
  RCCurve curve;
  curve.points = {RCPoint{0.5, 0.2, 0.0}, RCPoint{1.0, 0.4, 0.0}};
  CHECK_THROWS_AS(truncated_aurc(curve, 0.25), ConsistencyError);
  // integral over [0.5, 0.75]: risk rises linearly 0.2 -> 0.3
  const double expected = (0.25 * (0.2 + 0.3) / 2.0) / 0.75;
  CHECK(truncated_aurc(curve, 0.75) == doctest::Approx(expected));
  CHECK_THROWS_AS(truncated_aurc(curve, 0.0), ConsistencyError);
  CHECK_THROWS_AS(truncated_aurc(curve, 1.5), ConsistencyError);
}

TEST_CASE("softmax thresholding") {
  const EmbeddingPool pool = make_pool(Matrix::Ones(1, 1));
  const LinearHead head = constant_head({10.0, 0.0}, 1);
  // independently computed stable softmax of (10, 0)
  const double top_prob = 1.0 / (1.0 + std::exp(-10.0));
  CHECK(top_prob > 0.9);
  const SelectiveLabeling strict = softmax_select(head, pool, 0.9);
  CHECK(strict.decisions[0].predicted());
  CHECK(strict.decisions[0].cls == 0);
  CHECK(coverage(softmax_select(head, pool, 0.0)) == 1.0);
  CHECK(coverage(softmax_select(head, pool, 1.0 + 1e-12)) == 0.0);
}

TEST_CASE("margin thresholding") {
  const EmbeddingPool pool = make_pool(Matrix::Ones(1, 1));
  const LinearHead gap1 = constant_head({1.0, 0.0, -1.0}, 1);
  CHECK(margin_select(gap1, pool, 0.5).decisions[0].predicted());
  const LinearHead tied = constant_head({0.7, 0.7}, 1);
  const SelectiveLabeling at_zero = margin_select(tied, pool, 0.0);
  CHECK(at_zero.decisions[0].predicted());
  CHECK(at_zero.decisions[0].cls == 0);  // tie goes to the lowest class
  CHECK_FALSE(margin_select(gap1, pool, kInf).decisions[0].predicted());
}

TEST_CASE("aps conformal singletons on near-one-hot probabilities") {
  Rng rng(5);
  Matrix points(12, 2);
  for (Index i = 0; i < 12; ++i)
    for (Index j = 0; j < 2; ++j) points(i, j) = rng.normal();
  const EmbeddingPool pool = make_pool(points);
  const LinearHead head = constant_head({20.0, 0.0, 0.0}, 2);
  // ceil((n+1)(1-alpha)) must stay <= n for a usable threshold: n = 12
  // calibration points support alpha = 0.1
  LabeledSet calibration;
  for (Index i = 0; i < 12; ++i) {
    calibration.indices.push_back(i);
    calibration.labels.push_back(0);
  }
  const SelectiveLabeling labeling = aps_conformal(head, pool, calibration, 0.1);
  CHECK(coverage(labeling) == 1.0);
  for (const Decision& d : labeling.decisions) CHECK(d.cls == 0);
}

TEST_CASE("aps abstains under uniform probabilities") {
  const EmbeddingPool pool = make_pool(Matrix::Ones(8, 1));
  const LinearHead head =
      constant_head(std::vector<double>(10, 0.0), 1);  // C = 10, uniform
  LabeledSet calibration{{0, 1, 2}, {0, 3, 7}};
  for (double alpha : {0.1, 0.25, 0.5})
    CHECK(coverage(aps_conformal(head, pool, calibration, alpha)) == 0.0);
}

TEST_CASE("aps rejects bad arguments") {
  const EmbeddingPool pool = make_pool(Matrix::Ones(2, 1));
  const LinearHead head = constant_head({0.0, 1.0}, 1);
  CHECK_THROWS_AS(aps_conformal(head, pool, LabeledSet{}, 0.1),
                  ConsistencyError);
  CHECK_THROWS_AS(aps_conformal(head, pool, LabeledSet{{0}, {0}}, 0.0),
                  ConsistencyError);
  CHECK_THROWS_AS(aps_conformal(head, pool, LabeledSet{{0}, {0}}, 1.0),
                  ConsistencyError);
}

TEST_CASE("threshold sweeps have non-increasing coverage") {
  const auto inst = make_instance(808, 10, 3, 4, 4.0, 1.2, 12);
  double prev_softmax = 2.0;
  double prev_margin = 2.0;
  for (int i = 0; i <= 20; ++i) {
    const double t = static_cast<double>(i) / 20.0;
    const double cov_s = coverage(softmax_select(inst.head, inst.pool, t));
    const double cov_m =
        coverage(margin_select(inst.head, inst.pool, t * 10.0));
    CHECK(cov_s <= prev_softmax);
    CHECK(cov_m <= prev_margin);
    prev_softmax = cov_s;
    prev_margin = cov_m;
  }
}

TEST_CASE("metrics match the oracle recount on random labelings") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.bounded(40));
    std::vector<int> predictions, truth;
    for (Index u = 0; u < n; ++u) {
      predictions.push_back(rng.next() % 4 == 0
                                ? -1
                                : static_cast<int>(rng.bounded(3)));
      truth.push_back(static_cast<int>(rng.bounded(3)));
    }
    const SelectiveLabeling labeling = labeling_of(predictions);
    const MetricRecount recount = recount_metrics(labeling, truth);
    CHECK(coverage(labeling) == recount.coverage);
    const auto risk = selective_risk(labeling, truth);
    CHECK(risk.has_value() == recount.risk.has_value());
    if (risk) CHECK(*risk == *recount.risk);
  }
}

TEST_CASE("certified predictions agree with every sampled member") {
  const auto inst = make_instance(909);
  REQUIRE(coverage(inst.labeling) > 0.0);
  const ConsistentHeadSample sample = sample_consistent_heads(
      inst.head, inst.centers, inst.lipschitz, inst.pool, 90, 0.05, 3);
  for (const LinearHead& member : sample.accepted) {
    const Matrix scores = logits_all(member, inst.pool.vectors);
    std::vector<int> member_predictions;
    for (Index u = 0; u < inst.pool.n_points(); ++u) {
      Index winner = 0;
      scores.row(u).maxCoeff(&winner);
      member_predictions.push_back(static_cast<int>(winner));
    }
    // agreement, not correctness: risk against the member's own predictions
    CHECK(*selective_risk(inst.labeling, member_predictions) == 0.0);
  }
}

TEST_CASE("cert tau grid starts fully abstaining and ends at zero") {
  const auto inst = make_instance(111);
  const auto grid = cert_tau_grid(inst.envelopes, 9);
  REQUIRE(grid.size() == 9);
  CHECK(grid.back() == 0.0);
  CHECK(coverage(label_pool(inst.envelopes, grid.front(), 0.0)) == 0.0);
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] < grid[i - 1]);
}

}  // TEST_SUITE
