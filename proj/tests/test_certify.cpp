#include <doctest.h>

#include <vector>

#include "cpl/certify.hpp"
#include "cpl/errors.hpp"
#include "cpl/oracle.hpp"
#include "test_support.hpp"

using namespace cpl;
using cpl_tests::make_instance;

namespace {

// The worked 2-center, 3-class instance: center 0 has class 0 with margin 1,
// center 1 has class 1 with margin 1, all Lipschitz constants are 1, and the
// probe point sits at distance 0.2 from center 0 and 2.0 from center 1.
struct WorkedInstance {
  CenterSet centers;
  DistanceView dist;
  LipschitzBounds lip;
  EnvelopeTable env;
};

WorkedInstance worked_instance() {
  WorkedInstance w;
  Vector margins(2);
  margins << 1.0, 1.0;
  w.centers = make_center_set({0, 1}, {0, 1}, margins, 3);
  Matrix d(2, 3);
  d << 0.0, 2.2, 0.2,
       2.2, 0.0, 2.0;
  w.dist = DistanceView{{0, 1}, d};
  w.lip = LipschitzBounds{Vector::Ones(3), 1.0};
  w.env = compute_envelopes(w.centers, w.dist, w.lip, 3);
  return w;
}

constexpr Index kProbe = 2;  // index of u in the worked instance

}  // namespace

TEST_SUITE("certify") {

TEST_CASE("lower envelope basics") {
  Vector margins(1);
  margins << 1.0;
  const CenterSet one = make_center_set({0}, {0}, margins, 2);
  Matrix d(1, 2);
  d << 0.0, 0.25;
  const DistanceView dist{{0}, d};
  const LipschitzBounds lip{Vector::Constant(2, 2.0), 2.0};
  CHECK(lower_envelope(1, 0, one, dist, lip) == 0.5);
  CHECK(lower_envelope(1, 1, one, dist, lip) == -kInf);
}

TEST_CASE("lower envelope takes the best center") {
  Vector margins(2);
  margins << 1.0, 1.0;
  const CenterSet centers = make_center_set({0, 1}, {0, 0}, margins, 3);
  Matrix d(2, 3);
  d << 0.0, 1.0, 0.25,   // contribution 1 - 2*0.25 = 0.5
       1.0, 0.0, 0.125;  // contribution 1 - 2*0.125 = 0.75
  const DistanceView dist{{0, 1}, d};
  const LipschitzBounds lip{Vector::Constant(3, 2.0), 2.0};
  CHECK(lower_envelope(2, 0, centers, dist, lip) == 0.75);
}

TEST_CASE("upper envelope basics") {
  Vector margins(1);
  margins << 0.8;
  const CenterSet one = make_center_set({0}, {1}, margins, 2);
  Matrix d(1, 2);
  d << 0.0, 0.3;
  const DistanceView dist{{0}, d};
  const LipschitzBounds lip{Vector::Ones(2), 1.0};
  CHECK(upper_envelope(1, 0, one, dist, lip) == -0.5);
  // every center carries the class: nothing bounds it from above
  CHECK(upper_envelope(1, 1, one, dist, lip) == kInf);
  // at the labeled center itself, rival classes are capped at -margin
  CHECK(upper_envelope(0, 0, one, dist, lip) == -0.8);
}

TEST_CASE("worked instance envelopes match the hand computation") {
  const WorkedInstance w = worked_instance();
  CHECK(w.env.ub(kProbe, 0) == 1.0);
  CHECK(w.env.ub(kProbe, 1) == -0.8);
  CHECK(w.env.ub(kProbe, 2) == -0.8);
  CHECK(w.env.lb(kProbe, 0) == 0.8);
  CHECK(w.env.lb(kProbe, 1) == -1.0);
  CHECK(w.env.lb(kProbe, 2) == -kInf);
}

TEST_CASE("feasible sets on the worked instance") {
  const WorkedInstance w = worked_instance();
  const FeasibleSets sets = feasible_sets(w.env, 0.0);
  CHECK(sets.gamma(kProbe, 0));
  CHECK_FALSE(sets.gamma(kProbe, 1));
  CHECK_FALSE(sets.gamma(kProbe, 2));
  // tau = 0 coincides with gamma
  CHECK((sets.gamma == sets.gamma_tau).all());

  const FeasibleSets relaxed = feasible_sets(w.env, 0.9);
  CHECK(relaxed.gamma_tau.row(kProbe).count() == 3);
  CHECK_THROWS_AS(feasible_sets(w.env, -0.1), ConsistencyError);
}

TEST_CASE("boundary ub = 0 stays feasible") {
  EnvelopeTable env{Matrix::Constant(1, 2, -kInf), Matrix::Zero(1, 2)};
  const FeasibleSets sets = feasible_sets(env, 0.0);
  CHECK(sets.gamma(0, 0));
  CHECK(sets.gamma(0, 1));
}

TEST_CASE("singleton forcing on the worked instance") {
  const WorkedInstance w = worked_instance();
  const Decision d = force_label(kProbe, w.env, 0.0, 0.0);
  CHECK(d.kind == DecisionKind::singleton);
  CHECK(d.cls == 0);
}

TEST_CASE("gap forcing once tau relaxes the eliminations") {
  const WorkedInstance w = worked_instance();
  const Decision d = force_label(kProbe, w.env, 0.9, 0.0);
  CHECK(d.kind == DecisionKind::gap);
  CHECK(d.cls == 0);
  // kappa above the certified evidence blocks the gap rule
  const Decision blocked = force_label(kProbe, w.env, 0.9, 0.85);
  CHECK(blocked.kind == DecisionKind::abstain);
}

TEST_CASE("empty center set abstains everywhere") {
  const CenterSet empty = make_center_set({}, {}, Vector(0), 3);
  Matrix d(0, 3);
  const DistanceView dist{{}, d};
  const LipschitzBounds lip{Vector::Ones(3), 1.0};
  const EnvelopeTable env = compute_envelopes(empty, dist, lip, 3);
  for (Index u = 0; u < 3; ++u) {
    CHECK(force_label(u, env, 0.0, 0.0).kind == DecisionKind::abstain);
    for (Index c = 0; c < 3; ++c) {
      CHECK(env.lb(u, c) == -kInf);
      CHECK(env.ub(u, c) == kInf);
    }
  }
}

TEST_CASE("two qualifying gap classes are rejected as inconsistent") {
  EnvelopeTable env{Matrix::Constant(1, 2, 5.0), Matrix::Zero(1, 2)};
  CHECK_THROWS_AS(force_label(0, env, 0.0, 0.0), ConsistencyError);
}

TEST_CASE("certify_pool forces the centers themselves") {
  Matrix points(2, 1);
  points << -1, 1;
  const EmbeddingPool pool = make_pool(points);
  Matrix w(2, 1);
  w << 0.5, -0.5;  // M_0(z) = z, so class 0 lives at z = +1
  const LinearHead head = make_head(w, Vector::Zero(2));
  const CenterSet centers =
      center_margin_bounds(head, pool, LabeledSet{{0, 1}, {1, 0}}).centers;
  REQUIRE(centers.size() == 2);
  const CertificationResult cert = certify_pool(pool, head, centers, 0.0, 0.0);
  REQUIRE(cert.labeling.n_points() == 2);
  CHECK(cert.labeling.decisions[0].kind == DecisionKind::singleton);
  CHECK(cert.labeling.decisions[0].cls == 1);
  CHECK(cert.labeling.decisions[1].kind == DecisionKind::singleton);
  CHECK(cert.labeling.decisions[1].cls == 0);
}

TEST_CASE("certify_pool abstains everywhere without labels") {
  Matrix points(4, 2);
  points << 0, 0, 1, 0, 0, 1, 1, 1;
  const EmbeddingPool pool = make_pool(points);
  const LinearHead head = make_head(Matrix::Zero(2, 2), Vector::Zero(2));
  const CenterSet empty = make_center_set({}, {}, Vector(0), 4);
  const CertificationResult cert = certify_pool(pool, head, empty, 0.0, 0.0);
  for (const Decision& d : cert.labeling.decisions)
    CHECK(d.kind == DecisionKind::abstain);
}

TEST_CASE("augment adds forced points with the rule-specific bound") {
  const WorkedInstance w = worked_instance();

  SelectiveLabeling singleton_forced;
  singleton_forced.decisions = {Decision{}, Decision{},
                                Decision{DecisionKind::singleton, 0}};
  const CenterSet s1 = augment_with_pseudolabels(w.centers, singleton_forced,
                                                 0.3);
  REQUIRE(s1.size() == 3);
  CHECK(s1.indices[2] == kProbe);
  CHECK(s1.labels[2] == 0);
  CHECK(s1.margin_lb[2] == 0.0);
  // originals untouched
  CHECK(s1.margin_lb[0] == 1.0);
  CHECK(s1.margin_lb[1] == 1.0);

  SelectiveLabeling gap_forced;
  gap_forced.decisions = {Decision{}, Decision{},
                          Decision{DecisionKind::gap, 0}};
  const CenterSet s2 = augment_with_pseudolabels(w.centers, gap_forced, 0.3);
  CHECK(s2.margin_lb[2] == 0.3);

  SelectiveLabeling nothing;
  nothing.decisions = {Decision{}, Decision{}, Decision{}};
  const CenterSet s3 = augment_with_pseudolabels(w.centers, nothing, 0.0);
  CHECK(s3.size() == w.centers.size());

  SelectiveLabeling conflict;
  conflict.decisions = {Decision{DecisionKind::singleton, 1}, Decision{},
                        Decision{}};
  CHECK_THROWS_AS(augment_with_pseudolabels(w.centers, conflict, 0.0),
                  ConsistencyError);
}

TEST_CASE("cert_radius") {
  CHECK(cert_radius(0.5, LipschitzBounds{Vector::Constant(2, 2.0), 2.0}) ==
        0.25);
  CHECK(cert_radius(1.0, LipschitzBounds{Vector::Ones(2), 1.0}) == 1.0);
  CHECK_THROWS_AS(cert_radius(1.0, LipschitzBounds{Vector::Zero(2), 0.0}),
                  ConsistencyError);
}

TEST_CASE("sampled members respect the envelopes and forcing") {
  const auto inst = make_instance(101);
  const ConsistentHeadSample sample = sample_consistent_heads(
      inst.head, inst.centers, inst.lipschitz, inst.pool, 120, 0.05, 7);
  REQUIRE(sample.accepted.size() >= 30);
  const VerificationReport report =
      verify_certificates(sample, inst.envelopes, inst.labeling, inst.pool);
  CHECK(report.clean());

  // elimination: no accepted head predicts a class with a negative ub
  for (const LinearHead& head : sample.accepted) {
    const Matrix scores = logits_all(head, inst.pool.vectors);
    for (Index u = 0; u < inst.pool.n_points(); ++u) {
      Index winner = 0;
      scores.row(u).maxCoeff(&winner);
      CHECK(inst.envelopes.ub(u, winner) >= 0.0);
    }
  }
}

TEST_CASE("closure: envelopes tighten and the forced set grows") {
  const auto inst = make_instance(202);
  const CenterSet augmented =
      augment_with_pseudolabels(inst.centers, inst.labeling, 0.0);
  const DistanceView dist =
      build_distance_view(inst.pool, augmented.indices);
  const EnvelopeTable after = compute_envelopes(
      augmented, dist, inst.lipschitz, inst.head.n_classes());

  Index forced_before = 0;
  for (Index u = 0; u < inst.pool.n_points(); ++u) {
    for (Index c = 0; c < inst.head.n_classes(); ++c) {
      CHECK(after.lb(u, c) >= inst.envelopes.lb(u, c));
      CHECK(after.ub(u, c) <= inst.envelopes.ub(u, c));
    }
    const Decision before_d = inst.labeling.decisions[static_cast<std::size_t>(u)];
    if (!before_d.predicted()) continue;
    ++forced_before;
    const Decision after_d = force_label(u, after, inst.labeling.tau,
                                         inst.labeling.kappa);
    CHECK(after_d.predicted());
    CHECK(after_d.cls == before_d.cls);
  }
  REQUIRE(forced_before > 0);
}

TEST_CASE("closure: members satisfy every added pseudo-constraint") {
  const auto inst = make_instance(303);
  const ConsistentHeadSample sample = sample_consistent_heads(
      inst.head, inst.centers, inst.lipschitz, inst.pool, 90, 0.05, 11);
  const CenterSet augmented =
      augment_with_pseudolabels(inst.centers, inst.labeling, 0.0);
  for (const LinearHead& head : sample.accepted) {
    for (Index i = inst.centers.size(); i < augmented.size(); ++i) {
      const Index u = augmented.indices[static_cast<std::size_t>(i)];
      const int cls = augmented.labels[static_cast<std::size_t>(i)];
      const double m =
          margin(head, inst.pool.vectors.row(u).transpose(), cls);
      CHECK(m >= augmented.margin_lb[i] - 1e-9);
    }
  }
}

TEST_CASE("radius lemma: positive evidence strictly inside rho_cert") {
  const auto inst = make_instance(404);
  REQUIRE_FALSE(inst.centers.empty());
  const double gamma = inst.centers.margin_lb.minCoeff();
  REQUIRE(gamma > 0.0);
  const double rho = cert_radius(gamma, inst.lipschitz);
  const DistanceView dist =
      build_distance_view(inst.pool, inst.centers.indices);
  for (Index i = 0; i < inst.centers.size(); ++i) {
    const int label = inst.centers.labels[static_cast<std::size_t>(i)];
    for (Index u = 0; u < inst.pool.n_points(); ++u) {
      if (dist.distances(i, u) < rho)
        CHECK(inst.envelopes.lb(u, label) > 0.0);
    }
  }
}

TEST_CASE("rival classes are eliminated at every retained center") {
  const auto inst = make_instance(505);
  for (Index i = 0; i < inst.centers.size(); ++i) {
    const Index idx = inst.centers.indices[static_cast<std::size_t>(i)];
    const int label = inst.centers.labels[static_cast<std::size_t>(i)];
    for (Index c = 0; c < inst.head.n_classes(); ++c) {
      if (static_cast<int>(c) == label) continue;
      CHECK(inst.envelopes.ub(idx, c) <= -inst.centers.margin_lb[i]);
    }
  }
}

}  // TEST_SUITE
