#ifndef CPL_HEAD_HPP_
#define CPL_HEAD_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cpl/errors.hpp"
#include "cpl/pool.hpp"
#include "cpl/types.hpp"

namespace cpl {

/// Affine classification head f(z) = Wz + b with rows w_c of W.
struct LinearHead {
  Matrix weights;  // C x m
  Vector bias;     // C

  Index n_classes() const { return weights.rows(); }
  Index dim() const { return weights.cols(); }
};

LinearHead make_head(Matrix weights, Vector bias);

/// Certified per-class Lipschitz constants of the one-vs-rest margins.
struct LipschitzBounds {
  Vector per_class;
  double l_max;
};

/// Collapses the bounds to the shared constant l_max for every class.
LipschitzBounds as_shared(const LipschitzBounds& lip);

template <class Derived>
Vector logits(const LinearHead& head, const Eigen::MatrixBase<Derived>& z) {
  if (z.rows() != head.dim() || z.cols() != 1)
    throw ConsistencyError("logits: dimension mismatch (expected " +
                           std::to_string(head.dim()) + "x1)");
  return head.weights * z + head.bias;
}

/// One-vs-rest margins for a row of logits: M_c = l_c - max_{k != c} l_k.
Vector margins_from_logits(const Vector& logit_values);

template <class Derived>
double margin(const LinearHead& head, const Eigen::MatrixBase<Derived>& z,
              int cls) {
  if (cls < 0 || cls >= head.n_classes())
    throw ConsistencyError("margin: class out of range");
  const Vector l = logits(head, z);
  return margins_from_logits(l)[cls];
}

/// Batch logits, one pool row per output row (N x C).
Matrix logits_all(const LinearHead& head, const Matrix& points);

/// Batch one-vs-rest margins (N x C).
Matrix margins_all(const LinearHead& head, const Matrix& points);

/// L_{M,c} = max_{k != c} ||w_c - w_k||_2 for an affine head.
LipschitzBounds lipschitz_bounds(const LinearHead& head);

struct LabeledSet {
  std::vector<Index> indices;
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(indices.size()); }
  bool empty() const { return indices.empty(); }
};

struct CenterBoundsResult {
  CenterSet centers;
  std::vector<Index> excluded;  // labeled points the head misclassifies
};

/// Tight center bounds: m_i = M_{y_i}(z_i). Centers with negative own-class
/// margin are excluded from the constraint set and reported; keeping them at
/// 0 would eject the trained head from the consistent class.
CenterBoundsResult center_margin_bounds(const LinearHead& head,
                                        const EmbeddingPool& pool,
                                        const LabeledSet& labeled);

struct TrainConfig {
  int steps = 300;
  double step_size = 0.5;
  double l2_penalty = 1e-4;
  std::uint64_t seed = 1;
  Index n_classes = 0;  // 0: infer as max(label)+1, at least 2
};

/// Multinomial logistic regression by full-batch gradient descent with
/// halving backtracking (max 30 halvings per step; a step that cannot
/// decrease the loss is skipped). Deterministic given the seed.
LinearHead train_head(const EmbeddingPool& pool, const LabeledSet& labeled,
                      const TrainConfig& config);

/// Nearest-class-mean head: w_c = mean of class-c embeddings,
/// b_c = -||w_c||^2 / 2, so argmax_c f_c(z) is the nearest mean under l2.
LinearHead prototype_head(const EmbeddingPool& pool, const LabeledSet& labeled);

// Training internals, exposed for the finite-difference gradient check.
double training_loss(const Matrix& weights, const Vector& bias,
                     const Matrix& points, const std::vector<int>& labels,
                     double l2_penalty);
void training_gradient(const Matrix& weights, const Vector& bias,
                       const Matrix& points, const std::vector<int>& labels,
                       double l2_penalty, Matrix& grad_weights,
                       Vector& grad_bias);

// JSON round-trip: {"classes", "dim", "weights" row-major, "bias"}, values
// preserved exactly via shortest round-trip decimals.
void save_head(const std::filesystem::path& path, const LinearHead& head);
LinearHead load_head(const std::filesystem::path& path);

}  // namespace cpl

#endif  // CPL_HEAD_HPP_
