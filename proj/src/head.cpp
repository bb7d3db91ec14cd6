#include "cpl/head.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cpl/rng.hpp"

namespace cpl {
namespace {

void check_labeled(const EmbeddingPool& pool, const LabeledSet& labeled) {
  if (labeled.indices.size() != labeled.labels.size())
    throw ConsistencyError("labeled set fields misaligned");
  for (Index idx : labeled.indices)
    if (idx < 0 || idx >= pool.n_points())
      throw ConsistencyError("labeled index " + std::to_string(idx) +
                             " out of range");
  for (int label : labeled.labels)
    if (label < 0) throw ConsistencyError("negative label");
}

Index infer_classes(const std::vector<int>& labels, Index requested) {
  if (requested != 0) {
    if (requested < 2) throw ConsistencyError("n_classes must be >= 2");
    for (int label : labels)
      if (label >= requested)
        throw ConsistencyError("label " + std::to_string(label) +
                               " >= n_classes");
    return requested;
  }
  int max_label = 0;
  for (int label : labels) max_label = std::max(max_label, label);
  return std::max<Index>(2, max_label + 1);
}

/// Row-wise softmax in the stable form exp(l - max) / sum.
Matrix softmax_rows(const Matrix& scores) {
  Matrix p(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    const double row_max = scores.row(i).maxCoeff();
    p.row(i) = (scores.row(i).array() - row_max).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

LinearHead make_head(Matrix weights, Vector bias) {
  if (weights.rows() < 2)
    throw ConsistencyError("head needs at least 2 classes");
  if (bias.size() != weights.rows())
    throw ConsistencyError("bias length != class count");
  if (!weights.allFinite() || !bias.allFinite())
    throw ConsistencyError("non-finite head parameter");
  return LinearHead{std::move(weights), std::move(bias)};
}

LipschitzBounds as_shared(const LipschitzBounds& lip) {
  return LipschitzBounds{Vector::Constant(lip.per_class.size(), lip.l_max),
                         lip.l_max};
}

Vector margins_from_logits(const Vector& logit_values) {
  const Index c_count = logit_values.size();
  Index top1 = 0;
  logit_values.maxCoeff(&top1);
  double second = -kInf;
  for (Index k = 0; k < c_count; ++k)
    if (k != top1) second = std::max(second, logit_values[k]);
  Vector m(c_count);
  for (Index c = 0; c < c_count; ++c)
    m[c] = (c == top1) ? logit_values[c] - second
                       : logit_values[c] - logit_values[top1];
  return m;
}

Matrix logits_all(const LinearHead& head, const Matrix& points) {
  if (points.cols() != head.dim())
    throw ConsistencyError("logits_all: dimension mismatch");
  return (points * head.weights.transpose()).rowwise() +
         head.bias.transpose();
}

Matrix margins_all(const LinearHead& head, const Matrix& points) {
  const Matrix scores = logits_all(head, points);
  Matrix m(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i)
    m.row(i) = margins_from_logits(scores.row(i).transpose()).transpose();
  return m;
}

LipschitzBounds lipschitz_bounds(const LinearHead& head) {
  const Index c_count = head.n_classes();
  Vector per_class = Vector::Zero(c_count);
  for (Index c = 0; c < c_count; ++c) {
    double worst = 0.0;
    for (Index k = 0; k < c_count; ++k) {
      if (k == c) continue;
      worst = std::max(worst,
                       (head.weights.row(c) - head.weights.row(k)).norm());
    }
    per_class[c] = worst;
  }
  return LipschitzBounds{per_class, per_class.maxCoeff()};
}

CenterBoundsResult center_margin_bounds(const LinearHead& head,
                                        const EmbeddingPool& pool,
                                        const LabeledSet& labeled) {
  check_labeled(pool, labeled);
  std::vector<Index> kept_indices;
  std::vector<int> kept_labels;
  std::vector<double> kept_margins;
  std::vector<Index> excluded;
  for (std::size_t i = 0; i < labeled.indices.size(); ++i) {
    const Index idx = labeled.indices[i];
    const int label = labeled.labels[i];
    if (label >= head.n_classes())
      throw ConsistencyError("label " + std::to_string(label) +
                             " out of head range");
    const double own =
        margin(head, pool.vectors.row(idx).transpose(), label);
    if (own < 0.0) {
      excluded.push_back(idx);
      continue;
    }
    kept_indices.push_back(idx);
    kept_labels.push_back(label);
    kept_margins.push_back(own);
  }
  Vector margin_lb(static_cast<Index>(kept_margins.size()));
  for (std::size_t i = 0; i < kept_margins.size(); ++i)
    margin_lb[static_cast<Index>(i)] = kept_margins[i];
  return CenterBoundsResult{
      make_center_set(std::move(kept_indices), std::move(kept_labels),
                      std::move(margin_lb), pool.n_points()),
      std::move(excluded)};
}

double training_loss(const Matrix& weights, const Vector& bias,
                     const Matrix& points, const std::vector<int>& labels,
                     double l2_penalty) {
  const Index n = points.rows();
  const Matrix scores =
      (points * weights.transpose()).rowwise() + bias.transpose();
  double nll = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double row_max = scores.row(i).maxCoeff();
    const double log_sum =
        row_max +
        std::log((scores.row(i).array() - row_max).exp().sum());
    nll += log_sum - scores(i, labels[static_cast<std::size_t>(i)]);
  }
  return nll / static_cast<double>(n) +
         0.5 * l2_penalty * weights.squaredNorm();
}

void training_gradient(const Matrix& weights, const Vector& bias,
                       const Matrix& points, const std::vector<int>& labels,
                       double l2_penalty, Matrix& grad_weights,
                       Vector& grad_bias) {
  const Index n = points.rows();
  const Matrix scores =
      (points * weights.transpose()).rowwise() + bias.transpose();
  Matrix residual = softmax_rows(scores);  // n x C
  for (Index i = 0; i < n; ++i)
    residual(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  residual /= static_cast<double>(n);
  grad_weights = residual.transpose() * points + l2_penalty * weights;
  grad_bias = residual.colwise().sum().transpose();
}

LinearHead train_head(const EmbeddingPool& pool, const LabeledSet& labeled,
                      const TrainConfig& config) {
  check_labeled(pool, labeled);
  if (labeled.empty()) throw ConsistencyError("no labeled points to train on");
  if (config.steps < 1) throw ConsistencyError("steps must be >= 1");
  const Index c_count = infer_classes(labeled.labels, config.n_classes);
  const Index m = pool.dim();
  const Index n = labeled.size();

  Matrix points(n, m);
  for (Index i = 0; i < n; ++i)
    points.row(i) = pool.vectors.row(labeled.indices[static_cast<std::size_t>(i)]);
  const std::vector<int>& labels = labeled.labels;

  Rng rng(config.seed);
  Matrix weights(c_count, m);
  for (Index c = 0; c < c_count; ++c)
    for (Index j = 0; j < m; ++j) weights(c, j) = 0.01 * rng.normal();
  Vector bias = Vector::Zero(c_count);

  Matrix grad_weights(c_count, m);
  Vector grad_bias(c_count);
  double loss = training_loss(weights, bias, points, labels,
                              config.l2_penalty);
  for (int step = 0; step < config.steps; ++step) {
    training_gradient(weights, bias, points, labels, config.l2_penalty,
                      grad_weights, grad_bias);
    double eta = config.step_size;
    bool accepted = false;
    for (int halving = 0; halving <= 30; ++halving) {
      const Matrix cand_weights = weights - eta * grad_weights;
      const Vector cand_bias = bias - eta * grad_bias;
      const double cand_loss = training_loss(cand_weights, cand_bias, points,
                                             labels, config.l2_penalty);
      if (cand_loss <= loss) {
        weights = cand_weights;
        bias = cand_bias;
        loss = cand_loss;
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) break;  // no descent step left; at a numerical optimum
  }
  return make_head(std::move(weights), std::move(bias));
}

LinearHead prototype_head(const EmbeddingPool& pool,
                          const LabeledSet& labeled) {
  check_labeled(pool, labeled);
  if (labeled.empty())
    throw ConsistencyError("no labeled points for prototype head");
  int max_label = 0;
  for (int label : labeled.labels) max_label = std::max(max_label, label);
  const Index c_count = max_label + 1;
  if (c_count < 2)
    throw ConsistencyError("prototype head needs at least 2 classes");
  Matrix weights = Matrix::Zero(c_count, pool.dim());
  std::vector<int> counts(static_cast<std::size_t>(c_count), 0);
  for (std::size_t i = 0; i < labeled.indices.size(); ++i) {
    weights.row(labeled.labels[i]) += pool.vectors.row(labeled.indices[i]);
    ++counts[static_cast<std::size_t>(labeled.labels[i])];
  }
  for (Index c = 0; c < c_count; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ConsistencyError("class " + std::to_string(c) +
                             " has no labeled centers");
    weights.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  Vector bias(c_count);
  for (Index c = 0; c < c_count; ++c)
    bias[c] = -0.5 * weights.row(c).squaredNorm();
  return make_head(std::move(weights), std::move(bias));
}

void save_head(const std::filesystem::path& path, const LinearHead& head) {
  nlohmann::json j;
  j["schema"] = "cpl-head/1";
  j["classes"] = head.n_classes();
  j["dim"] = head.dim();
  std::vector<double> weights;
  weights.reserve(static_cast<std::size_t>(head.weights.size()));
  for (Index c = 0; c < head.weights.rows(); ++c)
    for (Index k = 0; k < head.weights.cols(); ++k)
      weights.push_back(head.weights(c, k));
  j["weights"] = weights;
  j["bias"] = std::vector<double>(head.bias.data(),
                                  head.bias.data() + head.bias.size());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

LinearHead load_head(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad head JSON: " + std::string(e.what()));
  }
  const Index c_count = j.at("classes").get<Index>();
  const Index m = j.at("dim").get<Index>();
  const auto weights_flat = j.at("weights").get<std::vector<double>>();
  const auto bias_flat = j.at("bias").get<std::vector<double>>();
  if (static_cast<Index>(weights_flat.size()) != c_count * m ||
      static_cast<Index>(bias_flat.size()) != c_count)
    throw FormatError("head JSON dimensions inconsistent");
  Matrix weights(c_count, m);
  for (Index c = 0; c < c_count; ++c)
    for (Index k = 0; k < m; ++k)
      weights(c, k) = weights_flat[static_cast<std::size_t>(c * m + k)];
  Vector bias(c_count);
  for (Index c = 0; c < c_count; ++c)
    bias[c] = bias_flat[static_cast<std::size_t>(c)];
  return make_head(std::move(weights), std::move(bias));
}

}  // namespace cpl
