#ifndef CPL_POOL_HPP_
#define CPL_POOL_HPP_

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cpl/types.hpp"

namespace cpl {

/// Fixed pool of embedding vectors, one point per row. Immutable after
/// construction; eval labels, when present, are for evaluation only.
struct EmbeddingPool {
  Matrix vectors;  // N x m
  std::optional<std::vector<int>> eval_labels;

  Index n_points() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
};

/// Labeled indices with their oracle labels and certified center-margin
/// lower bounds.
struct CenterSet {
  std::vector<Index> indices;
  std::vector<int> labels;
  Vector margin_lb;

  Index size() const { return static_cast<Index>(indices.size()); }
  bool empty() const { return indices.empty(); }
};

/// The |S| x N block of l2 distances from the source rows to every pool
/// point. Never materializes N x N.
struct DistanceView {
  std::vector<Index> sources;
  Matrix distances;  // |S| x N

  Index n_sources() const { return distances.rows(); }
  Index n_targets() const { return distances.cols(); }
};

/// Validates finiteness, N >= 1, m >= 1, and label alignment.
EmbeddingPool make_pool(Matrix vectors,
                        std::optional<std::vector<int>> eval_labels =
                            std::nullopt);

/// Validates index distinctness/range and nonnegative margin bounds.
CenterSet make_center_set(std::vector<Index> indices, std::vector<int> labels,
                          Vector margin_lb, Index n_points);

enum class PoolFormat { csv, packed_binary };

// Packed binary layout (bit-exact): magic "CPL1", u32 rows, u32 cols
// little-endian, then rows*cols little-endian f64 row-major.
Matrix load_packed_matrix(const std::filesystem::path& path);
void save_packed_matrix(const std::filesystem::path& path, const Matrix& m);

/// CSV: `,` separator, `.` decimal point, no header row. With
/// `csv_label_column` the final column is read as the integer eval label.
EmbeddingPool load_embeddings(const std::filesystem::path& path,
                              PoolFormat format,
                              bool csv_label_column = false);
void save_embeddings(const std::filesystem::path& path,
                     const EmbeddingPool& pool);

/// Labels file: one integer per line, aligned with pool order.
std::vector<int> load_labels(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path,
                 std::span<const int> labels);

/// Rescales every row to unit l2 norm.
EmbeddingPool normalize_rows(const EmbeddingPool& pool);

DistanceView build_distance_view(const EmbeddingPool& pool,
                                 std::span<const Index> centers);

inline DistanceView build_distance_view(const EmbeddingPool& pool,
                                        const std::vector<Index>& centers) {
  return build_distance_view(pool, std::span<const Index>(centers));
}

}  // namespace cpl

#endif  // CPL_POOL_HPP_
