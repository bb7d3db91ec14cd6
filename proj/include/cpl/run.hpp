#ifndef CPL_RUN_HPP_
#define CPL_RUN_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cpl/acquire.hpp"
#include "cpl/head.hpp"
#include "cpl/pool.hpp"
#include "cpl/types.hpp"

namespace cpl {

inline constexpr const char* kToolVersion = "1.0.0";

/// FNV-1a 64-bit digest of a file's bytes (manifest checksums).
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

/// Two-phase accessor for the evaluation-only label file. Before
/// `unlock_evaluation`, labels are readable only for declared queried
/// indices (the simulated oracle); afterwards the full vector is available
/// for metrics. Every read is counted.
class LabelOracle {
 public:
  explicit LabelOracle(std::vector<int> labels);

  void declare_queryable(std::span<const Index> indices);
  int query(Index u);
  void unlock_evaluation();
  const std::vector<int>& eval_labels() const;

  Index n() const { return static_cast<Index>(labels_.size()); }
  Index query_reads() const { return query_reads_; }
  bool evaluation_unlocked() const { return eval_unlocked_; }

 private:
  std::vector<int> labels_;
  std::set<Index> queryable_;
  bool eval_unlocked_ = false;
  Index query_reads_ = 0;
};

/// Gaussian class blobs with means on the scaled standard simplex
/// (pairwise mean distance = separation * sqrt(2)).
struct SyntheticSpec {
  Index n_classes = 3;
  Index per_class = 50;
  Index dim = 8;
  double separation = 10.0;
  double stddev = 0.5;
  std::uint64_t seed = 1;
};

/// Deterministic in-memory synthesis (also used by tests).
EmbeddingPool synthesize_pool(const SyntheticSpec& spec);

struct SynthResult {
  std::filesystem::path embeddings;
  std::filesystem::path labels;
  std::filesystem::path manifest;
};

SynthResult cmd_synth(const SyntheticSpec& spec,
                      const std::filesystem::path& out_dir);

enum class HeadKind { train, prototype };
enum class Strategy { greedy, kcenter, random };

struct RadiusSpec {
  enum class Mode { explicit_value, suggest, from_gamma };
  Mode mode = Mode::suggest;
  double value = 0.0;    // rho for explicit_value, gamma for from_gamma
  double quantile = 0.9;
  Index neighbor_rank = 10;
  std::filesystem::path prior_head;  // from_gamma: head JSON of a prior run
};

struct PipelineConfig {
  std::filesystem::path embeddings;
  std::filesystem::path labels;
  PoolFormat format = PoolFormat::packed_binary;
  std::filesystem::path out_dir;
  std::string budget = "6";  // count, or percent like "2%"
  Strategy strategy = Strategy::greedy;
  RadiusSpec radius;
  double tau = 0.0;
  double kappa = 0.0;
  std::uint64_t seed = 1;
  HeadKind head = HeadKind::train;
  Index n_classes = 0;  // 0: infer from queried labels
  int train_steps = 300;
  double train_step_size = 0.5;
  double train_l2 = 1e-4;
  bool normalize = false;
  bool shared_lipschitz = false;
  Index oracle_samples = 150;
  double oracle_noise = 0.05;
  int rc_grid = 33;
  bool dump_envelopes = true;
};

struct PipelineResult {
  Index n_points = 0;
  Index budget_k = 0;
  double rho_acq = 0.0;
  double cert_coverage = 0.0;
  std::optional<double> cert_risk;
  double cov_max_cert = 0.0;
  std::optional<double> gamma_min;
  std::optional<double> rho_cert;
  Index centers_retained = 0;
  Index centers_excluded = 0;
  Index heads_accepted = 0;
  Index verification_violations = 0;
  std::map<std::string, std::filesystem::path> outputs;
};

PipelineResult cmd_pipeline(const PipelineConfig& config);

struct ReplayResult {
  bool all_match = false;
  std::map<std::string, bool> per_output;
};

/// Re-executes the command recorded in a manifest into `out_dir` and
/// compares output checksums against the recorded ones.
ReplayResult cmd_replay(const std::filesystem::path& manifest_path,
                        const std::filesystem::path& out_dir);

Index resolve_budget(const std::string& budget, Index n_points);

}  // namespace cpl

#endif  // CPL_RUN_HPP_
