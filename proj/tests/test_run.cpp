#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpl/errors.hpp"
#include "cpl/evaluate.hpp"
#include "cpl/run.hpp"

using namespace cpl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cpl_run_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthResult synth_into(const std::string& name, std::uint64_t seed = 5,
                       double stddev = 0.5) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.stddev = stddev;
  return cmd_synth(spec, fresh_dir(name));
}

PipelineConfig base_config(const SynthResult& data, const fs::path& out) {
  PipelineConfig config;
  config.embeddings = data.embeddings;
  config.labels = data.labels;
  config.out_dir = out;
  config.budget = "6";
  config.seed = 3;
  config.oracle_samples = 60;
  return config;
}

}  // namespace

TEST_SUITE("run") {

TEST_CASE("synth is deterministic per seed") {
  const SynthResult a = synth_into("synth_a", 11);
  const SynthResult b = synth_into("synth_b", 11);
  const SynthResult c = synth_into("synth_c", 12);
  CHECK(fnv1a64_file(a.embeddings) == fnv1a64_file(b.embeddings));
  CHECK(fnv1a64_file(a.labels) == fnv1a64_file(b.labels));
  CHECK(fnv1a64_file(a.embeddings) != fnv1a64_file(c.embeddings));
}

TEST_CASE("synth with zero stddev puts every point on its class mean") {
  SyntheticSpec spec;
  spec.stddev = 0.0;
  spec.per_class = 4;
  const EmbeddingPool pool = synthesize_pool(spec);
  REQUIRE(pool.eval_labels.has_value());
  for (Index u = 0; u < pool.n_points(); ++u) {
    const int label = (*pool.eval_labels)[static_cast<std::size_t>(u)];
    for (Index d = 0; d < pool.dim(); ++d) {
      const double expected = (d == label) ? spec.separation : 0.0;
      CHECK(pool.vectors(u, d) == expected);
    }
  }
  // simplex means: pairwise distance separation * sqrt(2)
  const double dist = (pool.vectors.row(0) - pool.vectors.row(4)).norm();
  CHECK(dist == doctest::Approx(spec.separation * std::sqrt(2.0))
                    .epsilon(1e-12));
}

TEST_CASE("budget parsing") {
  CHECK(resolve_budget("6", 150) == 6);
  CHECK(resolve_budget("2%", 150) == 3);
  CHECK(resolve_budget("0.5%", 1000) == 5);
  CHECK(resolve_budget("0", 10) == 0);
  CHECK_THROWS_AS(resolve_budget("abc", 10), FormatError);
  CHECK_THROWS_AS(resolve_budget("7.5", 10), FormatError);
  CHECK_THROWS_AS(resolve_budget("11", 10), ConsistencyError);
}

TEST_CASE("label oracle enforces the two-phase discipline") {
  LabelOracle oracle(std::vector<int>{0, 1, 2, 0});
  CHECK_THROWS_AS(oracle.query(1), ConsistencyError);
  const std::vector<Index> queried = {1, 3};
  oracle.declare_queryable(queried);
  CHECK(oracle.query(1) == 1);
  CHECK(oracle.query(3) == 0);
  CHECK_THROWS_AS(oracle.query(2), ConsistencyError);
  CHECK_THROWS_AS(oracle.eval_labels(), ConsistencyError);
  oracle.unlock_evaluation();
  CHECK(oracle.eval_labels().size() == 4);
  CHECK_THROWS_AS(oracle.query(1), ConsistencyError);
  CHECK(oracle.query_reads() == 2);
}

TEST_CASE("pipeline end-to-end on a separable pool") {
  const SynthResult data = synth_into("pipe_data");
  const PipelineResult result =
      cmd_pipeline(base_config(data, fresh_dir("pipe_run")));
  CHECK(result.n_points == 150);
  CHECK(result.budget_k == 6);
  CHECK(result.cert_coverage > 0.5);
  REQUIRE(result.cert_risk.has_value());
  CHECK(*result.cert_risk == 0.0);
  CHECK(result.verification_violations == 0);
  CHECK(result.heads_accepted > 0);
  for (const auto& [name, path] : result.outputs) CHECK(fs::exists(path));
}

TEST_CASE("pipeline with zero budget abstains everywhere") {
  const SynthResult data = synth_into("zero_data");
  PipelineConfig config = base_config(data, fresh_dir("zero_run"));
  config.budget = "0";
  config.n_classes = 3;
  const PipelineResult result = cmd_pipeline(config);
  CHECK(result.budget_k == 0);
  CHECK(result.cert_coverage == 0.0);
  CHECK_FALSE(result.cert_risk.has_value());
  CHECK(result.cov_max_cert == 0.0);
}

TEST_CASE("pipeline strategies are all runnable and recorded") {
  const SynthResult data = synth_into("strat_data");
  for (Strategy strategy :
       {Strategy::greedy, Strategy::kcenter, Strategy::random}) {
    PipelineConfig config = base_config(
        data, fresh_dir(std::string("strat_") +
                        (strategy == Strategy::greedy    ? "greedy"
                         : strategy == Strategy::kcenter ? "kcenter"
                                                         : "random")));
    config.strategy = strategy;
    const PipelineResult result = cmd_pipeline(config);
    CHECK(fs::exists(result.outputs.at("manifest.json")));

    std::ifstream in(config.out_dir / "summary.json");
    nlohmann::json summary;
    in >> summary;
    CHECK(summary.at("label_reads").at("queried").get<Index>() ==
          result.budget_k);
  }
}

TEST_CASE("explicit and suggested radius modes agree when aligned") {
  const SynthResult data = synth_into("radius_data");
  PipelineConfig config = base_config(data, fresh_dir("radius_run"));
  config.radius.mode = RadiusSpec::Mode::explicit_value;
  config.radius.value = 2.5;
  const PipelineResult result = cmd_pipeline(config);
  CHECK(result.rho_acq == 2.5);
}

TEST_CASE("radius from gamma needs a prior head and then derives rho") {
  const SynthResult data = synth_into("gamma_data");
  PipelineConfig first = base_config(data, fresh_dir("gamma_run1"));
  const PipelineResult bootstrap = cmd_pipeline(first);

  PipelineConfig second = base_config(data, fresh_dir("gamma_run2"));
  second.radius.mode = RadiusSpec::Mode::from_gamma;
  second.radius.value = 2.0;
  CHECK_THROWS_AS(cmd_pipeline(second), ConsistencyError);

  second.radius.prior_head = bootstrap.outputs.at("head.json");
  const PipelineResult result = cmd_pipeline(second);
  const LinearHead prior = load_head(second.radius.prior_head);
  CHECK(result.rho_acq ==
        cert_radius(2.0, lipschitz_bounds(prior)));
}

TEST_CASE("pipeline errors carry the failing stage") {
  PipelineConfig config;
  config.embeddings = "does_not_exist.cpl";
  config.labels = "missing.txt";
  config.out_dir = fresh_dir("err_run");
  CHECK_THROWS_WITH_AS(cmd_pipeline(config), doctest::Contains("load:"),
                       FormatError);
}

TEST_CASE("manifest replay reproduces synth and pipeline checksums") {
  const SynthResult data = synth_into("replay_data", 21);
  const ReplayResult synth_replay =
      cmd_replay(data.manifest, fresh_dir("replay_synth"));
  CHECK(synth_replay.all_match);

  PipelineConfig config = base_config(data, fresh_dir("replay_pipe"));
  cmd_pipeline(config);
  const ReplayResult pipe_replay = cmd_replay(
      config.out_dir / "manifest.json", fresh_dir("replay_pipe2"));
  CHECK(pipe_replay.all_match);
  CHECK(pipe_replay.per_output.size() >= 6);
  for (const auto& [name, match] : pipe_replay.per_output) {
    INFO(name);
    CHECK(match);
  }
}

#ifdef CPL_CLI_PATH
TEST_CASE("cli exit codes are machine-parsable") {
  const fs::path dir = fresh_dir("cli_codes");
  const std::string bin = CPL_CLI_PATH;
  const std::string quiet = " > /dev/null 2>&1";

  int status = std::system(
      (bin + " pipeline --embeddings nope.cpl --labels nope.txt --out " +
       (dir / "a").string() + quiet)
          .c_str());
  CHECK(WEXITSTATUS(status) == 2);

  const SynthResult data = synth_into("cli_data");
  status = std::system(
      (bin + " pipeline --embeddings " + data.embeddings.string() +
       " --labels " + data.labels.string() + " --out " + (dir / "b").string() +
       " --budget 9999" + quiet)
          .c_str());
  CHECK(WEXITSTATUS(status) == 3);

  status = std::system((bin + " synth --classes 3 --per-class 4 --dim 8 --out " +
                        (dir / "c").string() + quiet)
                           .c_str());
  CHECK(WEXITSTATUS(status) == 0);
}
#endif

}  // TEST_SUITE
