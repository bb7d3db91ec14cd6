// cpl: certified force-or-abstain labeling for fixed embedding pools.
//
// Subcommands:
//   synth     write a synthetic Gaussian-blob pool (embeddings + labels)
//   pipeline  acquire -> query -> train -> certify -> evaluate -> verify
//   replay    re-run a manifest and compare output checksums
//
// Exit codes: 0 ok, 2 format error, 3 constraint/consistency error,
// 4 guard exceeded.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cpl/errors.hpp"
#include "cpl/run.hpp"

namespace {

int dispatch(int argc, char** argv) {
  CLI::App app{"certified selective labeling on fixed embedding pools"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cpl ") + cpl::kToolVersion);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic pool");
  cpl::SyntheticSpec spec;
  std::string synth_out = "synth_out";
  synth->add_option("--classes", spec.n_classes, "number of classes");
  synth->add_option("--per-class", spec.per_class, "points per class");
  synth->add_option("--dim", spec.dim, "embedding dimension");
  synth->add_option("--separation", spec.separation, "simplex scale");
  synth->add_option("--stddev", spec.stddev, "per-class isotropic stddev");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "end-to-end certified run");
  cpl::PipelineConfig config;
  std::string format = "bin";
  std::string strategy = "greedy";
  std::string head_kind = "train";
  double radius_value = 0.0;
  double radius_gamma = 0.0;
  std::string out_dir = "run_out";
  pipe->add_option("--embeddings", config.embeddings, "embedding file")
      ->required();
  pipe->add_option("--labels", config.labels, "oracle label file")->required();
  pipe->add_option("--format", format, "embedding format: bin|csv")
      ->check(CLI::IsMember({"bin", "csv"}));
  pipe->add_option("--out", out_dir, "output directory");
  pipe->add_option("--budget", config.budget,
                   "label budget: count or percent like 2%");
  pipe->add_option("--strategy", strategy, "greedy|kcenter|random")
      ->check(CLI::IsMember({"greedy", "kcenter", "random"}));
  auto* radius_opt =
      pipe->add_option("--radius", radius_value, "greedy ball radius");
  auto* gamma_opt = pipe->add_option(
      "--radius-from-gamma", radius_gamma,
      "derive the greedy radius as gamma / L_max of a prior head");
  pipe->add_option("--head-from", config.radius.prior_head,
                   "prior head JSON for --radius-from-gamma");
  pipe->add_option("--radius-quantile", config.radius.quantile,
                   "neighbor-distance quantile for the suggested radius");
  pipe->add_option("--radius-rank", config.radius.neighbor_rank,
                   "neighbor rank for the suggested radius");
  pipe->add_option("--tau", config.tau, "upper-envelope relaxation");
  pipe->add_option("--kappa", config.kappa, "gap-forcing evidence floor");
  pipe->add_option("--seed", config.seed, "run seed");
  pipe->add_option("--head", head_kind, "train|prototype")
      ->check(CLI::IsMember({"train", "prototype"}));
  pipe->add_option("--classes", config.n_classes,
                   "class count (0: infer from queried labels)");
  pipe->add_option("--steps", config.train_steps, "training steps");
  pipe->add_option("--step-size", config.train_step_size, "training step size");
  pipe->add_option("--l2", config.train_l2, "training l2 penalty");
  pipe->add_flag("--normalize", config.normalize, "l2-normalize pool rows");
  pipe->add_flag("--shared-lipschitz", config.shared_lipschitz,
                 "use the shared constant L_max for every class");
  pipe->add_option("--samples", config.oracle_samples,
                   "verification candidate heads");
  pipe->add_option("--noise", config.oracle_noise,
                   "verification perturbation scale");
  pipe->add_option("--rc-grid", config.rc_grid, "RC sweep grid size");
  pipe->add_flag("!--no-envelopes", config.dump_envelopes,
                 "skip envelope sidecar dumps");

  // replay
  auto* replay = app.add_subcommand("replay", "re-run a recorded manifest");
  std::string manifest_path;
  std::string replay_out = "replay_out";
  replay->add_option("manifest", manifest_path, "manifest JSON")->required();
  replay->add_option("--out", replay_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    const auto result = cpl::cmd_synth(spec, synth_out);
    std::cout << "wrote " << result.embeddings.string() << ", "
              << result.labels.string() << ", " << result.manifest.string()
              << "\n";
    return 0;
  }

  if (pipe->parsed()) {
    config.format =
        format == "csv" ? cpl::PoolFormat::csv : cpl::PoolFormat::packed_binary;
    config.strategy = strategy == "kcenter"  ? cpl::Strategy::kcenter
                      : strategy == "random" ? cpl::Strategy::random
                                             : cpl::Strategy::greedy;
    config.head = head_kind == "prototype" ? cpl::HeadKind::prototype
                                           : cpl::HeadKind::train;
    if (radius_opt->count() > 0 && gamma_opt->count() > 0)
      throw cpl::ConsistencyError(
          "--radius and --radius-from-gamma are mutually exclusive");
    if (radius_opt->count() > 0) {
      config.radius.mode = cpl::RadiusSpec::Mode::explicit_value;
      config.radius.value = radius_value;
    } else if (gamma_opt->count() > 0) {
      config.radius.mode = cpl::RadiusSpec::Mode::from_gamma;
      config.radius.value = radius_gamma;
    }
    config.out_dir = out_dir;
    const auto result = cpl::cmd_pipeline(config);
    std::cout << "k=" << result.budget_k
              << " coverage=" << result.cert_coverage << " risk="
              << (result.cert_risk ? std::to_string(*result.cert_risk)
                                   : std::string("undefined"))
              << " cov_max_cert=" << result.cov_max_cert
              << " heads_accepted=" << result.heads_accepted
              << " violations=" << result.verification_violations << "\n";
    return result.verification_violations == 0 ? 0 : 3;
  }

  if (replay->parsed()) {
    const auto result = cpl::cmd_replay(manifest_path, replay_out);
    for (const auto& [name, match] : result.per_output)
      std::cout << name << ": " << (match ? "match" : "MISMATCH") << "\n";
    if (!result.all_match) {
      std::cerr << "error[consistency]: replay outputs diverge\n";
      return 3;
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const cpl::FormatError& e) {
    std::cerr << "error[format]: " << e.what() << "\n";
    return 2;
  } catch (const cpl::GuardError& e) {
    std::cerr << "error[guard]: " << e.what() << "\n";
    return 4;
  } catch (const cpl::ConsistencyError& e) {
    std::cerr << "error[consistency]: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
}
