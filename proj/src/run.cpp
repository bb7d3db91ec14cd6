#include "cpl/run.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "cpl/certify.hpp"
#include "cpl/errors.hpp"
#include "cpl/evaluate.hpp"
#include "cpl/oracle.hpp"
#include "cpl/rng.hpp"

namespace cpl {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const FormatError& e) {
    throw FormatError(stage + ": " + e.what());
  } catch (const GuardError& e) {
    throw GuardError(stage + ": " + e.what());
  } catch (const ConsistencyError& e) {
    throw ConsistencyError(stage + ": " + e.what());
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string checksum_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(digest));
  return buf;
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::kcenter: return "kcenter";
    case Strategy::random: return "random";
  }
  return "greedy";
}

Strategy strategy_from(const std::string& name) {
  if (name == "greedy") return Strategy::greedy;
  if (name == "kcenter") return Strategy::kcenter;
  if (name == "random") return Strategy::random;
  throw FormatError("unknown strategy '" + name + "'");
}

const char* radius_mode_name(RadiusSpec::Mode mode) {
  switch (mode) {
    case RadiusSpec::Mode::explicit_value: return "explicit";
    case RadiusSpec::Mode::suggest: return "suggest";
    case RadiusSpec::Mode::from_gamma: return "from_gamma";
  }
  return "suggest";
}

RadiusSpec::Mode radius_mode_from(const std::string& name) {
  if (name == "explicit") return RadiusSpec::Mode::explicit_value;
  if (name == "suggest") return RadiusSpec::Mode::suggest;
  if (name == "from_gamma") return RadiusSpec::Mode::from_gamma;
  throw FormatError("unknown radius mode '" + name + "'");
}

json synth_params(const SyntheticSpec& spec) {
  return json{{"n_classes", spec.n_classes}, {"per_class", spec.per_class},
              {"dim", spec.dim},             {"separation", spec.separation},
              {"stddev", spec.stddev},       {"seed", spec.seed}};
}

SyntheticSpec synth_from_params(const json& p) {
  SyntheticSpec spec;
  spec.n_classes = p.at("n_classes").get<Index>();
  spec.per_class = p.at("per_class").get<Index>();
  spec.dim = p.at("dim").get<Index>();
  spec.separation = p.at("separation").get<double>();
  spec.stddev = p.at("stddev").get<double>();
  spec.seed = p.at("seed").get<std::uint64_t>();
  return spec;
}

json pipeline_params(const PipelineConfig& c) {
  return json{{"embeddings", c.embeddings.string()},
              {"labels", c.labels.string()},
              {"format", c.format == PoolFormat::csv ? "csv" : "bin"},
              {"budget", c.budget},
              {"strategy", strategy_name(c.strategy)},
              {"radius",
               {{"mode", radius_mode_name(c.radius.mode)},
                {"value", c.radius.value},
                {"quantile", c.radius.quantile},
                {"neighbor_rank", c.radius.neighbor_rank},
                {"prior_head", c.radius.prior_head.string()}}},
              {"tau", c.tau},
              {"kappa", c.kappa},
              {"seed", c.seed},
              {"head", c.head == HeadKind::train ? "train" : "prototype"},
              {"n_classes", c.n_classes},
              {"train_steps", c.train_steps},
              {"train_step_size", c.train_step_size},
              {"train_l2", c.train_l2},
              {"normalize", c.normalize},
              {"shared_lipschitz", c.shared_lipschitz},
              {"oracle_samples", c.oracle_samples},
              {"oracle_noise", c.oracle_noise},
              {"rc_grid", c.rc_grid},
              {"dump_envelopes", c.dump_envelopes}};
}

PipelineConfig pipeline_from_params(const json& p) {
  PipelineConfig c;
  c.embeddings = p.at("embeddings").get<std::string>();
  c.labels = p.at("labels").get<std::string>();
  c.format = p.at("format").get<std::string>() == "csv"
                 ? PoolFormat::csv
                 : PoolFormat::packed_binary;
  c.budget = p.at("budget").get<std::string>();
  c.strategy = strategy_from(p.at("strategy").get<std::string>());
  const json& r = p.at("radius");
  c.radius.mode = radius_mode_from(r.at("mode").get<std::string>());
  c.radius.value = r.at("value").get<double>();
  c.radius.quantile = r.at("quantile").get<double>();
  c.radius.neighbor_rank = r.at("neighbor_rank").get<Index>();
  c.radius.prior_head = r.at("prior_head").get<std::string>();
  c.tau = p.at("tau").get<double>();
  c.kappa = p.at("kappa").get<double>();
  c.seed = p.at("seed").get<std::uint64_t>();
  c.head = p.at("head").get<std::string>() == "prototype" ? HeadKind::prototype
                                                          : HeadKind::train;
  c.n_classes = p.at("n_classes").get<Index>();
  c.train_steps = p.at("train_steps").get<int>();
  c.train_step_size = p.at("train_step_size").get<double>();
  c.train_l2 = p.at("train_l2").get<double>();
  c.normalize = p.at("normalize").get<bool>();
  c.shared_lipschitz = p.at("shared_lipschitz").get<bool>();
  c.oracle_samples = p.at("oracle_samples").get<Index>();
  c.oracle_noise = p.at("oracle_noise").get<double>();
  c.rc_grid = p.at("rc_grid").get<int>();
  c.dump_envelopes = p.at("dump_envelopes").get<bool>();
  return c;
}

void write_manifest(const fs::path& path, const std::string& command,
                    const json& parameters,
                    const std::map<std::string, fs::path>& inputs,
                    const std::map<std::string, fs::path>& outputs) {
  json j;
  j["schema"] = "cpl-manifest/1";
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  j["parameters"] = parameters;
  json in = json::object();
  for (const auto& [name, p] : inputs)
    in[name] = {{"path", p.string()},
                {"fnv1a64", checksum_hex(fnv1a64_file(p))}};
  j["inputs"] = in;
  json out = json::object();
  for (const auto& [name, p] : outputs)
    out[name] = checksum_hex(fnv1a64_file(p));
  j["outputs"] = out;
  j["created_utc"] = utc_timestamp();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json optional_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

std::optional<double> try_truncated_aurc(const RCCurve& curve,
                                         double cov_max) {
  if (!(cov_max > 0.0)) return std::nullopt;
  try {
    return truncated_aurc(curve, cov_max);
  } catch (const ConsistencyError&) {
    return std::nullopt;
  }
}

json curve_summary(const RCCurve& curve, double cov_max_cert) {
  json j;
  j["cov_max"] = curve.cov_max;
  try {
    j["aurc"] = aurc(curve);
    j["aurc_integral"] = aurc_integral(curve);
  } catch (const ConsistencyError&) {
    j["aurc"] = nullptr;
    j["aurc_integral"] = nullptr;
  }
  j["truncated_aurc"] = optional_json(try_truncated_aurc(curve, cov_max_cert));
  return j;
}

}  // namespace

std::uint64_t fnv1a64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  return hash;
}

LabelOracle::LabelOracle(std::vector<int> labels)
    : labels_(std::move(labels)) {}

void LabelOracle::declare_queryable(std::span<const Index> indices) {
  for (Index u : indices) {
    if (u < 0 || u >= n())
      throw ConsistencyError("queryable index out of range");
    queryable_.insert(u);
  }
}

int LabelOracle::query(Index u) {
  if (eval_unlocked_)
    throw ConsistencyError("oracle queries are closed after evaluation");
  if (!queryable_.contains(u))
    throw ConsistencyError("label read for unqueried index " +
                           std::to_string(u));
  ++query_reads_;
  return labels_[static_cast<std::size_t>(u)];
}

void LabelOracle::unlock_evaluation() { eval_unlocked_ = true; }

const std::vector<int>& LabelOracle::eval_labels() const {
  if (!eval_unlocked_)
    throw ConsistencyError("eval labels unavailable before evaluation phase");
  return labels_;
}

EmbeddingPool synthesize_pool(const SyntheticSpec& spec) {
  if (spec.n_classes < 2) throw ConsistencyError("need at least 2 classes");
  if (spec.per_class < 1) throw ConsistencyError("need points per class");
  if (spec.dim < spec.n_classes)
    throw ConsistencyError("dim must be >= n_classes for the simplex means");
  if (!(spec.separation > 0.0)) throw ConsistencyError("separation must be > 0");
  if (!(spec.stddev >= 0.0)) throw ConsistencyError("stddev must be >= 0");

  const Index n = spec.n_classes * spec.per_class;
  Matrix vectors(n, spec.dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  Rng rng(spec.seed);
  Index row = 0;
  for (Index c = 0; c < spec.n_classes; ++c) {
    for (Index p = 0; p < spec.per_class; ++p, ++row) {
      for (Index d = 0; d < spec.dim; ++d) {
        const double mean = (d == c) ? spec.separation : 0.0;
        vectors(row, d) = mean + spec.stddev * rng.normal();
      }
      labels[static_cast<std::size_t>(row)] = static_cast<int>(c);
    }
  }
  return make_pool(std::move(vectors), std::move(labels));
}

SynthResult cmd_synth(const SyntheticSpec& spec, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const EmbeddingPool pool =
      run_stage("synth", [&] { return synthesize_pool(spec); });

  SynthResult result;
  result.embeddings = out_dir / "embeddings.cpl";
  result.labels = out_dir / "labels.txt";
  result.manifest = out_dir / "manifest.json";
  run_stage("write", [&] {
    save_embeddings(result.embeddings, pool);
    save_labels(result.labels, *pool.eval_labels);
    return 0;
  });
  write_manifest(result.manifest, "synth", synth_params(spec), {},
                 {{"embeddings.cpl", result.embeddings},
                  {"labels.txt", result.labels}});
  return result;
}

Index resolve_budget(const std::string& budget, Index n_points) {
  if (budget.empty()) throw FormatError("empty budget");
  std::string text = budget;
  bool percent = false;
  if (text.back() == '%') {
    percent = true;
    text.pop_back();
  }
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw FormatError("unparsable budget '" + budget + "'");
  }
  if (used != text.size() || value < 0.0)
    throw FormatError("unparsable budget '" + budget + "'");
  Index k = 0;
  if (percent) {
    k = static_cast<Index>(
        std::ceil(value / 100.0 * static_cast<double>(n_points)));
  } else {
    k = static_cast<Index>(value);
    if (static_cast<double>(k) != value)
      throw FormatError("budget count must be an integer");
  }
  if (k > n_points)
    throw ConsistencyError("budget exceeds pool size");
  return k;
}

PipelineResult cmd_pipeline(const PipelineConfig& config) {
  fs::create_directories(config.out_dir);
  PipelineResult result;

  // ingest
  EmbeddingPool pool = run_stage("load", [&] {
    EmbeddingPool p = load_embeddings(config.embeddings, config.format);
    if (config.normalize) p = normalize_rows(p);
    return p;
  });
  LabelOracle oracle(run_stage("load", [&] {
    auto labels = load_labels(config.labels);
    if (static_cast<Index>(labels.size()) != pool.n_points())
      throw ConsistencyError("labels file does not match pool size");
    return labels;
  }));
  result.n_points = pool.n_points();

  // acquisition
  const Index k = run_stage(
      "acquire", [&] { return resolve_budget(config.budget, pool.n_points()); });
  result.budget_k = k;
  AcquisitionPlan plan = run_stage("acquire", [&] {
    AcquisitionPlan p;
    if (k == 0) {
      p.strategy = strategy_name(config.strategy);
      return p;
    }
    switch (config.strategy) {
      case Strategy::greedy: {
        double rho = config.radius.value;
        if (config.radius.mode == RadiusSpec::Mode::suggest)
          rho = suggest_radius(pool, config.radius.quantile,
                               config.radius.neighbor_rank);
        if (config.radius.mode == RadiusSpec::Mode::from_gamma) {
          if (config.radius.prior_head.empty())
            throw ConsistencyError(
                "radius from gamma needs a prior head (--head-from)");
          const LinearHead prior = load_head(config.radius.prior_head);
          rho = cert_radius(config.radius.value, lipschitz_bounds(prior));
        }
        return greedy_coverage(pool, rho, k);
      }
      case Strategy::kcenter: return kcenter(pool, k);
      case Strategy::random: return random_acquire(pool, k, config.seed);
    }
    throw ConsistencyError("unreachable strategy");
  });
  result.rho_acq = plan.rho;
  const fs::path plan_path = config.out_dir / "plan.json";
  save_plan(plan_path, plan);

  // query the oracle for the selected indices only
  LabeledSet labeled = run_stage("query", [&] {
    oracle.declare_queryable(plan.selected);
    LabeledSet s;
    for (Index u : plan.selected) {
      s.indices.push_back(u);
      s.labels.push_back(oracle.query(u));
    }
    return s;
  });

  // head
  LinearHead head = run_stage("train", [&] {
    if (labeled.empty()) {
      const Index c_count = std::max<Index>(2, config.n_classes);
      return make_head(Matrix::Zero(c_count, pool.dim()),
                       Vector::Zero(c_count));
    }
    if (config.head == HeadKind::prototype)
      return prototype_head(pool, labeled);
    TrainConfig tc;
    tc.steps = config.train_steps;
    tc.step_size = config.train_step_size;
    tc.l2_penalty = config.train_l2;
    tc.seed = config.seed;
    tc.n_classes = config.n_classes;
    return train_head(pool, labeled, tc);
  });
  const fs::path head_path = config.out_dir / "head.json";
  save_head(head_path, head);

  // center bounds
  const CenterBoundsResult bounds = run_stage(
      "centers", [&] { return center_margin_bounds(head, pool, labeled); });
  result.centers_retained = bounds.centers.size();
  result.centers_excluded = static_cast<Index>(bounds.excluded.size());
  if (!bounds.excluded.empty()) {
    std::cerr << "warning: " << bounds.excluded.size()
              << " queried center(s) misclassified by the head were dropped"
                 " from the constraint set:";
    for (Index u : bounds.excluded) std::cerr << ' ' << u;
    std::cerr << '\n';
  }

  // certification
  CertificationResult cert = run_stage("certify", [&] {
    return certify_pool(pool, head, bounds.centers, config.tau, config.kappa,
                        config.shared_lipschitz);
  });
  const fs::path cert_path = config.out_dir / "certificates.csv";
  save_certificates_csv(cert_path, cert.labeling, cert.feasible);
  fs::path lb_path, ub_path;
  if (config.dump_envelopes) {
    lb_path = config.out_dir / "envelope_lb.cpl";
    ub_path = config.out_dir / "envelope_ub.cpl";
    save_packed_matrix(lb_path, cert.envelopes.lb);
    save_packed_matrix(ub_path, cert.envelopes.ub);
  }
  if (!bounds.centers.empty()) {
    result.gamma_min = bounds.centers.margin_lb.minCoeff();
    if (*result.gamma_min > 0.0 && cert.lipschitz.l_max > 0.0)
      result.rho_cert = cert_radius(*result.gamma_min, cert.lipschitz);
  }

  // evaluation
  const std::vector<int> eval_labels = run_stage("evaluate", [&] {
    oracle.unlock_evaluation();
    return oracle.eval_labels();
  });
  result.cert_coverage = coverage(cert.labeling);
  result.cert_risk = selective_risk(cert.labeling, eval_labels);

  std::vector<RCCurve> curves = run_stage("evaluate", [&] {
    std::vector<RCCurve> out;
    const auto tau_grid = cert_tau_grid(cert.envelopes, config.rc_grid);
    out.push_back(rc_curve(
        "cert_full",
        [&](double tau) {
          return label_pool(cert.envelopes, tau, config.kappa);
        },
        tau_grid, eval_labels));

    std::vector<double> prob_grid(static_cast<std::size_t>(config.rc_grid));
    for (int i = 0; i < config.rc_grid; ++i)
      prob_grid[static_cast<std::size_t>(i)] =
          static_cast<double>(i) / static_cast<double>(config.rc_grid - 1);
    out.push_back(rc_curve(
        "softmax",
        [&](double t) { return softmax_select(head, pool, t); }, prob_grid,
        eval_labels));

    const Matrix margins = margins_all(head, pool.vectors);
    const double max_gap = margins.maxCoeff();
    std::vector<double> gap_grid(static_cast<std::size_t>(config.rc_grid));
    for (int i = 0; i < config.rc_grid; ++i)
      gap_grid[static_cast<std::size_t>(i)] =
          std::max(0.0, max_gap) * 1.01 * static_cast<double>(i) /
          static_cast<double>(config.rc_grid - 1);
    out.push_back(rc_curve(
        "margin", [&](double t) { return margin_select(head, pool, t); },
        gap_grid, eval_labels));

    if (!labeled.empty()) {
      std::vector<double> alpha_grid;
      for (int i = 0; i < config.rc_grid; ++i)
        alpha_grid.push_back(0.02 + (0.5 - 0.02) * static_cast<double>(i) /
                                        static_cast<double>(config.rc_grid - 1));
      out.push_back(rc_curve(
          "conformal_aps",
          [&](double alpha) {
            return aps_conformal(head, pool, labeled, alpha);
          },
          alpha_grid, eval_labels));
    }
    return out;
  });
  const fs::path rc_path = config.out_dir / "rc.csv";
  save_rc_csv(rc_path, curves);
  result.cov_max_cert = curves.front().cov_max;

  // verification
  const ConsistentHeadSample sample = run_stage("verify", [&] {
    return sample_consistent_heads(head, bounds.centers, cert.lipschitz, pool,
                                   config.oracle_samples, config.oracle_noise,
                                   config.seed);
  });
  const VerificationReport report = run_stage("verify", [&] {
    return verify_certificates(sample, cert.envelopes, cert.labeling, pool);
  });
  result.heads_accepted = static_cast<Index>(sample.accepted.size());
  result.verification_violations = static_cast<Index>(report.violations.size());
  const fs::path verify_path = config.out_dir / "verify.json";
  save_verification_report(verify_path, 1, sample, report);

  // summary
  const fs::path summary_path = config.out_dir / "summary.json";
  {
    json j;
    j["schema"] = "cpl-summary/1";
    j["n_points"] = pool.n_points();
    j["dim"] = pool.dim();
    j["n_classes"] = head.n_classes();
    j["budget_k"] = k;
    j["strategy"] = strategy_name(config.strategy);
    j["rho_acq"] = plan.rho;
    j["radius_mode"] = radius_mode_name(config.radius.mode);
    j["tau"] = config.tau;
    j["kappa"] = config.kappa;
    j["head"] = config.head == HeadKind::train ? "train" : "prototype";
    j["centers"] = {{"retained", bounds.centers.size()},
                    {"excluded", bounds.excluded}};
    j["gamma_min"] = optional_json(result.gamma_min);
    j["rho_cert"] = optional_json(result.rho_cert);
    j["cert"] = {{"coverage", result.cert_coverage},
                 {"risk", optional_json(result.cert_risk)},
                 {"cov_max_cert", result.cov_max_cert}};
    json methods = json::object();
    for (const RCCurve& curve : curves)
      methods[curve.method] = curve_summary(curve, result.cov_max_cert);
    j["methods"] = methods;
    j["oracle"] = {{"candidates", sample.n_candidates},
                   {"accepted", sample.accepted.size()},
                   {"rejected_lipschitz", sample.rejected_lipschitz},
                   {"rejected_center", sample.rejected_center},
                   {"violations", report.violations.size()}};
    j["label_reads"] = {{"queried", oracle.query_reads()},
                        {"evaluation_unlocked", oracle.evaluation_unlocked()}};
    std::ofstream out(summary_path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + summary_path.string());
    out << j.dump(2) << '\n';
  }

  std::map<std::string, fs::path> outputs = {
      {"plan.json", plan_path},          {"head.json", head_path},
      {"certificates.csv", cert_path},   {"rc.csv", rc_path},
      {"summary.json", summary_path},    {"verify.json", verify_path}};
  if (config.dump_envelopes) {
    outputs["envelope_lb.cpl"] = lb_path;
    outputs["envelope_ub.cpl"] = ub_path;
  }
  write_manifest(config.out_dir / "manifest.json", "pipeline",
                 pipeline_params(config),
                 {{"embeddings", config.embeddings},
                  {"labels", config.labels}},
                 outputs);
  result.outputs = outputs;
  result.outputs["manifest.json"] = config.out_dir / "manifest.json";
  return result;
}

ReplayResult cmd_replay(const fs::path& manifest_path,
                        const fs::path& out_dir) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("bad manifest JSON: " + std::string(e.what()));
  }
  const std::string command = manifest.at("command").get<std::string>();
  const json recorded = manifest.at("outputs");

  if (command == "synth") {
    cmd_synth(synth_from_params(manifest.at("parameters")), out_dir);
  } else if (command == "pipeline") {
    PipelineConfig config = pipeline_from_params(manifest.at("parameters"));
    config.out_dir = out_dir;
    cmd_pipeline(config);
  } else {
    throw FormatError("unknown command '" + command + "' in manifest");
  }

  ReplayResult result;
  result.all_match = true;
  for (const auto& [name, digest] : recorded.items()) {
    const std::string fresh = checksum_hex(fnv1a64_file(out_dir / name));
    const bool match = fresh == digest.get<std::string>();
    result.per_output[name] = match;
    result.all_match = result.all_match && match;
  }
  return result;
}

}  // namespace cpl
