#include "bifdr_cli/cli.hpp"

#include "bifdr/crossfit.hpp"
#include "bifdr/error.hpp"
#include "bifdr/simulate.hpp"
#include "bifdr/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace bifdr::cli {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr double kSizeBound = 5e9;  // reps * n * p without --allow-large

std::uint64_t parse_seed(const std::string& text, const char* source) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(std::string("invalid seed in ") + source + ": '" + text + "'");
  }
  return v;
}

// --seed wins, then BIFDR_SEED, then 0.
std::uint64_t resolve_seed(const std::string& flag) {
  if (!flag.empty()) return parse_seed(flag, "--seed");
  if (const char* env = std::getenv("BIFDR_SEED"); env && *env) return parse_seed(env, "BIFDR_SEED");
  return 0;
}

std::string absolute(const std::string& path) {
  return path.empty() ? path : fs::absolute(path).lexically_normal().string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << content;
  if (!f.flush()) throw DataError("failed writing '" + path + "'");
}

Json to_json(const EstimateOptions& o) {
  Json j;
  j["data"] = o.data;
  j["functional"] = o.functional;
  j["link_a"] = o.link_a;
  j["link_b"] = o.link_b;
  j["folds"] = o.folds;
  j["lambda"] = o.lambda;
  j["cv_folds"] = o.cv_folds;
  j["tol"] = o.tol;
  j["max_iter"] = o.max_iter;
  j["ci_level"] = o.ci_level;
  j["delta"] = o.delta ? Json(*o.delta) : Json(nullptr);
  j["arm"] = o.arm;
  j["contrast"] = o.contrast;
  j["policy_shift"] = o.policy_shift ? Json(*o.policy_shift) : Json(nullptr);
  j["intercept"] = o.intercept;
  j["seed"] = o.seed;
  j["threads"] = o.threads;
  j["out"] = o.out;
  return j;
}

EstimateOptions estimate_from_json(const Json& j) {
  EstimateOptions o;
  o.data = j.at("data").get<std::string>();
  o.functional = j.at("functional").get<std::string>();
  o.link_a = j.at("link_a").get<std::string>();
  o.link_b = j.at("link_b").get<std::string>();
  o.folds = j.at("folds").get<int>();
  o.lambda = j.at("lambda").get<std::string>();
  o.cv_folds = j.at("cv_folds").get<int>();
  o.tol = j.at("tol").get<double>();
  o.max_iter = j.at("max_iter").get<int>();
  o.ci_level = j.at("ci_level").get<double>();
  if (!j.at("delta").is_null()) o.delta = j.at("delta").get<double>();
  o.arm = j.at("arm").get<int>();
  o.contrast = j.at("contrast").get<std::string>();
  if (!j.at("policy_shift").is_null()) o.policy_shift = j.at("policy_shift").get<double>();
  o.intercept = j.at("intercept").get<bool>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.threads = j.at("threads").get<int>();
  o.out = j.at("out").get<std::string>();
  return o;
}

Json to_json(const SimulateOptions& o) {
  Json j;
  j["experiment"] = o.experiment;
  j["alpha_a"] = o.alpha_a;
  j["alpha_b"] = o.alpha_b;
  j["n"] = o.n;
  j["p"] = o.p;
  j["reps"] = o.reps;
  j["paper_scale"] = o.paper_scale;
  j["estimators"] = o.estimators;
  j["lambda"] = o.lambda;
  j["cv_folds"] = o.cv_folds;
  j["tol"] = o.tol;
  j["max_iter"] = o.max_iter;
  j["allow_large"] = o.allow_large;
  j["seed"] = o.seed;
  j["threads"] = o.threads;
  j["out"] = o.out;
  return j;
}

SimulateOptions simulate_from_json(const Json& j) {
  SimulateOptions o;
  o.experiment = j.at("experiment").get<int>();
  o.alpha_a = j.at("alpha_a").get<double>();
  o.alpha_b = j.at("alpha_b").get<double>();
  o.n = j.at("n").get<std::size_t>();
  o.p = j.at("p").get<std::size_t>();
  o.reps = j.at("reps").get<std::size_t>();
  o.paper_scale = j.at("paper_scale").get<bool>();
  o.estimators = j.at("estimators").get<std::vector<std::string>>();
  o.lambda = j.at("lambda").get<std::string>();
  o.cv_folds = j.at("cv_folds").get<int>();
  o.tol = j.at("tol").get<double>();
  o.max_iter = j.at("max_iter").get<int>();
  o.allow_large = j.at("allow_large").get<bool>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.threads = j.at("threads").get<int>();
  o.out = j.at("out").get<std::string>();
  return o;
}

void write_manifest(const std::string& command, const std::vector<std::string>& argv,
                    Json config, double wall, std::uint64_t seed, const std::string& output,
                    Json extra) {
  Json m;
  m["command"] = command;
  m["argv"] = argv;
  m["config"] = std::move(config);
  m["library_version"] = kVersion;
  m["schema_version"] = kSchemaVersion;
  m["wall_time_seconds"] = wall;
  m["seed"] = seed;
  m["output"] = output;
  if (!extra.is_null()) m["results"] = std::move(extra);
  write_file(output + ".manifest.json", m.dump(2) + "\n");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FitConfig fit_config(const std::string& lambda, int cv_folds, double tol, int max_iter) {
  FitConfig fc;
  fc.lambda = parse_lambda_rule(lambda, cv_folds);
  fc.tol_kkt = tol;
  fc.max_iter = max_iter;
  fc.validate();
  return fc;
}

// Maps library exceptions to the exit-code contract.
template <class F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const SolverError& e) {
    log << "error: " << e.what();
    if (e.fold() >= 0) log << " (fold " << e.fold() << ")";
    log << '\n';
    return kSolverError;
  } catch (const NumericalError& e) {
    log << "error: numerical failure in " << e.term() << ": " << e.what() << '\n';
    return kSolverError;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const Json::exception& e) {
    log << "error: malformed manifest: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    log << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace

void resolve(SimulateOptions& o) {
  DgpConfig{o.experiment, 2, 1, o.alpha_a, o.alpha_b, 0}.validate();
  if (o.n == 0) o.n = 1000;
  if (o.p == 0) o.p = (o.paper_scale && o.experiment != 5) ? 200 : 100;
  if (o.reps == 0) o.reps = o.paper_scale ? 500 : 300;
  const double size = static_cast<double>(o.reps) * static_cast<double>(o.n) *
                      static_cast<double>(o.p);
  if (size > kSizeBound && !o.allow_large) {
    std::ostringstream msg;
    msg << "reps * n * p = " << size << " exceeds " << kSizeBound
        << "; pass --allow-large to run anyway";
    throw ConfigError(msg.str());
  }
}

int cmd_estimate(const EstimateOptions& o, const std::vector<std::string>& argv,
                 std::ostream& log) {
  return guarded(log, [&] {
    if (o.out.empty()) throw ConfigError("--out is required");
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset data = read_csv(o.data);

    RegistryOptions reg;
    reg.delta = o.delta;
    reg.arm = o.arm;
    if (o.contrast == "centered") {
      reg.contrast = [](double u) { return u - 0.5; };
    } else if (!o.contrast.empty()) {
      throw ConfigError("unknown contrast '" + o.contrast + "' (supported: centered)");
    }
    if (o.policy_shift) reg.policy = [s = *o.policy_shift](double d) { return d + s; };
    const FunctionalSpec spec = registry_get(o.functional, reg);

    Basis basis = Basis::linear(data.covariate_dim());
    if (o.intercept) basis = basis.with_intercept();

    CrossfitConfig cfg;
    cfg.fit = fit_config(o.lambda, o.cv_folds, o.tol, o.max_iter);
    cfg.folds = o.folds;
    cfg.ci_level = o.ci_level;
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    const CrossfitEstimate est =
        estimate(spec, data, basis, link(o.link_a), link(o.link_b), cfg);
    write_file(o.out, to_json(est) + "\n");
    write_manifest("estimate", argv, to_json(o), seconds_since(t0), o.seed, o.out, nullptr);

    log << std::setprecision(6) << "estimate " << o.functional << " (" << to_string(est.algorithm)
        << ", n=" << est.n << "): chi_hat=" << est.chi_hat << " se=" << est.standard_error()
        << " ci=[" << est.ci[0] << ", " << est.ci[1] << "]\n";
    return static_cast<int>(kOk);
  });
}

int cmd_simulate(SimulateOptions o, const std::vector<std::string>& argv, std::ostream& log) {
  return guarded(log, [&] {
    if (o.out.empty()) throw ConfigError("--out is required");
    resolve(o);
    const auto t0 = std::chrono::steady_clock::now();
    SimulationConfig sc;
    sc.dgp = DgpConfig{o.experiment, o.n, o.p, o.alpha_a, o.alpha_b, o.seed};
    sc.reps = o.reps;
    for (const auto& e : o.estimators) sc.estimators.push_back(parse_estimator(e));
    sc.fit = fit_config(o.lambda, o.cv_folds, o.tol, o.max_iter);
    sc.threads = o.threads;
    const SimulationReport report = run_monte_carlo(sc);

    std::ostringstream csv;
    write_report_csv(report, csv);
    write_file(o.out, csv.str());

    Json results;
    results["truth"] = report.truth.chi;
    results["snr_y"] = report.snr.y;
    results["snr_d"] = report.snr.d;
    results["valid"] = report.valid();
    write_manifest("simulate", argv, to_json(o), seconds_since(t0), o.seed, o.out,
                   std::move(results));

    log << std::setprecision(4) << "experiment " << o.experiment << " alpha=(" << o.alpha_a
        << "," << o.alpha_b << ") n=" << o.n << " p=" << o.p << " reps=" << o.reps
        << " truth=" << report.truth.chi << " snr=(" << report.snr.y << "," << report.snr.d
        << "):";
    for (const auto& r : report.rows) {
      log << ' ' << to_string(r.estimator) << "[bias=" << r.abs_bias << " sd=" << r.mc_sd
          << " cov=" << r.coverage << " failed=" << r.failed << "]";
    }
    log << '\n';
    if (!report.valid()) {
      log << "error: more than 1% of replicates failed for at least one estimator\n";
      return static_cast<int>(kSolverError);
    }
    return static_cast<int>(kOk);
  });
}

int cmd_replay(const std::string& manifest, const std::string& out, std::ostream& log) {
  return guarded(log, [&] {
    std::ifstream f(manifest);
    if (!f) throw DataError("cannot open manifest '" + manifest + "'");
    const Json m = Json::parse(f);
    const std::string command = m.at("command").get<std::string>();
    const std::vector<std::string> argv = {"replay", absolute(manifest)};
    if (command == "estimate") {
      EstimateOptions o = estimate_from_json(m.at("config"));
      if (!out.empty()) o.out = absolute(out);
      return cmd_estimate(o, argv, log);
    }
    if (command == "simulate") {
      SimulateOptions o = simulate_from_json(m.at("config"));
      if (!out.empty()) o.out = absolute(out);
      return cmd_simulate(o, argv, log);
    }
    throw DataError("manifest has unknown command '" + command + "'");
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-fitted doubly robust estimation with l1-regularized nuisances", "bifdr"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print library and schema versions");

  EstimateOptions est;
  std::string est_seed;
  auto* e = app.add_subcommand("estimate", "Estimate a functional on a CSV dataset");
  e->add_option("--data", est.data, "Input CSV (fields, then z1..zd)")->required();
  e->add_option("--functional", est.functional, "Registry name")->required();
  e->add_option("--link-a", est.link_a, "identity|exp|negexp|expit|inv-expit|neg-inv-expit");
  e->add_option("--link-b", est.link_b, "Link of the b working model");
  e->add_option("--folds", est.folds, "Number of folds (default 2 for lin, 3 otherwise)");
  e->add_option("--lambda", est.lambda, "<value>|rate:<c>|cv");
  e->add_option("--cv-folds", est.cv_folds, "Folds for lambda cross-validation");
  e->add_option("--tol", est.tol, "KKT tolerance");
  e->add_option("--max-iter", est.max_iter, "Iteration limit per fit");
  e->add_option("--ci-level", est.ci_level, "Confidence level");
  e->add_option("--delta", est.delta, "Tilt parameter for mnar_mean");
  e->add_option("--arm", est.arm, "ate_arm: 1 treated, 2 control");
  e->add_option("--contrast", est.contrast, "continuous_treatment contrast: centered");
  e->add_option("--policy-shift", est.policy_shift, "policy_effect: t(d) = d + shift");
  e->add_flag("--intercept", est.intercept, "Add an unpenalized intercept");
  e->add_option("--seed", est_seed, "Master seed (fallback: BIFDR_SEED, then 0)");
  e->add_option("--threads", est.threads, "Worker threads for nuisance fits");
  e->add_option("--out", est.out, "Output JSON");

  SimulateOptions sim;
  std::string sim_seed;
  auto* s = app.add_subcommand("simulate", "Run the Monte Carlo study for one scenario");
  s->add_option("--experiment", sim.experiment, "1..5")->required();
  s->add_option("--alpha-a", sim.alpha_a, "Decay of theta_a");
  s->add_option("--alpha-b", sim.alpha_b, "Decay of theta_b");
  s->add_option("--n", sim.n, "Sample size (default 1000)");
  s->add_option("--p", sim.p, "Covariates (default 100; 200 with --paper-scale)");
  s->add_option("--reps", sim.reps, "Replicates (default 300; 500 with --paper-scale)");
  s->add_option("--threads", sim.threads, "Replicate worker threads");
  s->add_flag("--paper-scale", sim.paper_scale, "n=1000, p=200, 500 replicates");
  s->add_option("--estimators", sim.estimators, "Subset of dr_lin,dr_nonlin,dr_mix,naive_*")
      ->delimiter(',');
  s->add_option("--lambda", sim.lambda, "<value>|rate:<c>|cv");
  s->add_option("--cv-folds", sim.cv_folds, "Folds for lambda cross-validation");
  s->add_option("--tol", sim.tol, "KKT tolerance");
  s->add_option("--max-iter", sim.max_iter, "Iteration limit per fit");
  s->add_flag("--allow-large", sim.allow_large, "Lift the reps*n*p size bound");
  s->add_option("--seed", sim_seed, "Master seed (fallback: BIFDR_SEED, then 0)");
  s->add_option("--out", sim.out, "Output CSV");

  std::string manifest, replay_out;
  auto* r = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  r->add_option("--manifest", manifest, "FILE.manifest.json")->required();
  r->add_option("--out", replay_out, "Write here instead of the recorded output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? static_cast<int>(kOk) : static_cast<int>(kDataError);
  }

  std::vector<std::string> args(argv, argv + argc);
  if (show_version) {
    out << "bifdr " << kVersion << " (schema " << kSchemaVersion << ")\n";
    return kOk;
  }
  if (*e) {
    const int rc = guarded(err, [&] {
      est.seed = resolve_seed(est_seed);
      est.data = absolute(est.data);
      est.out = absolute(est.out);
      return static_cast<int>(kOk);
    });
    if (rc != kOk) return rc;
    return cmd_estimate(est, args, err);
  }
  if (*s) {
    const int rc = guarded(err, [&] {
      sim.seed = resolve_seed(sim_seed);
      sim.out = absolute(sim.out);
      return static_cast<int>(kOk);
    });
    if (rc != kOk) return rc;
    return cmd_simulate(sim, args, err);
  }
  if (*r) return cmd_replay(manifest, replay_out, err);
  out << app.help();
  return kDataError;
}

}  // namespace bifdr::cli
