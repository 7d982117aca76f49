#include "bifdr/crossfit.hpp"

#include "bifdr/error.hpp"
#include "bifdr/loss.hpp"
#include "bifdr/parallel.hpp"
#include "bifdr/random.hpp"

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace bifdr {

namespace {

// Stage tags mixed into per-fit seeds.
constexpr std::uint64_t kTagFull = 1;
constexpr std::uint64_t kTagStage1 = 2;
constexpr std::uint64_t kTagStage2 = 3;

// A fit's CV seed depends on what it is fitted to (stage, target, the first row
// of its training rows and of its weight fold), never on fold labels, so
// relabeling the folds reproduces every fit exactly.
std::uint64_t fit_seed(std::uint64_t master, std::uint64_t tag, Target c, std::size_t train_key,
                       std::size_t weight_key) {
  const std::uint64_t role = tag * 2 + (c == Target::a ? 0 : 1);
  const std::uint64_t rows = (static_cast<std::uint64_t>(train_key + 1) << 32) ^
                             static_cast<std::uint64_t>(weight_key + 1);
  return derive_seed(derive_seed(master, role), rows);
}

CovariateFunction model_fn(const Basis& basis, const Vector& theta, const LinkFunction& link) {
  return [&basis, theta, link](std::span<const double> z) {
    return link.value(basis.predictor(theta, z));
  };
}

CovariateFunction weight_fn(const Basis& basis, const Vector& theta, const LinkFunction& link) {
  return [&basis, theta, link](std::span<const double> z) {
    return link.deriv(basis.predictor(theta, z));
  };
}

std::size_t count_clamped(const Dataset& data, const Basis& basis, const Vector& theta,
                          const LinkFunction& link) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    if (link.clamps(basis.predictor(theta, data.z(i)))) ++count;
  }
  return count;
}

struct Context {
  const FunctionalSpec& spec;
  const Dataset& data;
  const Basis& basis;
  const CrossfitConfig& config;
  const FoldPlan& plan;
  std::vector<Dataset> folds;
  std::vector<std::size_t> first_row;

  Context(const FunctionalSpec& s, const Dataset& d, const Basis& b, const CrossfitConfig& c,
          const FoldPlan& p)
      : spec(s), data(d), basis(b), config(c), plan(p) {
    if (p.rows() != d.rows()) throw ConfigError("fold plan does not match the number of rows");
    spec.check_fields(d);
    spec.check_sign(d);
    for (int f = 0; f < p.k; ++f) {
      const auto rows = p.members(f);
      if (rows.empty()) throw ConfigError("empty fold in fold plan");
      first_row.push_back(rows.front());
      folds.push_back(d.subset(rows));
    }
  }

  std::size_t complement_key(int f) const {
    for (std::size_t i = 0; i < plan.rows(); ++i) {
      if (plan.assignment[i] != f) return i;
    }
    return 0;
  }

  NuisanceFit fit(const Dataset& train, Target c, const LinkFunction& link,
                  const CovariateFunction& weight, std::uint64_t seed, int fold) const {
    FitConfig fc = config.fit;
    fc.seed = seed;
    fc.threads = 1;
    const ProblemBuilder builder = [&](const Dataset& d) {
      return build_loss(spec, d, basis, c, link, weight);
    };
    PenalizedFit pf;
    try {
      pf = fit_penalized(builder, train, fc);
    } catch (const NumericalError& e) {
      throw SolverError(fold, std::string("nuisance ") + to_string(c) + ": " + e.what());
    }
    if (!pf.converged) {
      throw SolverError(fold, std::string("nuisance ") + to_string(c) +
                                  " fit did not reach the KKT tolerance (residual " +
                                  std::to_string(pf.kkt_residual) + ")");
    }
    NuisanceFit out;
    out.target = c;
    out.theta = std::move(pf.theta);
    out.lambda = pf.lambda_used;
    out.kkt_residual = pf.kkt_residual;
    out.iters = pf.iters;
    out.clamped_rows = pf.clamped_rows;
    return out;
  }
};

void run_jobs(std::vector<std::function<void()>>& jobs, int threads) {
  parallel_for(jobs.size(), threads, [&](std::size_t i) { jobs[i](); });
}

// Sums fold values in the order of each fold's first row, so the result does
// not depend on how folds are labeled.
double label_free_mean(const std::vector<double>& values, const std::vector<std::size_t>& keys) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return keys[x] < keys[y]; });
  double s = 0.0;
  for (auto f : order) s += values[f];
  return s / static_cast<double>(values.size());
}

CrossfitEstimate finish(const Context& ctx, Algorithm algorithm, const LinkFunction& link_a,
                        const LinkFunction& link_b, std::vector<Vector> theta_a,
                        std::vector<Vector> theta_b, std::vector<NuisanceFit> fits) {
  const int k = ctx.plan.k;
  CrossfitEstimate est;
  est.algorithm = algorithm;
  est.functional = ctx.spec.name;
  est.n = ctx.data.rows();
  est.ci_level = ctx.config.ci_level;
  est.plan = ctx.plan;
  est.seed = ctx.config.seed;
  est.upsilon = Vector::Zero(static_cast<Eigen::Index>(est.n));
  est.per_fold_chi.assign(static_cast<std::size_t>(k), 0.0);

  std::vector<double> fold_var(static_cast<std::size_t>(k), 0.0);
  for (int f = 0; f < k; ++f) {
    const auto rows = ctx.plan.members(f);
    const auto a = model_fn(ctx.basis, theta_a[static_cast<std::size_t>(f)], link_a);
    const auto b = model_fn(ctx.basis, theta_b[static_cast<std::size_t>(f)], link_b);
    double sum = 0.0;
    for (auto i : rows) {
      const double u = eval_upsilon(ctx.spec, a, b, ctx.data.row(i));
      est.upsilon[static_cast<Eigen::Index>(i)] = u;
      sum += u;
    }
    const double mean = sum / static_cast<double>(rows.size());
    double ss = 0.0;
    for (auto i : rows) {
      const double r = est.upsilon[static_cast<Eigen::Index>(i)] - mean;
      ss += r * r;
    }
    est.per_fold_chi[static_cast<std::size_t>(f)] = mean;
    fold_var[static_cast<std::size_t>(f)] = ss / static_cast<double>(rows.size());
    est.clamped_rows += count_clamped(ctx.folds[static_cast<std::size_t>(f)], ctx.basis,
                                      theta_a[static_cast<std::size_t>(f)], link_a) +
                        count_clamped(ctx.folds[static_cast<std::size_t>(f)], ctx.basis,
                                      theta_b[static_cast<std::size_t>(f)], link_b);
  }
  est.chi_hat = label_free_mean(est.per_fold_chi, ctx.first_row);
  est.v_hat = label_free_mean(fold_var, ctx.first_row);
  est.ci = wald_ci(est.chi_hat, est.v_hat, est.n, est.ci_level);
  for (const auto& fit : fits) est.clamped_rows += fit.clamped_rows + fit.weight_clamped_rows;
  est.theta_a = std::move(theta_a);
  est.theta_b = std::move(theta_b);
  est.fits = std::move(fits);
  return est;
}

int resolve_folds(const CrossfitConfig& config, Algorithm algorithm) {
  if (config.folds == 0) return algorithm == Algorithm::lin ? 2 : 3;
  return config.folds;
}

void validate(const CrossfitConfig& config) {
  config.fit.validate();
  if (!(config.ci_level > 0.0 && config.ci_level < 1.0)) {
    throw ConfigError("ci_level must lie in (0, 1)");
  }
  if (config.folds != 0 && config.folds < 2) throw ConfigError("folds must be at least 2");
}

}  // namespace

std::vector<std::size_t> FoldPlan::members(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == f) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::complement(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != f) out.push_back(i);
  }
  return out;
}

FoldPlan split_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("need at least 2 folds");
  if (n < 2 * static_cast<std::size_t>(k)) {
    throw ConfigError("need at least " + std::to_string(2 * k) + " rows for " +
                      std::to_string(k) + " folds, got " + std::to_string(n));
  }
  return FoldPlan{k, assign_folds(n, k, seed), seed};
}

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::lin: return "lin";
    case Algorithm::nonlin: return "nonlin";
    case Algorithm::mix: return "mix";
  }
  return "?";
}

Algorithm select_algorithm(const LinkFunction& link_a, const LinkFunction& link_b) {
  if (link_a.is_identity() && link_b.is_identity()) return Algorithm::lin;
  if (!link_a.is_identity() && !link_b.is_identity()) return Algorithm::nonlin;
  return Algorithm::mix;
}

double CrossfitEstimate::standard_error() const {
  return std::sqrt(v_hat / static_cast<double>(n));
}

std::array<double, 2> wald_ci(double chi_hat, double v_hat, std::size_t n, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  if (!(v_hat >= 0.0) || n == 0) throw ConfigError("wald_ci needs v_hat >= 0 and n >= 1");
  const boost::math::normal_distribution<double> normal;
  const double z = boost::math::quantile(normal, 0.5 * (1.0 + level));
  const double half = z * std::sqrt(v_hat / static_cast<double>(n));
  return {chi_hat - half, chi_hat + half};
}

CrossfitEstimate estimate_lin(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const CrossfitConfig& config) {
  validate(config);
  return estimate_lin(spec, data, basis, config,
                      split_folds(data.rows(), resolve_folds(config, Algorithm::lin), config.seed));
}

CrossfitEstimate estimate_lin(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const CrossfitConfig& config, const FoldPlan& plan) {
  validate(config);
  const Context ctx(spec, data, basis, config, plan);
  const LinkFunction id = link("identity");
  const int k = plan.k;
  std::vector<NuisanceFit> fits(static_cast<std::size_t>(2 * k));
  std::vector<std::function<void()>> jobs;
  for (int f = 0; f < k; ++f) {
    for (Target c : {Target::a, Target::b}) {
      const std::size_t slot = static_cast<std::size_t>(2 * f + (c == Target::a ? 0 : 1));
      jobs.emplace_back([&, f, c, slot] {
        const Dataset train = data.subset(plan.complement(f));
        auto fit = ctx.fit(train, c, id, {},
                           fit_seed(config.seed, kTagFull, c, ctx.complement_key(f), 0), f);
        fit.stage = "full";
        fit.heldout_fold = f;
        fits[slot] = std::move(fit);
      });
    }
  }
  run_jobs(jobs, config.threads);

  std::vector<Vector> ta, tb;
  for (int f = 0; f < k; ++f) {
    ta.push_back(fits[static_cast<std::size_t>(2 * f)].theta);
    tb.push_back(fits[static_cast<std::size_t>(2 * f + 1)].theta);
  }
  return finish(ctx, Algorithm::lin, id, id, std::move(ta), std::move(tb), std::move(fits));
}

CrossfitEstimate estimate_nonlin(const FunctionalSpec& spec, const Dataset& data,
                                 const Basis& basis, const LinkFunction& link_a,
                                 const LinkFunction& link_b, const CrossfitConfig& config) {
  validate(config);
  return estimate_nonlin(
      spec, data, basis, link_a, link_b, config,
      split_folds(data.rows(), resolve_folds(config, Algorithm::nonlin), config.seed));
}

CrossfitEstimate estimate_nonlin(const FunctionalSpec& spec, const Dataset& data,
                                 const Basis& basis, const LinkFunction& link_a,
                                 const LinkFunction& link_b, const CrossfitConfig& config,
                                 const FoldPlan& plan) {
  validate(config);
  if (plan.k != 3) throw ConfigError("the nonlinear algorithm uses 3 folds");
  const Context ctx(spec, data, basis, config, plan);
  auto link_of = [&](Target c) -> const LinkFunction& {
    return c == Target::a ? link_a : link_b;
  };
  auto ci = [](Target c) { return c == Target::a ? 0 : 1; };

  // Stage 1: unweighted fit of each nuisance on each single fold.
  std::vector<NuisanceFit> stage1(6);
  std::vector<std::function<void()>> jobs;
  for (int f = 0; f < 3; ++f) {
    for (Target c : {Target::a, Target::b}) {
      jobs.emplace_back([&, f, c] {
        auto fit = ctx.fit(ctx.folds[static_cast<std::size_t>(f)], c, link_of(c), {},
                           fit_seed(config.seed, kTagStage1, c,
                                    ctx.first_row[static_cast<std::size_t>(f)], 0),
                           f);
        fit.stage = "stage1";
        fit.train_fold = f;
        stage1[static_cast<std::size_t>(2 * f + ci(c))] = std::move(fit);
      });
    }
  }
  run_jobs(jobs, config.threads);

  // Stage 2: fit c on fold m weighted by phi_cbar' of the stage-1 cbar fit on j.
  auto slot2 = [](int m, int j, Target c) {
    const int jj = j < m ? j : j - 1;
    return static_cast<std::size_t>(4 * m + 2 * jj + (c == Target::a ? 0 : 1));
  };
  std::vector<NuisanceFit> stage2(12);
  jobs.clear();
  for (int m = 0; m < 3; ++m) {
    for (int j = 0; j < 3; ++j) {
      if (j == m) continue;
      for (Target c : {Target::a, Target::b}) {
        jobs.emplace_back([&, m, j, c] {
          const Target cbar = other(c);
          const Vector& theta0 = stage1[static_cast<std::size_t>(2 * j + ci(cbar))].theta;
          const Dataset& train = ctx.folds[static_cast<std::size_t>(m)];
          auto fit = ctx.fit(train, c, link_of(c), weight_fn(basis, theta0, link_of(cbar)),
                             fit_seed(config.seed, kTagStage2, c,
                                      ctx.first_row[static_cast<std::size_t>(m)],
                                      ctx.first_row[static_cast<std::size_t>(j)]),
                             m);
          fit.stage = "stage2";
          fit.train_fold = m;
          fit.weight_fold = j;
          fit.weight_clamped_rows = count_clamped(train, basis, theta0, link_of(cbar));
          stage2[slot2(m, j, c)] = std::move(fit);
        });
      }
    }
  }
  run_jobs(jobs, config.threads);

  std::vector<Vector> ta, tb;
  for (int k = 0; k < 3; ++k) {
    const int j1 = k == 0 ? 1 : 0;
    const int j2 = k == 2 ? 1 : 2;
    ta.push_back(0.5 * (stage2[slot2(j1, j2, Target::a)].theta +
                        stage2[slot2(j2, j1, Target::a)].theta));
    tb.push_back(0.5 * (stage2[slot2(j1, j2, Target::b)].theta +
                        stage2[slot2(j2, j1, Target::b)].theta));
  }
  std::vector<NuisanceFit> fits = std::move(stage1);
  for (auto& f : stage2) fits.push_back(std::move(f));
  return finish(ctx, Algorithm::nonlin, link_a, link_b, std::move(ta), std::move(tb),
                std::move(fits));
}

CrossfitEstimate estimate_mix(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const LinkFunction& link_a, const LinkFunction& link_b,
                              const CrossfitConfig& config) {
  validate(config);
  return estimate_mix(spec, data, basis, link_a, link_b, config,
                      split_folds(data.rows(), resolve_folds(config, Algorithm::mix), config.seed));
}

CrossfitEstimate estimate_mix(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const LinkFunction& link_a, const LinkFunction& link_b,
                              const CrossfitConfig& config, const FoldPlan& plan) {
  validate(config);
  if (plan.k != 3) throw ConfigError("the mixed algorithm uses 3 folds");
  if (link_a.is_identity() == link_b.is_identity()) {
    throw ConfigError("the mixed algorithm needs exactly one identity link");
  }
  const Context ctx(spec, data, basis, config, plan);
  // lin: the nuisance with the identity link; non: the other one.
  const Target lin = link_a.is_identity() ? Target::a : Target::b;
  const Target non = other(lin);
  const LinkFunction& link_lin = lin == Target::a ? link_a : link_b;
  const LinkFunction& link_non = lin == Target::a ? link_b : link_a;

  std::vector<NuisanceFit> full(3), stage1(3);
  std::vector<std::function<void()>> jobs;
  for (int f = 0; f < 3; ++f) {
    jobs.emplace_back([&, f] {
      const Dataset train = data.subset(plan.complement(f));
      auto fit = ctx.fit(train, non, link_non, {},
                         fit_seed(config.seed, kTagFull, non, ctx.complement_key(f), 0), f);
      fit.stage = "full";
      fit.heldout_fold = f;
      full[static_cast<std::size_t>(f)] = std::move(fit);
    });
    jobs.emplace_back([&, f] {
      auto fit = ctx.fit(ctx.folds[static_cast<std::size_t>(f)], non, link_non, {},
                         fit_seed(config.seed, kTagStage1, non,
                                  ctx.first_row[static_cast<std::size_t>(f)], 0),
                         f);
      fit.stage = "stage1";
      fit.train_fold = f;
      stage1[static_cast<std::size_t>(f)] = std::move(fit);
    });
  }
  run_jobs(jobs, config.threads);

  auto slot2 = [](int m, int j) { return static_cast<std::size_t>(2 * m + (j < m ? j : j - 1)); };
  std::vector<NuisanceFit> stage2(6);
  jobs.clear();
  for (int m = 0; m < 3; ++m) {
    for (int j = 0; j < 3; ++j) {
      if (j == m) continue;
      jobs.emplace_back([&, m, j] {
        const Vector& theta0 = stage1[static_cast<std::size_t>(j)].theta;
        const Dataset& train = ctx.folds[static_cast<std::size_t>(m)];
        auto fit = ctx.fit(train, lin, link_lin, weight_fn(basis, theta0, link_non),
                           fit_seed(config.seed, kTagStage2, lin,
                                    ctx.first_row[static_cast<std::size_t>(m)],
                                    ctx.first_row[static_cast<std::size_t>(j)]),
                           m);
        fit.stage = "stage2";
        fit.train_fold = m;
        fit.weight_fold = j;
        fit.weight_clamped_rows = count_clamped(train, basis, theta0, link_non);
        stage2[slot2(m, j)] = std::move(fit);
      });
    }
  }
  run_jobs(jobs, config.threads);

  std::vector<Vector> t_lin, t_non;
  for (int k = 0; k < 3; ++k) {
    const int j1 = k == 0 ? 1 : 0;
    const int j2 = k == 2 ? 1 : 2;
    t_lin.push_back(0.5 * (stage2[slot2(j1, j2)].theta + stage2[slot2(j2, j1)].theta));
    t_non.push_back(full[static_cast<std::size_t>(k)].theta);
  }
  std::vector<NuisanceFit> fits = std::move(full);
  for (auto& f : stage1) fits.push_back(std::move(f));
  for (auto& f : stage2) fits.push_back(std::move(f));
  if (lin == Target::a) {
    return finish(ctx, Algorithm::mix, link_a, link_b, std::move(t_lin), std::move(t_non),
                  std::move(fits));
  }
  return finish(ctx, Algorithm::mix, link_a, link_b, std::move(t_non), std::move(t_lin),
                std::move(fits));
}

CrossfitEstimate estimate(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                          const LinkFunction& link_a, const LinkFunction& link_b,
                          const CrossfitConfig& config) {
  validate(config);
  const Algorithm alg = select_algorithm(link_a, link_b);
  return estimate(spec, data, basis, link_a, link_b, config,
                  split_folds(data.rows(), resolve_folds(config, alg), config.seed));
}

CrossfitEstimate estimate(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                          const LinkFunction& link_a, const LinkFunction& link_b,
                          const CrossfitConfig& config, const FoldPlan& plan) {
  switch (select_algorithm(link_a, link_b)) {
    case Algorithm::lin: return estimate_lin(spec, data, basis, config, plan);
    case Algorithm::nonlin:
      return estimate_nonlin(spec, data, basis, link_a, link_b, config, plan);
    case Algorithm::mix: return estimate_mix(spec, data, basis, link_a, link_b, config, plan);
  }
  throw ConfigError("unknown algorithm");
}

AteEstimate estimate_ate(const Dataset& data, const Basis& basis, const LinkFunction& link_a,
                         const LinkFunction& link_b, const CrossfitConfig& config) {
  validate(config);
  const Algorithm alg = select_algorithm(link_a, link_b);
  const FoldPlan plan = split_folds(data.rows(), resolve_folds(config, alg), config.seed);
  RegistryOptions arm1, arm2;
  arm1.arm = 1;
  arm2.arm = 2;
  AteEstimate ate;
  ate.treated = estimate(registry_get("ate_arm", arm1), data, basis, link_a, link_b, config, plan);
  ate.control = estimate(registry_get("ate_arm", arm2), data, basis, link_a, link_b, config, plan);
  const Vector diff = ate.treated.upsilon - ate.control.upsilon;
  std::vector<double> means, vars;
  std::vector<std::size_t> keys;
  for (int f = 0; f < plan.k; ++f) {
    const auto rows = plan.members(f);
    double s = 0.0;
    for (auto i : rows) s += diff[static_cast<Eigen::Index>(i)];
    const double m = s / static_cast<double>(rows.size());
    double ss = 0.0;
    for (auto i : rows) ss += (diff[static_cast<Eigen::Index>(i)] - m) * (diff[static_cast<Eigen::Index>(i)] - m);
    means.push_back(m);
    vars.push_back(ss / static_cast<double>(rows.size()));
    keys.push_back(rows.front());
  }
  ate.chi_hat = label_free_mean(means, keys);
  ate.v_hat = label_free_mean(vars, keys);
  ate.ci = wald_ci(ate.chi_hat, ate.v_hat, data.rows(), config.ci_level);
  return ate;
}

std::string to_json(const CrossfitEstimate& est, int indent) {
  nlohmann::ordered_json j;
  j["algorithm"] = to_string(est.algorithm);
  j["functional"] = est.functional;
  j["chi_hat"] = est.chi_hat;
  j["v_hat"] = est.v_hat;
  j["n"] = est.n;
  j["ci_level"] = est.ci_level;
  j["ci"] = {est.ci[0], est.ci[1]};
  j["per_fold_chi"] = est.per_fold_chi;
  auto lambdas = nlohmann::ordered_json::array();
  auto kkts = nlohmann::ordered_json::array();
  for (const auto& f : est.fits) {
    lambdas.push_back(f.lambda);
    kkts.push_back(f.kkt_residual);
  }
  j["lambda_per_fit"] = std::move(lambdas);
  j["kkt_residual_per_fit"] = std::move(kkts);
  j["clamped_rows"] = est.clamped_rows;
  j["seed"] = est.seed;
  return j.dump(indent);
}

}  // namespace bifdr
