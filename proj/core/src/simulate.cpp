#include "bifdr/simulate.hpp"

#include "bifdr/error.hpp"
#include "bifdr/links.hpp"
#include "bifdr/loss.hpp"
#include "bifdr/parallel.hpp"
#include "bifdr/random.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace bifdr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Conditional means as functions of the linear index <theta_c, z>.
double mean_a(int experiment, double u) {
  return experiment <= 2 ? u : std::exp(clamp_exp_arg(u));
}
double mean_b(int experiment, double u) {
  switch (experiment) {
    case 1: return u;
    case 2:
    case 3: return std::exp(clamp_exp_arg(u));
    default: return u * u;
  }
}

double dot(const Vector& theta, std::span<const double> z) {
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) s += theta[static_cast<Eigen::Index>(j)] * z[j];
  return s;
}

int draw_poisson(Rng& rng, double mean) {
  if (!std::isfinite(mean)) throw NumericalError("poisson_rate", "Poisson rate is not finite");
  if (mean <= 0.0) return 0;
  boost::random::poisson_distribution<int, double> pois(mean);
  return pois(rng);
}

// Sum of sorted values, so the result is independent of input order.
double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

Matrix toeplitz_sigma(std::size_t p, double rho) {
  if (p == 0) throw ConfigError("toeplitz_sigma needs p >= 1");
  Matrix s(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
    }
  }
  return s;
}

Vector theta_weak_sparse(std::size_t p, double alpha, double c, Parity parity) {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  Vector t(static_cast<Eigen::Index>(p));
  for (std::size_t j = 1; j <= p; ++j) {
    const bool odd = j % 2 == 1;
    // (-1)^j for a, (-1)^(j+1) for b.
    const double sign = (parity == Parity::a) == odd ? -1.0 : 1.0;
    t[static_cast<Eigen::Index>(j - 1)] = c * std::pow(static_cast<double>(j), -alpha) * sign;
  }
  return t;
}

void DgpConfig::validate() const {
  if (experiment < 1 || experiment > 5) {
    throw ConfigError("experiment must be one of 1..5, got " + std::to_string(experiment));
  }
  if (n < 2) throw ConfigError("n must be at least 2");
  if (p < 1) throw ConfigError("p must be at least 1");
  if (!(alpha_a > 0.0) || !(alpha_b > 0.0)) throw ConfigError("alphas must be positive");
}

double ExperimentDesign::a(std::span<const double> z) const {
  return mean_a(experiment, dot(theta_a, z));
}
double ExperimentDesign::b(std::span<const double> z) const {
  return mean_b(experiment, dot(theta_b, z));
}
double ExperimentDesign::var_y(std::span<const double> z) const {
  return experiment <= 2 ? sd_u_a * sd_u_a : a(z);
}
double ExperimentDesign::var_d(std::span<const double> z) const {
  return experiment == 1 ? sd_u_b * sd_u_b : b(z);
}

ExperimentDesign make_design(int experiment, std::size_t p, double alpha_a, double alpha_b) {
  DgpConfig{experiment, 2, p, alpha_a, alpha_b, 0}.validate();
  ExperimentDesign d;
  d.experiment = experiment;
  d.p = p;
  d.alpha_a = alpha_a;
  d.alpha_b = alpha_b;
  d.sigma = toeplitz_sigma(p);
  Eigen::LLT<Matrix> llt(d.sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("cholesky", "Cholesky of Sigma failed");
  d.chol = llt.matrixL();

  const Vector base_a = theta_weak_sparse(p, alpha_a, 1.0, Parity::a);
  const Vector base_b = theta_weak_sparse(p, alpha_b, 1.0, Parity::b);
  const double qa = base_a.dot(d.sigma * base_a);
  const double qb = base_b.dot(d.sigma * base_b);
  const double log3 = std::log(3.0);
  switch (experiment) {
    case 1: d.c_a = 1.0; d.c_b = 1.0; break;
    case 2: d.c_a = 1.0; d.c_b = 1.0 / std::sqrt(log3 * qb); break;
    case 3: d.c_a = 1.0 / std::sqrt(log3 * qa); d.c_b = 1.0 / std::sqrt(log3 * qb); break;
    default: d.c_a = 1.0 / std::sqrt(log3 * qa); d.c_b = 1.0 / std::sqrt(qb); break;
  }
  d.theta_a = d.c_a * base_a;
  d.theta_b = d.c_b * base_b;
  if (experiment <= 2) d.sd_u_a = std::sqrt(d.theta_a.dot(d.sigma * d.theta_a) / 2.0);
  if (experiment == 1) d.sd_u_b = std::sqrt(d.theta_b.dot(d.sigma * d.theta_b) / 2.0);
  return d;
}

EstimandTruth closed_form_truth(const ExperimentDesign& d) {
  const Matrix& S = d.sigma;
  double chi = 0.0;
  switch (d.experiment) {
    case 1: chi = d.theta_a.dot(S * d.theta_b); break;
    case 2: {
      // Stein: E[V exp(W)] = Cov(V, W) exp(Var(W) / 2).
      chi = d.theta_a.dot(S * d.theta_b) * std::exp(0.5 * d.theta_b.dot(S * d.theta_b));
      break;
    }
    case 3: {
      const Vector s = d.theta_a + d.theta_b;
      chi = std::exp(0.5 * s.dot(S * s));
      break;
    }
    default: {
      // V = <theta_a, Z>, W = <theta_b / c_b, Z>, b = c_b^2 W^2.
      const Vector w = d.theta_b / d.c_b;
      const double var_v = d.theta_a.dot(S * d.theta_a);
      const double var_w = w.dot(S * w);
      const double cov_vw = d.theta_a.dot(S * w);
      chi = std::exp(0.5 * var_v) * d.c_b * d.c_b * (var_w + cov_vw * cov_vw);
      break;
    }
  }
  EstimandTruth t;
  t.chi = chi;
  t.method = EstimandTruth::Method::closed_form;
  return t;
}

EstimandTruth monte_carlo_truth(const ExperimentDesign& d, std::size_t draws, std::uint64_t seed,
                                int threads) {
  if (draws < 2) throw ConfigError("monte_carlo_truth needs at least 2 draws");
  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t chunks = (draws + kChunk - 1) / kChunk;
  // <theta, L g> = <L' theta, g>.
  const Vector la = d.chol.transpose() * d.theta_a;
  const Vector lb = d.chol.transpose() * d.theta_b;
  const auto p = static_cast<Eigen::Index>(d.p);
  std::vector<double> sums(chunks, 0.0), sq(chunks, 0.0);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Rng rng(derive_seed(seed, c));
    boost::random::normal_distribution<double> normal;
    const std::size_t count = std::min(kChunk, draws - c * kChunk);
    Vector g(p);
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) g[j] = normal(rng);
      const double v = mean_a(d.experiment, la.dot(g)) * mean_b(d.experiment, lb.dot(g));
      s += v;
      s2 += v * v;
    }
    sums[c] = s;
    sq[c] = s2;
  });
  double s = 0.0, s2 = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    s += sums[c];
    s2 += sq[c];
  }
  const double nd = static_cast<double>(draws);
  const double mean = s / nd;
  const double var = std::max(0.0, (s2 - nd * mean * mean) / (nd - 1.0));
  EstimandTruth t;
  t.chi = mean;
  t.method = EstimandTruth::Method::monte_carlo;
  t.draws = draws;
  t.seed = seed;
  t.standard_error = std::sqrt(var / nd);
  return t;
}

Dataset sample_experiment(const ExperimentDesign& d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  boost::random::normal_distribution<double> normal;
  const auto p = static_cast<Eigen::Index>(d.p);
  const auto rows = static_cast<Eigen::Index>(n);
  RowMatrix g(rows, p);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) g(i, j) = normal(rng);
  }
  RowMatrix z = g * d.chol.transpose();
  RowMatrix fields(rows, 2);
  const double rho = d.corr_u;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::span<const double> zi(z.row(i).data(), d.p);
    const double ua = dot(d.theta_a, zi);
    const double ub = dot(d.theta_b, zi);
    double y = 0.0, dd = 0.0;
    switch (d.experiment) {
      case 1: {
        const double e1 = normal(rng), e2 = normal(rng);
        y = ua + d.sd_u_a * e1;
        dd = ub + d.sd_u_b * (rho * e1 + std::sqrt(1.0 - rho * rho) * e2);
        break;
      }
      case 2:
        y = ua + d.sd_u_a * normal(rng);
        dd = draw_poisson(rng, mean_b(2, ub));
        break;
      default:
        y = draw_poisson(rng, mean_a(d.experiment, ua));
        dd = draw_poisson(rng, mean_b(d.experiment, ub));
        break;
    }
    fields(i, 0) = y;
    fields(i, 1) = dd;
  }
  return Dataset({"y", "d"}, std::move(fields), std::move(z));
}

std::pair<Dataset, EstimandTruth> gen_experiment(const DgpConfig& config) {
  config.validate();
  const ExperimentDesign d = make_design(config.experiment, config.p, config.alpha_a, config.alpha_b);
  return {sample_experiment(d, config.n, config.seed), closed_form_truth(d)};
}

MeasuredSnr measured_snr(const ExperimentDesign& d, std::size_t draws, std::uint64_t seed) {
  if (draws < 2) throw ConfigError("measured_snr needs at least 2 draws");
  Rng rng(seed);
  boost::random::normal_distribution<double> normal;
  const auto p = static_cast<Eigen::Index>(d.p);
  Vector g(p), z(p);
  std::vector<double> my(draws), md(draws);
  double vy = 0.0, vd = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) g[j] = normal(rng);
    z.noalias() = d.chol * g;
    const std::span<const double> zs(z.data(), d.p);
    my[i] = d.a(zs);
    md[i] = d.b(zs);
    vy += d.var_y(zs);
    vd += d.var_d(zs);
  }
  auto variance = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double nd = static_cast<double>(draws);
  return {variance(my) / (vy / nd), variance(md) / (vd / nd)};
}

const char* working_link(int experiment) { return experiment <= 2 ? "identity" : "exp"; }

NaiveEstimates naive_estimators(const Dataset& data, const Basis& basis,
                                const std::string& link_name, const FitConfig& config) {
  const FunctionalSpec spec = registry_get("expected_product");
  const LinkFunction lk = link(link_name);
  auto fit = [&](Target c, std::uint64_t stream) {
    FitConfig fc = config;
    fc.seed = derive_seed(config.seed, stream);
    const ProblemBuilder builder = [&](const Dataset& d) {
      return build_loss(spec, d, basis, c, lk);
    };
    PenalizedFit pf = fit_penalized(builder, data, fc);
    if (!pf.converged) throw SolverError(-1, std::string("naive fit of ") + to_string(c) +
                                                 " did not converge");
    return pf.theta;
  };
  const Vector ta = fit(Target::a, 0);
  const Vector tb = fit(Target::b, 1);

  const std::size_t n = data.rows();
  const Vector y = data.field("y");
  const Vector dd = data.field("d");
  std::vector<double> xa(n), xb(n), xab(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ai = lk.value(basis.predictor(ta, data.z(i)));
    const double bi = lk.value(basis.predictor(tb, data.z(i)));
    xa[i] = dd[static_cast<Eigen::Index>(i)] * ai;
    xb[i] = y[static_cast<Eigen::Index>(i)] * bi;
    xab[i] = ai * bi;
  }
  auto plug_in = [n](const std::vector<double>& x) {
    double s = 0.0, s2 = 0.0;
    for (double v : x) {
      s += v;
      s2 += v * v;
    }
    const double nd = static_cast<double>(n);
    const double m = s / nd;
    return NaiveEstimate{m, std::max(0.0, s2 / nd - m * m) / nd};
  };
  return {plug_in(xa), plug_in(xb), plug_in(xab)};
}

double score_at_truth(const ExperimentDesign& d, const Dataset& data) {
  const FunctionalSpec spec = registry_get("expected_product");
  const Basis basis = Basis::linear(d.p);
  const LossProblem problem =
      build_loss(spec, data, basis, Target::a, link(working_link(d.experiment)));
  return problem.grad(d.theta_a).cwiseAbs().maxCoeff();
}

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::dr_lin: return "dr_lin";
    case EstimatorKind::dr_nonlin: return "dr_nonlin";
    case EstimatorKind::dr_mix: return "dr_mix";
    case EstimatorKind::naive_a: return "naive_a";
    case EstimatorKind::naive_b: return "naive_b";
    case EstimatorKind::naive_ab: return "naive_ab";
  }
  return "?";
}

EstimatorKind parse_estimator(const std::string& name) {
  for (auto k : {EstimatorKind::dr_lin, EstimatorKind::dr_nonlin, EstimatorKind::dr_mix,
                 EstimatorKind::naive_a, EstimatorKind::naive_b, EstimatorKind::naive_ab}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown estimator '" + name + "'");
}

std::vector<EstimatorKind> default_estimators(int experiment) {
  std::vector<EstimatorKind> out;
  if (experiment <= 2) out.push_back(EstimatorKind::dr_lin);
  if (experiment == 2) out.push_back(EstimatorKind::dr_mix);
  if (experiment >= 3) out.push_back(EstimatorKind::dr_nonlin);
  out.insert(out.end(), {EstimatorKind::naive_a, EstimatorKind::naive_b, EstimatorKind::naive_ab});
  return out;
}

bool SimulationReport::valid() const {
  return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.valid; });
}

const ReportRow& SimulationReport::row(EstimatorKind kind) const {
  for (const auto& r : rows) {
    if (r.estimator == kind) return r;
  }
  throw ConfigError(std::string("estimator not in report: ") + to_string(kind));
}

ReportRow summarize(EstimatorKind kind, double truth, const std::vector<double>& estimates,
                    const std::vector<double>& std_errors, double ci_level) {
  ReportRow row;
  row.estimator = kind;
  row.reps = estimates.size();
  std::vector<double> est, se;
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    if (std::isfinite(estimates[r]) && std::isfinite(std_errors[r])) {
      est.push_back(estimates[r]);
      se.push_back(std_errors[r]);
    }
  }
  row.failed = estimates.size() - est.size();
  row.valid = static_cast<double>(row.failed) <= 0.01 * static_cast<double>(row.reps);
  if (est.empty()) {
    row.abs_bias = row.mc_sd = row.mean_se = row.coverage = kNaN;
    row.valid = false;
    return row;
  }
  const double m = static_cast<double>(est.size());
  const double mean = sorted_sum(est) / m;
  row.abs_bias = std::abs(mean - truth);
  if (est.size() > 1) {
    std::vector<double> dev(est.size());
    for (std::size_t i = 0; i < est.size(); ++i) dev[i] = (est[i] - mean) * (est[i] - mean);
    row.mc_sd = std::sqrt(sorted_sum(dev) / (m - 1.0));
  } else {
    row.mc_sd = kNaN;
  }
  row.mean_se = sorted_sum(se) / m;
  const boost::math::normal_distribution<double> normal;
  const double z = boost::math::quantile(normal, 0.5 * (1.0 + ci_level));
  std::size_t covered = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (std::abs(est[i] - truth) <= z * se[i]) ++covered;
  }
  row.coverage = static_cast<double>(covered) / m;
  return row;
}

SimulationReport run_monte_carlo(const SimulationConfig& config) {
  config.dgp.validate();
  config.fit.validate();
  if (config.reps < 1) throw ConfigError("reps must be at least 1");
  const auto kinds =
      config.estimators.empty() ? default_estimators(config.dgp.experiment) : config.estimators;
  const ExperimentDesign design =
      make_design(config.dgp.experiment, config.dgp.p, config.dgp.alpha_a, config.dgp.alpha_b);

  SimulationReport report;
  report.dgp = config.dgp;
  report.reps = config.reps;
  report.truth = closed_form_truth(design);
  report.snr = measured_snr(design, 100000, derive_seed(config.dgp.seed, ~std::uint64_t{0}));
  report.estimates.assign(config.reps, std::vector<double>(kinds.size(), kNaN));
  report.std_errors.assign(config.reps, std::vector<double>(kinds.size(), kNaN));

  const Basis basis = Basis::linear(design.p);
  const FunctionalSpec spec = registry_get("expected_product");
  const LinkFunction identity = link("identity");
  const LinkFunction exp_link = link("exp");
  const std::string naive_link = working_link(config.dgp.experiment);

  parallel_for(config.reps, config.threads, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(config.dgp.seed, r);
    Dataset data = sample_experiment(design, config.dgp.n, derive_seed(rep_seed, 0));
    CrossfitConfig cf;
    cf.fit = config.fit;
    cf.seed = derive_seed(rep_seed, 1);
    cf.ci_level = config.ci_level;
    cf.threads = 1;
    bool naive_done = false;
    NaiveEstimates naive{};
    bool naive_ok = false;
    for (std::size_t e = 0; e < kinds.size(); ++e) {
      double est = kNaN, se = kNaN;
      try {
        switch (kinds[e]) {
          case EstimatorKind::dr_lin:
          case EstimatorKind::dr_nonlin:
          case EstimatorKind::dr_mix: {
            const LinkFunction& la = kinds[e] == EstimatorKind::dr_nonlin ? exp_link : identity;
            const LinkFunction& lb = kinds[e] == EstimatorKind::dr_lin ? identity : exp_link;
            const auto res = estimate(spec, data, basis, la, lb, cf);
            est = res.chi_hat;
            se = res.standard_error();
            break;
          }
          default: {
            if (!naive_done) {
              naive_done = true;
              try {
                FitConfig fc = config.fit;
                fc.seed = derive_seed(rep_seed, 2);
                naive = naive_estimators(data, basis, naive_link, fc);
                naive_ok = true;
              } catch (const Error&) {
                naive_ok = false;
              }
            }
            if (naive_ok) {
              const NaiveEstimate& ne = kinds[e] == EstimatorKind::naive_a   ? naive.a
                                        : kinds[e] == EstimatorKind::naive_b ? naive.b
                                                                             : naive.ab;
              est = ne.estimate;
              se = std::sqrt(ne.variance);
            }
            break;
          }
        }
      } catch (const Error&) {
        est = se = kNaN;
      }
      report.estimates[r][e] = est;
      report.std_errors[r][e] = se;
    }
  });

  for (std::size_t e = 0; e < kinds.size(); ++e) {
    std::vector<double> est(config.reps), se(config.reps);
    for (std::size_t r = 0; r < config.reps; ++r) {
      est[r] = report.estimates[r][e];
      se[r] = report.std_errors[r][e];
    }
    report.rows.push_back(summarize(kinds[e], report.truth.chi, est, se, config.ci_level));
  }
  return report;
}

void write_report_csv(const SimulationReport& report, std::ostream& out, bool header) {
  if (header) {
    out << "experiment,alpha_a,alpha_b,n,p,reps,estimator,abs_bias,mc_sd,mean_se,coverage_95,"
           "failed_reps,seed\n";
  }
  const auto old_precision = out.precision(17);
  for (const auto& r : report.rows) {
    out << report.dgp.experiment << ',' << report.dgp.alpha_a << ',' << report.dgp.alpha_b << ','
        << report.dgp.n << ',' << report.dgp.p << ',' << r.reps << ',' << to_string(r.estimator)
        << ',' << r.abs_bias << ',' << r.mc_sd << ',' << r.mean_se << ',' << r.coverage << ','
        << r.failed << ',' << report.dgp.seed << '\n';
  }
  out.precision(old_precision);
}

}  // namespace bifdr
