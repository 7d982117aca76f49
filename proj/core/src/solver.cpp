#include "bifdr/solver.hpp"

#include "bifdr/error.hpp"
#include "bifdr/parallel.hpp"
#include "bifdr/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

namespace bifdr {

namespace {

double l1_norm(const Vector& theta, const std::vector<bool>& penalized) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    if (penalized[static_cast<std::size_t>(j)]) s += std::abs(theta[j]);
  }
  return s;
}

void prox_step(const Vector& y, const Vector& grad, double step, double lambda,
               const std::vector<bool>& penalized, Vector& out) {
  out = y - step * grad;
  const double t = step * lambda;
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    if (penalized[static_cast<std::size_t>(j)]) out[j] = soft_threshold(out[j], t);
  }
}

double parse_number(std::string_view text, const char* what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(std::string("cannot parse ") + what + " from '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

LambdaRule parse_lambda_rule(std::string_view text, int cv_folds) {
  if (text == "cv") return LambdaCV{cv_folds, 100, 1e-3};
  if (text.starts_with("rate:")) {
    const double c = parse_number(text.substr(5), "lambda rate constant");
    if (!(c > 0.0)) throw ConfigError("lambda rate constant must be positive");
    return LambdaRate{c};
  }
  if (text == "rate") return LambdaRate{1.0};
  const double v = parse_number(text, "lambda");
  if (v < 0.0) throw ConfigError("lambda must be non-negative");
  return LambdaFixed{v};
}

std::string describe(const LambdaRule& rule) {
  std::ostringstream os;
  os.precision(17);
  std::visit(
      [&os](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, LambdaFixed>) {
          os << r.value;
        } else if constexpr (std::is_same_v<T, LambdaRate>) {
          os << "rate:" << r.c;
        } else {
          os << "cv";
        }
      },
      rule);
  return os.str();
}

void FitConfig::validate() const {
  if (!(tol_kkt > 0.0)) throw ConfigError("tol_kkt must be positive");
  if (!(backtrack_beta > 0.0 && backtrack_beta < 1.0)) {
    throw ConfigError("backtrack_beta must lie in (0, 1)");
  }
  if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (const auto* cv = std::get_if<LambdaCV>(&lambda)) {
    if (cv->folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (cv->n_lambdas < 1) throw ConfigError("cross-validation needs at least one lambda");
    if (!(cv->min_ratio > 0.0 && cv->min_ratio <= 1.0)) {
      throw ConfigError("lambda_min_ratio must lie in (0, 1]");
    }
  }
  if (const auto* f = std::get_if<LambdaFixed>(&lambda); f && !(f->value >= 0.0)) {
    throw ConfigError("fixed lambda must be non-negative");
  }
  if (const auto* r = std::get_if<LambdaRate>(&lambda); r && !(r->c > 0.0)) {
    throw ConfigError("lambda rate constant must be positive");
  }
}

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

double default_lambda(double n, double p, double c) {
  if (!(n > 0.0) || !(p >= 1.0) || !(c > 0.0)) {
    throw ConfigError("default_lambda needs n > 0, p >= 1 and c > 0");
  }
  return c * std::sqrt(std::log(p) / n);
}

double kkt_residual(const LossProblem& problem, const Vector& theta, const Vector& grad,
                    double lambda) {
  double worst = 0.0;
  const auto& penalized = problem.penalized();
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    double r;
    if (!penalized[static_cast<std::size_t>(j)]) {
      r = std::abs(grad[j]);
    } else if (theta[j] == 0.0) {
      r = std::max(std::abs(grad[j]) - lambda, 0.0);
    } else {
      r = std::abs(grad[j] + (theta[j] > 0.0 ? lambda : -lambda));
    }
    worst = std::max(worst, r);
  }
  return worst;
}

double kkt_residual(const LossProblem& problem, const Vector& theta, double lambda) {
  return kkt_residual(problem, theta, problem.grad(theta), lambda);
}

double lambda_max(const LossProblem& problem) {
  const Vector g = problem.grad(Vector::Zero(problem.dim()));
  double m = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    if (problem.penalized()[static_cast<std::size_t>(j)]) m = std::max(m, std::abs(g[j]));
  }
  return m;
}

namespace {

struct DenseResult {
  Vector x;
  double objective = 0.0;
  double kkt = 0.0;
  int iters = 0;
  bool converged = false;
};

// Accelerated proximal gradient on all coordinates of `problem`, at most
// `budget` iterations. Observer iteration numbers start after `offset`.
DenseResult solve_dense(const LossProblem& problem, double lambda, const FitConfig& config,
                        Vector x, int offset, int budget, const StepObserver& observer) {
  const auto& penalized = problem.penalized();
  const double beta = config.backtrack_beta;

  DenseResult out;
  Vector gx;
  double fx = problem.value_and_grad(x, gx);
  double Fx = fx + lambda * l1_norm(x, penalized);
  out.kkt = kkt_residual(problem, x, gx, lambda);
  if (out.kkt <= config.tol_kkt) {
    out.x = std::move(x);
    out.objective = Fx;
    out.converged = true;
    return out;
  }

  const double curvature = problem.curvature_estimate(x);
  double step = curvature > 0.0 ? 1.0 / curvature : 1.0;
  const double max_step = problem.quadratic() ? step : 1e3 * step;
  const bool grow = !problem.quadratic();

  Vector x_prev = x;
  Vector y = x, gy = gx, z, gz;
  double fy = fx;
  double momentum = 1.0;
  int iter = 0;
  for (iter = 1; iter <= budget; ++iter) {
    // Backtracking on the quadratic upper bound at y.
    bool accepted = false;
    double fz = 0.0;
    bool shrunk = false;
    for (int bt = 0; bt < 200; ++bt) {
      prox_step(y, gy, step, lambda, penalized, z);
      const Vector d = z - y;
      try {
        fz = problem.value_and_grad(z, gz);
        // Near the optimum f(z) - f(y) is lost to rounding, so the gradient form
        // of the bound (sufficient by convexity) is accepted as well.
        const double q = d.squaredNorm() / (2.0 * step);
        if (fz - fy - gy.dot(d) <= q || (gz - gy).dot(d) <= q) {
          accepted = true;
          break;
        }
      } catch (const NumericalError&) {
        // Overflowing trial point: shrink the step.
      }
      step *= beta;
      shrunk = true;
    }
    if (!accepted) {
      throw NumericalError("step", "backtracking failed to find a descent step");
    }

    const double Fz = fz + lambda * l1_norm(z, penalized);
    const bool extrapolated = momentum > 1.0;
    // A plain proximal step from x never increases F in exact arithmetic, so it
    // is taken even when rounding says otherwise.
    if (Fz <= Fx || !extrapolated) {
      x_prev = x;
      x = z;
      gx = gz;
      fx = fz;
      Fx = Fz;
      if (observer) observer(offset + iter, Fx);
      out.kkt = kkt_residual(problem, x, gx, lambda);
      if (out.kkt <= config.tol_kkt) {
        out.converged = true;
        break;
      }
      const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      bool restart = (y - z).dot(z - x_prev) > 0.0;
      if (!restart) {
        y = x + ((momentum - 1.0) / next) * (x - x_prev);
        try {
          fy = problem.value_and_grad(y, gy);
          momentum = next;
        } catch (const NumericalError&) {
          restart = true;
        }
      }
      // Restart momentum when it points against the gradient step.
      if (restart) {
        momentum = 1.0;
        y = x;
        gy = gx;
        fy = fx;
      }
    } else {
      // Extrapolated point overshot; take a plain step from x next.
      momentum = 1.0;
      y = x;
      gy = gx;
      fy = fx;
    }
    if (grow && !shrunk) step = std::min(step / std::sqrt(beta), max_step);
  }
  out.x = std::move(x);
  out.objective = Fx;
  out.iters = std::min(iter, budget);
  return out;
}

}  // namespace

PenalizedFit fit_l1(const LossProblem& problem, double lambda, const FitConfig& config,
                    const Vector* warm_start, const StepObserver& observer) {
  config.validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  const Eigen::Index p = problem.dim();
  const auto& penalized = problem.penalized();

  Vector x = warm_start && warm_start->size() == p ? *warm_start : Vector::Zero(p);
  Vector g;
  double f = problem.value_and_grad(x, g);

  PenalizedFit fit;
  fit.lambda_used = lambda;
  // Expects f and g evaluated at x.
  auto finish = [&] {
    fit.theta = x;
    fit.objective = f + lambda * l1_norm(x, penalized);
    fit.kkt_residual = kkt_residual(problem, x, g, lambda);
    fit.converged = fit.kkt_residual <= config.tol_kkt;
    fit.clamped_rows = problem.clamped_rows(x);
    return fit;
  };
  if (kkt_residual(problem, x, g, lambda) <= config.tol_kkt) return finish();

  // Working set: iterate on the nonzero and KKT-violating coordinates only,
  // then certify with the full gradient and grow the set if needed. The final
  // certificate is always the full KKT residual.
  std::vector<bool> in_set(static_cast<std::size_t>(p), false);
  auto add_violators = [&]() {
    bool added = false;
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      if (in_set[jj]) continue;
      if (!penalized[jj] || x[j] != 0.0 || std::abs(g[j]) > lambda) {
        in_set[jj] = true;
        added = true;
      }
    }
    return added;
  };
  add_violators();

  int used = 0;
  while (true) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (in_set[static_cast<std::size_t>(j)]) cols.push_back(j);
    }
    const bool full = 2 * static_cast<Eigen::Index>(cols.size()) > p;
    DenseResult r;
    if (full) {
      r = solve_dense(problem, lambda, config, x, used, config.max_iter - used, observer);
      x = r.x;
    } else {
      const LossProblem sub = problem.restricted(cols);
      Vector xs(static_cast<Eigen::Index>(cols.size()));
      for (std::size_t k = 0; k < cols.size(); ++k) xs[static_cast<Eigen::Index>(k)] = x[cols[k]];
      r = solve_dense(sub, lambda, config, std::move(xs), used, config.max_iter - used, observer);
      for (std::size_t k = 0; k < cols.size(); ++k) x[cols[k]] = r.x[static_cast<Eigen::Index>(k)];
    }
    used += r.iters;
    fit.iters = used;
    f = problem.value_and_grad(x, g);
    if (!r.converged || full || used >= config.max_iter ||
        kkt_residual(problem, x, g, lambda) <= config.tol_kkt) {
      return finish();
    }
    if (!add_violators()) {
      // Only rounding differences between the restricted and full gradients
      // remain; finish on the full problem.
      std::fill(in_set.begin(), in_set.end(), true);
    }
  }
}

PenalizedFit fit_l1(const LossProblem& problem, const FitConfig& config) {
  if (const auto* f = std::get_if<LambdaFixed>(&config.lambda)) {
    return fit_l1(problem, f->value, config);
  }
  if (const auto* r = std::get_if<LambdaRate>(&config.lambda)) {
    return fit_l1(problem,
                  default_lambda(static_cast<double>(problem.rows()),
                                 static_cast<double>(problem.dim()), r->c),
                  config);
  }
  throw ConfigError("cross-validated lambda needs a problem builder; use fit_penalized");
}

CvPath cv_lambda_path(const ProblemBuilder& build, const Dataset& data, const FitConfig& config) {
  config.validate();
  const auto* cv = std::get_if<LambdaCV>(&config.lambda);
  if (!cv) throw ConfigError("cv_lambda_path requires a cross-validation lambda rule");
  const std::size_t n = data.rows();
  if (static_cast<std::size_t>(cv->folds) > n) {
    throw ConfigError("more CV folds than rows");
  }

  const LossProblem full = build(data);
  const double top = lambda_max(full);
  CvPath path;
  const int m = cv->n_lambdas;
  if (m == 1) {
    path.lambdas = {top * cv->min_ratio};
    path.criterion = {std::numeric_limits<double>::quiet_NaN()};
    path.lambda = path.lambdas[0];
    return path;
  }
  path.lambdas.resize(static_cast<std::size_t>(m));
  for (int l = 0; l < m; ++l) {
    path.lambdas[static_cast<std::size_t>(l)] =
        top * std::pow(cv->min_ratio, static_cast<double>(l) / static_cast<double>(m - 1));
  }

  const int k = cv->folds;
  const auto fold_of = assign_folds(n, k, config.seed);
  std::vector<std::vector<double>> fold_crit(static_cast<std::size_t>(k));
  std::vector<std::size_t> fold_rows(static_cast<std::size_t>(k), 0);
  std::vector<char> usable(static_cast<std::size_t>(k), 0);

  FitConfig inner = config;
  inner.lambda = LambdaFixed{0.0};
  parallel_for(static_cast<std::size_t>(k), config.threads, [&](std::size_t f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) {
      (fold_of[i] == static_cast<int>(f) ? test : train).push_back(i);
    }
    fold_rows[f] = test.size();
    try {
      const LossProblem train_problem = build(data.subset(train));
      const LossProblem test_problem = build(data.subset(test));
      std::vector<double> crit(path.lambdas.size());
      Vector theta = Vector::Zero(train_problem.dim());
      for (std::size_t l = 0; l < path.lambdas.size(); ++l) {
        const auto fit = fit_l1(train_problem, path.lambdas[l], inner, &theta);
        theta = fit.theta;
        crit[l] = test_problem.value(theta);
      }
      fold_crit[f] = std::move(crit);
      usable[f] = 1;
    } catch (const Error&) {
      usable[f] = 0;
    }
  });

  std::size_t total_rows = 0;
  path.criterion.assign(path.lambdas.size(), 0.0);
  for (int f = 0; f < k; ++f) {
    if (!usable[static_cast<std::size_t>(f)]) continue;
    ++path.usable_folds;
    total_rows += fold_rows[static_cast<std::size_t>(f)];
    for (std::size_t l = 0; l < path.lambdas.size(); ++l) {
      path.criterion[l] += static_cast<double>(fold_rows[static_cast<std::size_t>(f)]) *
                           fold_crit[static_cast<std::size_t>(f)][l];
    }
  }
  if (path.usable_folds < 2) {
    throw SolverError(-1, "cross-validation: fewer than 2 usable folds");
  }
  for (double& c : path.criterion) c /= static_cast<double>(total_rows);
  path.best = 0;
  for (std::size_t l = 1; l < path.criterion.size(); ++l) {
    if (path.criterion[l] < path.criterion[path.best]) path.best = l;
  }
  path.lambda = path.lambdas[path.best];
  return path;
}

double cv_lambda(const ProblemBuilder& build, const Dataset& data, const FitConfig& config) {
  return cv_lambda_path(build, data, config).lambda;
}

PenalizedFit fit_penalized(const ProblemBuilder& build, const Dataset& data,
                           const FitConfig& config) {
  config.validate();
  if (std::holds_alternative<LambdaCV>(config.lambda)) {
    const double lambda = cv_lambda(build, data, config);
    return fit_l1(build(data), lambda, config);
  }
  return fit_l1(build(data), config);
}

}  // namespace bifdr
