#pragma once

#include "bifdr/dataset.hpp"
#include "bifdr/loss.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace bifdr {

struct LambdaFixed {
  double value = 0.0;
};
/// lambda = c * sqrt(log(p) / n).
struct LambdaRate {
  double c = 1.0;
};
/// K-fold cross-validation over a geometric grid from lambda_max down to
/// lambda_max * min_ratio.
struct LambdaCV {
  int folds = 10;
  int n_lambdas = 100;
  double min_ratio = 1e-3;
};
using LambdaRule = std::variant<LambdaFixed, LambdaRate, LambdaCV>;

/// Parses the CLI form: "<value>", "rate:<c>" or "cv".
LambdaRule parse_lambda_rule(std::string_view text, int cv_folds = 10);
std::string describe(const LambdaRule& rule);

struct FitConfig {
  LambdaRule lambda = LambdaCV{};
  double tol_kkt = 1e-7;
  int max_iter = 10000;
  double backtrack_beta = 0.5;
  std::uint64_t seed = 0;
  /// Workers for the cross-validation folds. Results do not depend on it.
  int threads = 1;

  /// Throws ConfigError on out-of-range settings.
  void validate() const;
};

struct PenalizedFit {
  Vector theta;
  double lambda_used = 0.0;
  int iters = 0;
  double kkt_residual = 0.0;
  /// Penalized objective L(theta) + lambda * ||theta||_1.
  double objective = 0.0;
  bool converged = false;
  std::size_t clamped_rows = 0;
};

double soft_threshold(double x, double t);

/// c * sqrt(log(p) / n).
double default_lambda(double n, double p, double c = 1.0);

/// Largest stationarity violation of min L(theta) + lambda ||theta||_1:
/// max(|g_j| - lambda, 0) where theta_j = 0, |g_j + lambda sign(theta_j)|
/// elsewhere, and |g_j| on unpenalized coordinates.
double kkt_residual(const LossProblem& problem, const Vector& theta, double lambda);
double kkt_residual(const LossProblem& problem, const Vector& theta, const Vector& grad,
                    double lambda);

/// Smallest lambda for which theta = 0 is optimal: max |grad_j(0)| over
/// penalized coordinates.
double lambda_max(const LossProblem& problem);

/// Called after every accepted proximal step with the penalized objective.
using StepObserver = std::function<void(int iter, double objective)>;

/// Accelerated proximal gradient with backtracking and a monotone safeguard:
/// an extrapolated step that would raise the penalized objective is discarded
/// and replaced by a plain proximal step from the current iterate. Stops when the
/// KKT residual is <= tol_kkt. On max_iter the best iterate is returned with
/// converged = false.
PenalizedFit fit_l1(const LossProblem& problem, double lambda, const FitConfig& config,
                    const Vector* warm_start = nullptr, const StepObserver& observer = {});

/// Fixed or rate lambda taken from `config`; throws ConfigError for CV (which
/// needs a problem builder, see fit_penalized).
PenalizedFit fit_l1(const LossProblem& problem, const FitConfig& config);

/// Rebuilds the loss on a subset of rows (used for CV folds).
using ProblemBuilder = std::function<LossProblem(const Dataset&)>;

struct CvPath {
  std::vector<double> lambdas;    ///< decreasing
  std::vector<double> criterion;  ///< out-of-fold mean of the unpenalized oriented loss
  std::size_t best = 0;
  double lambda = 0.0;
  int usable_folds = 0;
};

CvPath cv_lambda_path(const ProblemBuilder& build, const Dataset& data, const FitConfig& config);
/// Grid point with the smallest CV criterion; ties go to the larger lambda.
double cv_lambda(const ProblemBuilder& build, const Dataset& data, const FitConfig& config);

/// Resolves lambda from the config (running CV when requested) and fits on `data`.
PenalizedFit fit_penalized(const ProblemBuilder& build, const Dataset& data,
                           const FitConfig& config);

}  // namespace bifdr
