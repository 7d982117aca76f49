#pragma once

#include "bifdr/basis.hpp"
#include "bifdr/crossfit.hpp"
#include "bifdr/dataset.hpp"
#include "bifdr/functional.hpp"
#include "bifdr/solver.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace bifdr {

/// Sigma_ij = 0.1^|i-j|.
Matrix toeplitz_sigma(std::size_t p, double rho = 0.1);

enum class Parity { a, b };
/// theta_j = c j^-alpha (-1)^j for parity a and c j^-alpha (-1)^(j+1) for b,
/// j = 1..p.
Vector theta_weak_sparse(std::size_t p, double alpha, double c, Parity parity);

struct DgpConfig {
  int experiment = 1;  ///< 1..5; 5 is experiment 4 with p = 100
  std::size_t n = 1000;
  std::size_t p = 100;
  double alpha_a = 5.0;
  double alpha_b = 5.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an unknown experiment or non-positive sizes.
  void validate() const;
};

/// Everything about one scenario that does not depend on the sample: the
/// covariance and its Cholesky factor, the scaled coefficient vectors, the
/// constants c_a, c_b and the closed-form truth.
struct ExperimentDesign {
  int experiment = 1;
  std::size_t p = 0;
  double alpha_a = 0.0;
  double alpha_b = 0.0;
  Matrix sigma;
  Matrix chol;    ///< lower factor, sigma = chol chol'
  double c_a = 1.0;
  double c_b = 1.0;
  Vector theta_a; ///< c_a * base vector
  Vector theta_b; ///< c_b * base vector
  /// Noise standard deviations of experiment 1 (and U_a of experiment 2).
  double sd_u_a = 0.0;
  double sd_u_b = 0.0;
  double corr_u = 0.1;

  /// E[Y | Z] and E[D | Z].
  double a(std::span<const double> z) const;
  double b(std::span<const double> z) const;
  /// Var(Y | Z) and Var(D | Z).
  double var_y(std::span<const double> z) const;
  double var_d(std::span<const double> z) const;
};

ExperimentDesign make_design(int experiment, std::size_t p, double alpha_a, double alpha_b);

/// chi = E[a(Z) b(Z)] in closed form.
EstimandTruth closed_form_truth(const ExperimentDesign& design);
/// Plain Monte Carlo average of a(Z) b(Z) over `draws` fresh draws of Z.
/// The draws are split into fixed chunks, so the result does not depend on
/// `threads`.
EstimandTruth monte_carlo_truth(const ExperimentDesign& design, std::size_t draws,
                                std::uint64_t seed, int threads = 1);

/// n rows with fields y, d and covariates z1..zp.
Dataset sample_experiment(const ExperimentDesign& design, std::size_t n, std::uint64_t seed);
std::pair<Dataset, EstimandTruth> gen_experiment(const DgpConfig& config);

/// Var(E[. | Z]) / E[Var(. | Z)] estimated from `draws` draws of Z.
struct MeasuredSnr {
  double y = 0.0;
  double d = 0.0;
};
MeasuredSnr measured_snr(const ExperimentDesign& design, std::size_t draws, std::uint64_t seed);

/// The a-link used by the working models: identity for experiments 1-2, exp for 3-5.
const char* working_link(int experiment);

struct NaiveEstimate {
  double estimate = 0.0;
  double variance = 0.0;  ///< already divided by n
};
struct NaiveEstimates {
  NaiveEstimate a;   ///< P_n[D a_N]
  NaiveEstimate b;   ///< P_n[Y b_N]
  NaiveEstimate ab;  ///< P_n[a_N b_N]
};
/// Full-sample fits of a and b (w = 1, no splitting) with `link_name`, then the
/// three plug-in estimators with their ad-hoc variances.
NaiveEstimates naive_estimators(const Dataset& data, const Basis& basis,
                                const std::string& link_name, const FitConfig& config);

/// ||grad of the expected_product a-loss at the true theta_a||_inf.
double score_at_truth(const ExperimentDesign& design, const Dataset& data);

enum class EstimatorKind { dr_lin, dr_nonlin, dr_mix, naive_a, naive_b, naive_ab };
const char* to_string(EstimatorKind kind);
EstimatorKind parse_estimator(const std::string& name);
/// DR estimators used by each experiment plus the three naive estimators.
std::vector<EstimatorKind> default_estimators(int experiment);

struct SimulationConfig {
  DgpConfig dgp;
  std::size_t reps = 300;
  std::vector<EstimatorKind> estimators;  ///< empty = default_estimators
  FitConfig fit;                          ///< lambda rule for every nuisance fit
  double ci_level = 0.95;
  int threads = 1;
};

struct ReportRow {
  EstimatorKind estimator = EstimatorKind::dr_lin;
  double abs_bias = 0.0;
  double mc_sd = 0.0;       ///< NaN with a single successful replicate
  double mean_se = 0.0;
  double coverage = 0.0;
  std::size_t reps = 0;     ///< requested
  std::size_t failed = 0;
  bool valid = true;        ///< failed <= 1% of reps
};

struct SimulationReport {
  DgpConfig dgp;
  std::size_t reps = 0;
  EstimandTruth truth;
  MeasuredSnr snr;
  std::vector<ReportRow> rows;
  /// Per replicate and estimator (same order as rows): estimate, standard error
  /// and whether it succeeded. Kept for diagnostics and tests.
  std::vector<std::vector<double>> estimates;
  std::vector<std::vector<double>> std_errors;

  bool valid() const;
  const ReportRow& row(EstimatorKind kind) const;
};

/// Replicate r draws its data and fold seeds from derive_seed(dgp.seed, r), so
/// the report does not depend on `threads` or on scheduling.
SimulationReport run_monte_carlo(const SimulationConfig& config);

/// Metrics from per-replicate estimates; NaN entries count as failures. Sums run
/// over sorted values, so the result does not depend on replicate order.
ReportRow summarize(EstimatorKind kind, double truth, const std::vector<double>& estimates,
                    const std::vector<double>& std_errors, double ci_level);

/// One CSV row per estimator with columns experiment, alpha_a, alpha_b, n, p,
/// reps, estimator, abs_bias, mc_sd, mean_se, coverage_95, failed_reps, seed.
void write_report_csv(const SimulationReport& report, std::ostream& out, bool header = true);

}  // namespace bifdr
