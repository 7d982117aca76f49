#pragma once

#include "bifdr/basis.hpp"
#include "bifdr/dataset.hpp"
#include "bifdr/functional.hpp"
#include "bifdr/links.hpp"
#include "bifdr/solver.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace bifdr {

struct FoldPlan {
  int k = 0;
  std::vector<int> assignment;  ///< fold index of every row
  std::uint64_t seed = 0;

  std::size_t rows() const { return assignment.size(); }
  /// Rows of fold f in increasing order.
  std::vector<std::size_t> members(int f) const;
  /// Rows outside fold f in increasing order.
  std::vector<std::size_t> complement(int f) const;
};

/// Seeded shuffle then contiguous blocks, remainder round-robin. Throws
/// ConfigError when n < 2k or k < 2.
FoldPlan split_folds(std::size_t n, int k, std::uint64_t seed);

enum class Algorithm { lin, nonlin, mix };
const char* to_string(Algorithm a);
/// Both identity -> lin, neither identity -> nonlin, otherwise mix.
Algorithm select_algorithm(const LinkFunction& link_a, const LinkFunction& link_b);

struct CrossfitConfig {
  /// Lambda rule and solver settings for every nuisance fit. Its seed is ignored:
  /// each fit gets a seed derived from `seed` and the rows it is trained on.
  FitConfig fit;
  /// 0 picks 2 for lin and 3 otherwise.
  int folds = 0;
  double ci_level = 0.95;
  std::uint64_t seed = 0;
  /// Workers for independent nuisance fits. Results do not depend on it.
  int threads = 1;
};

/// One penalized fit made while cross-fitting.
struct NuisanceFit {
  Target target = Target::a;
  /// "full" (w = 1 on a complement), "stage1" (w = 1 on one fold) or "stage2"
  /// (weighted fit on `train_fold` with weights from `weight_fold`).
  std::string stage;
  int train_fold = -1;   ///< -1 for complement fits
  int heldout_fold = -1; ///< fold excluded from a complement fit
  int weight_fold = -1;
  Vector theta;
  double lambda = 0.0;
  double kkt_residual = 0.0;
  int iters = 0;
  std::size_t clamped_rows = 0;         ///< predictor outside the exp clamp
  std::size_t weight_clamped_rows = 0;  ///< weight argument outside the clamp
};

struct CrossfitEstimate {
  Algorithm algorithm = Algorithm::lin;
  std::string functional;
  double chi_hat = 0.0;
  /// Variance of Upsilon (not of chi_hat): pooled within-fold second moment.
  double v_hat = 0.0;
  std::size_t n = 0;
  double ci_level = 0.95;
  std::array<double, 2> ci{};
  std::vector<double> per_fold_chi;
  FoldPlan plan;
  std::vector<NuisanceFit> fits;
  /// Coefficients used on the main fold k: theta_a[k], theta_b[k].
  std::vector<Vector> theta_a;
  std::vector<Vector> theta_b;
  /// Upsilon at the fold-specific nuisances, one entry per row.
  Vector upsilon;
  std::size_t clamped_rows = 0;
  std::uint64_t seed = 0;

  double standard_error() const;
};

/// chi_hat -/+ z_{(1+level)/2} sqrt(v_hat / n).
std::array<double, 2> wald_ci(double chi_hat, double v_hat, std::size_t n, double level);

CrossfitEstimate estimate_lin(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const CrossfitConfig& config);
CrossfitEstimate estimate_lin(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const CrossfitConfig& config, const FoldPlan& plan);

CrossfitEstimate estimate_nonlin(const FunctionalSpec& spec, const Dataset& data,
                                 const Basis& basis, const LinkFunction& link_a,
                                 const LinkFunction& link_b, const CrossfitConfig& config);
CrossfitEstimate estimate_nonlin(const FunctionalSpec& spec, const Dataset& data,
                                 const Basis& basis, const LinkFunction& link_a,
                                 const LinkFunction& link_b, const CrossfitConfig& config,
                                 const FoldPlan& plan);

/// Exactly one of the links is the identity. The nonlinear nuisance is fitted on
/// the two nuisance folds combined; the linear one is averaged over the two
/// nuisance folds with weights from a preliminary fit on the other fold.
CrossfitEstimate estimate_mix(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const LinkFunction& link_a, const LinkFunction& link_b,
                              const CrossfitConfig& config);
CrossfitEstimate estimate_mix(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                              const LinkFunction& link_a, const LinkFunction& link_b,
                              const CrossfitConfig& config, const FoldPlan& plan);

/// Dispatches on select_algorithm.
CrossfitEstimate estimate(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                          const LinkFunction& link_a, const LinkFunction& link_b,
                          const CrossfitConfig& config);
CrossfitEstimate estimate(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                          const LinkFunction& link_a, const LinkFunction& link_b,
                          const CrossfitConfig& config, const FoldPlan& plan);

/// chi_1 - chi_2 of the two ate_arm functionals fitted on the same folds. The
/// variance uses the per-row difference of the two Upsilon terms.
struct AteEstimate {
  CrossfitEstimate treated;
  CrossfitEstimate control;
  double chi_hat = 0.0;
  double v_hat = 0.0;
  std::array<double, 2> ci{};
};
AteEstimate estimate_ate(const Dataset& data, const Basis& basis, const LinkFunction& link_a,
                         const LinkFunction& link_b, const CrossfitConfig& config);

/// Result in the JSON layout {algorithm, functional, chi_hat, v_hat, n, ci_level,
/// ci, per_fold_chi, lambda_per_fit, kkt_residual_per_fit, clamped_rows, seed}.
std::string to_json(const CrossfitEstimate& est, int indent = 2);

}  // namespace bifdr
