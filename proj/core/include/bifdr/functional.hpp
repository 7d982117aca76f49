#pragma once

#include "bifdr/dataset.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bifdr {

/// Real-valued function of the covariate vector.
using CovariateFunction = std::function<double(std::span<const double> z)>;
using ObservationFunction = std::function<double(const Observation&)>;

enum class Target { a, b };
inline Target other(Target c) { return c == Target::a ? Target::b : Target::a; }
inline const char* to_string(Target c) { return c == Target::a ? "a" : "b"; }

enum class Sign { nonnegative, nonpositive };

/// One term of a linear functional: coef * h(z).
struct EvalAtom {
  std::vector<double> z;
  double coef = 0.0;
};

/// A map h -> m(O, h) that is linear in h. Every shipped map is a finite
/// combination of point evaluations of h, which makes linearity structural.
/// Pointwise maps, m(O, h) = g(O) * h(Z), get a fast path.
class LinearMap {
 public:
  using Expander = std::function<void(const Observation&, std::vector<EvalAtom>&)>;

  static LinearMap pointwise(ObservationFunction multiplier);
  static LinearMap atoms(Expander expand);

  bool is_pointwise() const { return static_cast<bool>(multiplier_); }
  /// g(O) of a pointwise map.
  double multiplier(const Observation& o) const;
  /// Appends the atoms of m(O, .) to `out` (a pointwise map yields one atom at Z).
  void expand(const Observation& o, std::vector<EvalAtom>& out) const;
  double apply(const Observation& o, const CovariateFunction& h) const;

 private:
  ObservationFunction multiplier_;
  Expander expand_;
};

/// A functional whose influence function is
/// S_ab a(Z) b(Z) + m_a(O, a) + m_b(O, b) + S_0 - chi.
struct FunctionalSpec {
  std::string name;
  ObservationFunction s_ab;
  ObservationFunction s_0;
  LinearMap m_a;
  LinearMap m_b;
  Sign sign = Sign::nonpositive;
  std::vector<std::string> required_fields;

  const LinearMap& map(Target c) const { return c == Target::a ? m_a : m_b; }
  int sign_value() const { return sign == Sign::nonnegative ? 1 : -1; }

  /// Throws DataError when a required field is missing from `data`.
  void check_fields(const Dataset& data) const;
  /// Throws DataError naming the first row whose S_ab has the wrong sign.
  void check_sign(const Dataset& data) const;
};

/// Nodes and weights of a quadrature rule on [0, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule mapped to [0, 1]. Supported n: 16, 32, 64.
QuadratureRule gauss_legendre_unit(std::size_t points = 64);

struct RegistryOptions {
  /// Exponential tilt for mnar_mean.
  std::optional<double> delta;
  /// 1 = treated arm (D), 2 = control arm (1 - D) for ate_arm.
  int arm = 1;
  /// Contrast w(u) for continuous_treatment; must integrate to 0 on the grid.
  std::function<double(double)> contrast;
  /// Quadrature on [0, 1]; defaults to 64-point Gauss-Legendre.
  std::optional<QuadratureRule> quadrature;
  /// Counterfactual treatment map t(d) for policy_effect.
  std::function<double(double)> policy;
};

/// Shipped functionals:
///   mar_mean, mar_nonrespondents, ate_arm, ecc, expected_product     fields y, d
///   mnar_mean (delta)                                                fields y, d
///   continuous_treatment (contrast, quadrature)   field y, z = (treatment, L)
///   policy_effect (policy)                        field y, z = (treatment, L)
///   ratio_functional (quadrature)                 fields y1, y2, scalar z in [0, 1]
FunctionalSpec registry_get(std::string_view name, const RegistryOptions& options = {});
std::vector<std::string> registry_names();

/// S_ab a b + m_a(O, a) + m_b(O, b) + S_0. Throws NumericalError naming the
/// first non-finite term.
double eval_upsilon(const FunctionalSpec& spec, const CovariateFunction& a,
                    const CovariateFunction& b, const Observation& o);

/// Explicit finite law: atom i of `support` has probability `prob[i]`.
struct FiniteDistribution {
  Dataset support;
  std::vector<double> prob;

  /// Throws DataError unless probabilities are non-negative and sum to 1.
  void validate() const;
  double expectation(const std::function<double(const Observation&)>& f) const;
};

/// Largest violation of E[S_ab c h + m_cbar(O, h)] = 0 over indicator functions
/// h = 1{z = z_k} of the support points (these span all h on a finite support),
/// for both (c = a, m_b) and (c = b, m_a).
double proposition1_residual(const FunctionalSpec& spec, const CovariateFunction& a,
                             const CovariateFunction& b, const FiniteDistribution& law);

struct MixedBiasGap {
  double lhs = 0.0;  ///< E[Upsilon(a', b')] - chi
  double rhs = 0.0;  ///< E[S_ab (a' - a)(b' - b)]
};

/// Exact sums over `law`. (a, b) must be the truth under `law`, verified with
/// proposition1_residual <= truth_tol; otherwise throws DataError.
MixedBiasGap mixed_bias_gap(const FunctionalSpec& spec, const CovariateFunction& a,
                            const CovariateFunction& b, const CovariateFunction& a_alt,
                            const CovariateFunction& b_alt, const FiniteDistribution& law,
                            double truth_tol = 1e-10);

/// Ground truth of a synthetic estimand.
struct EstimandTruth {
  enum class Method { closed_form, monte_carlo };
  double chi = 0.0;
  Method method = Method::closed_form;
  /// Monte Carlo only.
  std::size_t draws = 0;
  std::uint64_t seed = 0;
  double standard_error = 0.0;
};

}  // namespace bifdr
