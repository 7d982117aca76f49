#include "bifdr/functional.hpp"

#include "bifdr/error.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace bifdr {

// ---------------------------------------------------------------------------
// LinearMap

LinearMap LinearMap::pointwise(ObservationFunction multiplier) {
  if (!multiplier) throw ConfigError("pointwise map needs a multiplier");
  LinearMap m;
  m.multiplier_ = std::move(multiplier);
  return m;
}

LinearMap LinearMap::atoms(Expander expand) {
  if (!expand) throw ConfigError("atom map needs an expander");
  LinearMap m;
  m.expand_ = std::move(expand);
  return m;
}

double LinearMap::multiplier(const Observation& o) const {
  if (!multiplier_) throw ConfigError("multiplier() called on a non-pointwise map");
  return multiplier_(o);
}

void LinearMap::expand(const Observation& o, std::vector<EvalAtom>& out) const {
  if (multiplier_) {
    out.push_back({std::vector<double>(o.z().begin(), o.z().end()), multiplier_(o)});
  } else {
    expand_(o, out);
  }
}

double LinearMap::apply(const Observation& o, const CovariateFunction& h) const {
  if (multiplier_) return multiplier_(o) * h(o.z());
  std::vector<EvalAtom> atoms;
  expand_(o, atoms);
  double s = 0.0;
  for (const auto& atom : atoms) s += atom.coef * h(atom.z);
  return s;
}

// ---------------------------------------------------------------------------
// FunctionalSpec

void FunctionalSpec::check_fields(const Dataset& data) const {
  for (const auto& f : required_fields) {
    if (!data.has_field(f)) {
      throw DataError("functional '" + name + "' needs field '" + f + "' which the dataset lacks");
    }
  }
}

void FunctionalSpec::check_sign(const Dataset& data) const {
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const double s = s_ab(data.row(i));
    const bool ok = sign == Sign::nonnegative ? s >= 0.0 : s <= 0.0;
    if (!ok || !std::isfinite(s)) {
      throw DataError("functional '" + name + "': S_ab = " + std::to_string(s) + " at row " +
                      std::to_string(i) + " violates the declared " +
                      (sign == Sign::nonnegative ? "nonnegative" : "nonpositive") + " sign");
    }
  }
}

QuadratureRule gauss_legendre_unit(std::size_t points) {
  auto build = [](const auto& abscissa, const auto& weights, std::size_t n) {
    QuadratureRule rule;
    std::map<double, double> sorted;
    for (std::size_t i = 0; i < abscissa.size(); ++i) {
      sorted[0.5 * (1.0 + abscissa[i])] = 0.5 * weights[i];
      if (abscissa[i] != 0.0) sorted[0.5 * (1.0 - abscissa[i])] = 0.5 * weights[i];
    }
    if (sorted.size() != n) throw ConfigError("quadrature construction failed");
    for (const auto& [x, w] : sorted) {
      rule.nodes.push_back(x);
      rule.weights.push_back(w);
    }
    return rule;
  };
  using boost::math::quadrature::gauss;
  switch (points) {
    case 16: return build(gauss<double, 16>::abscissa(), gauss<double, 16>::weights(), 16);
    case 32: return build(gauss<double, 32>::abscissa(), gauss<double, 32>::weights(), 32);
    case 64: return build(gauss<double, 64>::abscissa(), gauss<double, 64>::weights(), 64);
    default:
      throw ConfigError("Gauss-Legendre rule supports 16, 32 or 64 points, not " +
                        std::to_string(points));
  }
}

// ---------------------------------------------------------------------------
// Registry

namespace {

ObservationFunction constant(double c) {
  return [c](const Observation&) { return c; };
}

ObservationFunction field(std::string name) {
  return [name = std::move(name)](const Observation& o) { return o[name]; };
}

FunctionalSpec missing_at_random(std::string name, bool control_arm) {
  // D is the response indicator; the control arm of an ATE uses 1 - D.
  auto response = [control_arm](const Observation& o) {
    return control_arm ? 1.0 - o["d"] : o["d"];
  };
  FunctionalSpec s;
  s.name = std::move(name);
  s.s_ab = [response](const Observation& o) { return -response(o); };
  s.s_0 = constant(0.0);
  s.m_a = LinearMap::pointwise(constant(1.0));
  s.m_b = LinearMap::pointwise([response](const Observation& o) { return response(o) * o["y"]; });
  s.sign = Sign::nonpositive;
  s.required_fields = {"y", "d"};
  return s;
}

const QuadratureRule& rule_or_default(const RegistryOptions& options, QuadratureRule& storage) {
  if (options.quadrature) {
    const auto& q = *options.quadrature;
    if (q.nodes.empty() || q.nodes.size() != q.weights.size()) {
      throw ConfigError("quadrature rule needs matching, non-empty nodes and weights");
    }
    return q;
  }
  storage = gauss_legendre_unit(64);
  return storage;
}

}  // namespace

FunctionalSpec registry_get(std::string_view name, const RegistryOptions& options) {
  if (name == "mar_mean") return missing_at_random("mar_mean", false);

  if (name == "ate_arm") {
    if (options.arm != 1 && options.arm != 2) throw ConfigError("ate_arm: arm must be 1 or 2");
    return missing_at_random(options.arm == 1 ? "ate_arm1" : "ate_arm2", options.arm == 2);
  }

  if (name == "mar_nonrespondents") {
    auto s = missing_at_random("mar_nonrespondents", false);
    s.m_a = LinearMap::pointwise([](const Observation& o) { return 1.0 - o["d"]; });
    return s;
  }

  if (name == "ecc") {
    FunctionalSpec s;
    s.name = "ecc";
    s.s_ab = constant(-1.0);
    s.s_0 = [](const Observation& o) { return o["d"] * o["y"]; };
    s.m_a = LinearMap::pointwise([](const Observation& o) { return -o["d"]; });
    s.m_b = LinearMap::pointwise(field("y"));
    s.sign = Sign::nonpositive;
    s.required_fields = {"y", "d"};
    return s;
  }

  if (name == "expected_product") {
    FunctionalSpec s;
    s.name = "expected_product";
    s.s_ab = constant(-1.0);
    s.s_0 = constant(0.0);
    s.m_a = LinearMap::pointwise(field("d"));
    s.m_b = LinearMap::pointwise(field("y"));
    s.sign = Sign::nonpositive;
    s.required_fields = {"y", "d"};
    return s;
  }

  if (name == "mnar_mean") {
    if (!options.delta) throw ConfigError("mnar_mean requires the tilt parameter delta");
    const double delta = *options.delta;
    if (!std::isfinite(delta)) throw ConfigError("mnar_mean: delta must be finite");
    FunctionalSpec s;
    s.name = "mnar_mean";
    s.s_ab = [delta](const Observation& o) { return -o["d"] * std::exp(delta * o["y"]); };
    s.s_0 = [](const Observation& o) { return o["d"] * o["y"]; };
    s.m_a = LinearMap::pointwise([](const Observation& o) { return 1.0 - o["d"]; });
    s.m_b = LinearMap::pointwise(
        [delta](const Observation& o) { return o["d"] * o["y"] * std::exp(delta * o["y"]); });
    s.sign = Sign::nonpositive;
    s.required_fields = {"y", "d"};
    return s;
  }

  if (name == "continuous_treatment") {
    if (!options.contrast) throw ConfigError("continuous_treatment requires a contrast w(u)");
    QuadratureRule storage;
    const QuadratureRule rule = rule_or_default(options, storage);
    std::vector<double> coef(rule.nodes.size());
    double integral = 0.0, scale = 0.0;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      coef[q] = rule.weights[q] * options.contrast(rule.nodes[q]);
      integral += coef[q];
      scale += std::abs(coef[q]);
    }
    if (!std::isfinite(integral) || std::abs(integral) > 1e-10 * std::max(1.0, scale)) {
      throw ConfigError("continuous_treatment: contrast must integrate to 0 on the grid (got " +
                        std::to_string(integral) + ")");
    }
    FunctionalSpec s;
    s.name = "continuous_treatment";
    s.s_ab = constant(-1.0);
    s.s_0 = constant(0.0);
    // z = (treatment, L); m_a(O, h) = sum_q coef_q h(u_q, L).
    s.m_a = LinearMap::atoms([nodes = rule.nodes, coef](const Observation& o,
                                                        std::vector<EvalAtom>& out) {
      if (o.z().empty()) throw DataError("continuous_treatment needs the treatment in z1");
      for (std::size_t q = 0; q < nodes.size(); ++q) {
        EvalAtom atom{std::vector<double>(o.z().begin(), o.z().end()), coef[q]};
        atom.z[0] = nodes[q];
        out.push_back(std::move(atom));
      }
    });
    s.m_b = LinearMap::pointwise(field("y"));
    s.sign = Sign::nonpositive;
    s.required_fields = {"y"};
    return s;
  }

  if (name == "policy_effect") {
    if (!options.policy) throw ConfigError("policy_effect requires a policy map t(d)");
    FunctionalSpec s;
    s.name = "policy_effect";
    s.s_ab = constant(-1.0);
    s.s_0 = [](const Observation& o) { return -o["y"]; };
    s.m_a = LinearMap::atoms([t = options.policy](const Observation& o,
                                                  std::vector<EvalAtom>& out) {
      if (o.z().empty()) throw DataError("policy_effect needs the treatment in z1");
      EvalAtom atom{std::vector<double>(o.z().begin(), o.z().end()), 1.0};
      atom.z[0] = t(atom.z[0]);
      out.push_back(std::move(atom));
    });
    s.m_b = LinearMap::pointwise(field("y"));
    s.sign = Sign::nonpositive;
    s.required_fields = {"y"};
    return s;
  }

  if (name == "ratio_functional") {
    QuadratureRule storage;
    const QuadratureRule rule = rule_or_default(options, storage);
    FunctionalSpec s;
    s.name = "ratio_functional";
    s.s_ab = [](const Observation& o) { return -o["y2"]; };
    s.s_0 = constant(0.0);
    s.m_a = LinearMap::atoms([rule](const Observation& o, std::vector<EvalAtom>& out) {
      if (o.z().size() != 1) throw DataError("ratio_functional needs a scalar covariate");
      for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        out.push_back({{rule.nodes[q]}, rule.weights[q]});
      }
    });
    s.m_b = LinearMap::pointwise(field("y1"));
    s.sign = Sign::nonpositive;
    s.required_fields = {"y1", "y2"};
    return s;
  }

  throw ConfigError("unknown functional '" + std::string(name) + "'");
}

std::vector<std::string> registry_names() {
  return {"mar_mean",  "mar_nonrespondents",   "ate_arm",       "ecc",
          "expected_product", "mnar_mean", "continuous_treatment", "policy_effect",
          "ratio_functional"};
}

// ---------------------------------------------------------------------------
// Upsilon and finite-law identities

double eval_upsilon(const FunctionalSpec& spec, const CovariateFunction& a,
                    const CovariateFunction& b, const Observation& o) {
  auto finite = [](double v, const char* term) {
    if (!std::isfinite(v)) throw NumericalError(term, std::string("non-finite ") + term);
    return v;
  };
  const double av = finite(a(o.z()), "a");
  const double bv = finite(b(o.z()), "b");
  const double s_ab = finite(spec.s_ab(o), "s_ab");
  const double ma = finite(spec.m_a.apply(o, a), "m_a");
  const double mb = finite(spec.m_b.apply(o, b), "m_b");
  const double s0 = finite(spec.s_0(o), "s_0");
  return finite(s_ab * av * bv + ma + mb + s0, "upsilon");
}

void FiniteDistribution::validate() const {
  if (prob.size() != support.rows()) {
    throw DataError("finite distribution: " + std::to_string(prob.size()) +
                    " probabilities for " + std::to_string(support.rows()) + " atoms");
  }
  double total = 0.0;
  for (double p : prob) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DataError("finite distribution: bad probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DataError("finite distribution: probabilities must sum to 1");
}

double FiniteDistribution::expectation(const std::function<double(const Observation&)>& f) const {
  double s = 0.0;
  for (std::size_t i = 0; i < support.rows(); ++i) s += prob[i] * f(support.row(i));
  return s;
}

double proposition1_residual(const FunctionalSpec& spec, const CovariateFunction& a,
                             const CovariateFunction& b, const FiniteDistribution& law) {
  law.validate();
  // Distinct support points of Z.
  std::vector<std::vector<double>> points;
  for (std::size_t i = 0; i < law.support.rows(); ++i) {
    std::vector<double> z(law.support.z(i).begin(), law.support.z(i).end());
    bool seen = false;
    for (const auto& p : points) seen = seen || p == z;
    if (!seen) points.push_back(std::move(z));
  }
  double worst = 0.0;
  for (const auto& point : points) {
    CovariateFunction h = [&point](std::span<const double> z) {
      return std::equal(z.begin(), z.end(), point.begin(), point.end()) ? 1.0 : 0.0;
    };
    const double ra = law.expectation([&](const Observation& o) {
      return spec.s_ab(o) * a(o.z()) * h(o.z()) + spec.m_b.apply(o, h);
    });
    const double rb = law.expectation([&](const Observation& o) {
      return spec.s_ab(o) * b(o.z()) * h(o.z()) + spec.m_a.apply(o, h);
    });
    worst = std::max({worst, std::abs(ra), std::abs(rb)});
  }
  return worst;
}

MixedBiasGap mixed_bias_gap(const FunctionalSpec& spec, const CovariateFunction& a,
                            const CovariateFunction& b, const CovariateFunction& a_alt,
                            const CovariateFunction& b_alt, const FiniteDistribution& law,
                            double truth_tol) {
  if (proposition1_residual(spec, a, b, law) > truth_tol) {
    throw DataError("supplied (a,b) are not the truth under P");
  }
  const double chi =
      law.expectation([&](const Observation& o) { return eval_upsilon(spec, a, b, o); });
  MixedBiasGap gap;
  gap.lhs = law.expectation([&](const Observation& o) {
              return eval_upsilon(spec, a_alt, b_alt, o);
            }) -
            chi;
  gap.rhs = law.expectation([&](const Observation& o) {
    return spec.s_ab(o) * (a_alt(o.z()) - a(o.z())) * (b_alt(o.z()) - b(o.z()));
  });
  return gap;
}

}  // namespace bifdr
