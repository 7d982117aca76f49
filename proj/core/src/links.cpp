#include "bifdr/links.hpp"

#include "bifdr/error.hpp"

#include <algorithm>
#include <cmath>

namespace bifdr {

namespace {

// log(1 + e^u) without overflow.
double softplus(double u) {
  return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

double expit(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

}  // namespace

double clamp_exp_arg(double u) noexcept {
  return std::clamp(u, -kExpClamp, kExpClamp);
}

LinkFunction LinkFunction::custom(std::string name, std::function<double(double)> value,
                                  std::function<double(double)> deriv,
                                  std::function<double(double)> antideriv, int direction) {
  if (!value || !deriv || !antideriv) throw ConfigError("custom link needs all three functions");
  if (direction != 1 && direction != -1) throw ConfigError("link direction must be +1 or -1");
  LinkFunction f(std::move(name), Kind::custom, direction);
  f.value_ = std::move(value);
  f.deriv_ = std::move(deriv);
  f.antideriv_ = std::move(antideriv);
  return f;
}

double LinkFunction::value(double u) const {
  switch (kind_) {
    case Kind::identity: return u;
    case Kind::exp: return std::exp(clamp_exp_arg(u));
    case Kind::negexp: return -std::exp(-clamp_exp_arg(u));
    case Kind::expit: return expit(u);
    case Kind::inv_expit: return 1.0 + std::exp(-clamp_exp_arg(u));
    case Kind::neg_inv_expit: return -1.0 - std::exp(-clamp_exp_arg(u));
    case Kind::custom: return value_(u);
  }
  return 0.0;
}

double LinkFunction::deriv(double u) const {
  switch (kind_) {
    case Kind::identity: return 1.0;
    case Kind::exp: return std::exp(clamp_exp_arg(u));
    case Kind::negexp: return std::exp(-clamp_exp_arg(u));
    case Kind::expit: {
      const double s = expit(u);
      return s * (1.0 - s);
    }
    case Kind::inv_expit: return -std::exp(-clamp_exp_arg(u));
    case Kind::neg_inv_expit: return std::exp(-clamp_exp_arg(u));
    case Kind::custom: return deriv_(u);
  }
  return 0.0;
}

// Constants: identity psi(0) = 0, exp psi(0) = 1, inv-expit psi(0) = 1.
double LinkFunction::antideriv(double u) const {
  switch (kind_) {
    case Kind::identity: return 0.5 * u * u;
    case Kind::exp: return std::exp(clamp_exp_arg(u));
    case Kind::negexp: return std::exp(-clamp_exp_arg(u));
    case Kind::expit: return softplus(u);
    case Kind::inv_expit: return u - std::exp(-clamp_exp_arg(u)) + 2.0;
    case Kind::neg_inv_expit: return -u + std::exp(-clamp_exp_arg(u)) - 2.0;
    case Kind::custom: return antideriv_(u);
  }
  return 0.0;
}

double LinkFunction::value_and_antideriv(double u, double& psi) const {
  switch (kind_) {
    case Kind::exp: {
      const double e = std::exp(clamp_exp_arg(u));
      psi = e;
      return e;
    }
    case Kind::negexp: {
      const double e = std::exp(-clamp_exp_arg(u));
      psi = e;
      return -e;
    }
    case Kind::inv_expit: {
      const double e = std::exp(-clamp_exp_arg(u));
      psi = u - e + 2.0;
      return 1.0 + e;
    }
    case Kind::neg_inv_expit: {
      const double e = std::exp(-clamp_exp_arg(u));
      psi = -u + e - 2.0;
      return -1.0 - e;
    }
    default:
      psi = antideriv(u);
      return value(u);
  }
}

bool LinkFunction::clamps(double u) const {
  switch (kind_) {
    case Kind::exp:
    case Kind::negexp:
    case Kind::inv_expit:
    case Kind::neg_inv_expit: return std::abs(u) > kExpClamp;
    default: return false;
  }
}

LinkFunction link(std::string_view name) {
  using K = LinkFunction::Kind;
  if (name == "identity") return LinkFunction("identity", K::identity, 1);
  if (name == "exp") return LinkFunction("exp", K::exp, 1);
  if (name == "negexp") return LinkFunction("negexp", K::negexp, 1);
  if (name == "expit") return LinkFunction("expit", K::expit, 1);
  if (name == "inv-expit") return LinkFunction("inv-expit", K::inv_expit, -1);
  if (name == "neg-inv-expit") return LinkFunction("neg-inv-expit", K::neg_inv_expit, 1);
  throw ConfigError("unknown link '" + std::string(name) +
                    "' (expected identity|exp|negexp|expit|inv-expit|neg-inv-expit)");
}

std::vector<std::string> link_names() {
  return {"identity", "exp", "negexp", "expit", "inv-expit", "neg-inv-expit"};
}

}  // namespace bifdr
