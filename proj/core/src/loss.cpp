#include "bifdr/loss.hpp"

#include "bifdr/error.hpp"

#include <cmath>
#include <string>

namespace bifdr {

LossProblem::LossProblem(Matrix design, Vector s_ab, Vector weights, Vector m_vector,
                         LinkFunction link, Target target, Sign sign, std::vector<bool> penalized)
    : x_(std::move(design)), s_ab_(std::move(s_ab)), w_(std::move(weights)),
      m_(std::move(m_vector)), link_(std::move(link)), target_(target), sign_(sign),
      penalized_(std::move(penalized)) {
  const Eigen::Index n = x_.rows();
  const Eigen::Index p = x_.cols();
  if (n == 0 || p == 0) throw DataError("loss: empty design");
  if (s_ab_.size() != n || w_.size() != n || m_.size() != p ||
      static_cast<Eigen::Index>(penalized_.size()) != p) {
    throw DataError("loss: inconsistent dimensions");
  }
  if (!x_.allFinite() || !s_ab_.allFinite() || !w_.allFinite() || !m_.allFinite()) {
    throw DataError("loss: non-finite entries");
  }
  int weight_sign = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int s = w_[i] > 0.0 ? 1 : (w_[i] < 0.0 ? -1 : 0);
    if (s == 0) throw DataError("loss: weight is zero at row " + std::to_string(i));
    if (weight_sign != 0 && s != weight_sign) {
      throw DataError("loss: weights change sign at row " + std::to_string(i) +
                      "; the objective would not be convex");
    }
    weight_sign = s;
    const double sab = s_ab_[i];
    if ((sign_ == Sign::nonnegative && sab < 0.0) || (sign_ == Sign::nonpositive && sab > 0.0)) {
      throw DataError("loss: S_ab has the wrong sign at row " + std::to_string(i));
    }
  }
  const int spec_sign = sign_ == Sign::nonnegative ? 1 : -1;
  sigma_ = spec_sign * weight_sign * link_.direction();
  coef_ = (static_cast<double>(sigma_) / static_cast<double>(n)) * s_ab_.cwiseProduct(w_);
  linear_ = static_cast<double>(sigma_) * m_;
  quadratic_ = link_.is_identity() && p <= 2 * n;
  if (quadratic_) {
    gram_ = x_.transpose() * coef_.asDiagonal() * x_;
    gram_ = 0.5 * (gram_ + gram_.transpose());
  }
}

double LossProblem::value(const Vector& theta) const {
  double v;
  if (quadratic_) {
    v = 0.5 * theta.dot(gram_ * theta) + linear_.dot(theta);
  } else {
    const Vector u = x_ * theta;
    double s = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (coef_[i] != 0.0) s += coef_[i] * link_.antideriv(u[i]);
    }
    v = s + linear_.dot(theta);
  }
  if (!std::isfinite(v)) throw NumericalError("loss", "loss value overflowed after clamping");
  return v;
}

Vector LossProblem::grad(const Vector& theta) const {
  Vector g;
  value_and_grad(theta, g);
  return g;
}

double LossProblem::value_and_grad(const Vector& theta, Vector& grad) const {
  double v;
  if (quadratic_) {
    grad.noalias() = gram_ * theta;
    v = 0.5 * theta.dot(grad) + linear_.dot(theta);
    grad += linear_;
  } else {
    const Vector u = x_ * theta;
    Vector r(u.size());
    double s = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (coef_[i] != 0.0) {
        double psi;
        r[i] = coef_[i] * link_.value_and_antideriv(u[i], psi);
        s += coef_[i] * psi;
      } else {
        r[i] = 0.0;
      }
    }
    grad.noalias() = x_.transpose() * r;
    grad += linear_;
    v = s + linear_.dot(theta);
  }
  if (!std::isfinite(v) || !grad.allFinite()) {
    throw NumericalError("loss", "loss value or gradient overflowed after clamping");
  }
  return v;
}

std::size_t LossProblem::clamped_rows(const Vector& theta) const {
  if (link_.is_identity()) return 0;
  const Vector u = x_ * theta;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i) count += link_.clamps(u[i]) ? 1 : 0;
  return count;
}

double LossProblem::curvature_estimate(const Vector& theta) const {
  // Hessian = X' diag(coef_i * phi'(u_i)) X, which is PSD by the orientation.
  Vector h;
  if (quadratic_) {
    h.resize(0);
  } else {
    const Vector u = x_ * theta;
    h.resize(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) h[i] = std::abs(coef_[i] * link_.deriv(u[i]));
  }
  const Eigen::Index p = dim();
  Vector v = Vector::Ones(p) / std::sqrt(static_cast<double>(p));
  for (Eigen::Index j = 0; j < p; ++j) v[j] += 1e-3 * static_cast<double>(j % 7);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 30; ++it) {
    Vector next;
    if (quadratic_) {
      next = gram_ * v;
    } else {
      next = x_.transpose() * h.cwiseProduct(x_ * v);
    }
    const double norm = next.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) return norm > 0.0 ? norm : 0.0;
    const double prev = lambda;
    lambda = v.dot(next);
    v = next / norm;
    if (it > 2 && std::abs(lambda - prev) <= 1e-2 * std::abs(lambda)) break;
  }
  return std::abs(lambda);
}

LossProblem LossProblem::rescaled(double kappa) const {
  if (!(kappa > 0.0)) throw ConfigError("rescaled: kappa must be positive");
  return LossProblem(x_, kappa * s_ab_, w_, kappa * m_, link_, target_, sign_, penalized_);
}

LossProblem LossProblem::restricted(const std::vector<Eigen::Index>& cols) const {
  Matrix x(x_.rows(), static_cast<Eigen::Index>(cols.size()));
  Vector m(static_cast<Eigen::Index>(cols.size()));
  std::vector<bool> pen(cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    x.col(kk) = x_.col(cols[k]);
    m[kk] = m_[cols[k]];
    pen[k] = penalized_[static_cast<std::size_t>(cols[k])];
  }
  return LossProblem(std::move(x), s_ab_, w_, std::move(m), link_, target_, sign_, std::move(pen));
}

LossProblem build_loss(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                       Target target, const LinkFunction& link, const CovariateFunction& weight) {
  spec.check_fields(data);
  spec.check_sign(data);
  const std::size_t n = data.rows();
  const auto p = static_cast<Eigen::Index>(basis.size());
  Matrix x = basis.design(data);

  Vector s_ab(static_cast<Eigen::Index>(n));
  Vector w(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    s_ab[ii] = spec.s_ab(data.row(i));
    w[ii] = weight ? weight(data.z(i)) : 1.0;
    if (!std::isfinite(w[ii]) || w[ii] == 0.0) {
      throw DataError("loss weight is zero or non-finite at row " + std::to_string(i));
    }
  }

  // M_j = P_n[ m_cbar(O, w * phi_j) ].
  const LinearMap& m_cbar = spec.map(other(target));
  Vector m = Vector::Zero(p);
  if (m_cbar.is_pointwise()) {
    Vector g(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      g[static_cast<Eigen::Index>(i)] = m_cbar.multiplier(data.row(i)) * w[static_cast<Eigen::Index>(i)];
    }
    m.noalias() = x.transpose() * g;
  } else {
    std::vector<EvalAtom> atoms;
    Vector phi(p);
    for (std::size_t i = 0; i < n; ++i) {
      atoms.clear();
      m_cbar.expand(data.row(i), atoms);
      for (const auto& atom : atoms) {
        basis.eval(atom.z, std::span<double>(phi.data(), static_cast<std::size_t>(p)));
        const double wq = weight ? weight(atom.z) : 1.0;
        m += (atom.coef * wq) * phi;
      }
    }
  }
  m /= static_cast<double>(n);
  if (!m.allFinite()) throw NumericalError("m_vector", "non-finite linear term in the loss");

  return LossProblem(std::move(x), std::move(s_ab), std::move(w), std::move(m), link, target,
                     spec.sign, basis.penalized());
}

}  // namespace bifdr
