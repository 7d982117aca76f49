#pragma once

#include "bifdr/basis.hpp"
#include "bifdr/dataset.hpp"
#include "bifdr/functional.hpp"
#include "bifdr/links.hpp"

#include <cstddef>
#include <vector>

namespace bifdr {

/// The smooth part of an l1-penalized nuisance fit,
///
///   L(theta) = sigma * ( mean_i[ S_ab,i w_i psi(<theta, x_i>) ] + <theta, M> ),
///   M_j      = mean_i[ m_cbar(O_i, w * phi_j) ],
///
/// where sigma = sign(S_ab) * sign(w) * direction(link) in {+1, -1} orients the
/// problem so that L is convex. The orientation does not move the stationary
/// points; it only decides whether P_n[Q_c] is minimised or maximised.
///
/// Immutable; value() and grad() may be called concurrently.
class LossProblem {
 public:
  LossProblem(Matrix design, Vector s_ab, Vector weights, Vector m_vector, LinkFunction link,
              Target target, Sign sign, std::vector<bool> penalized);

  Eigen::Index rows() const { return x_.rows(); }
  Eigen::Index dim() const { return x_.cols(); }
  int orientation() const { return sigma_; }
  Target target() const { return target_; }
  const LinkFunction& link() const { return link_; }
  const Matrix& design() const { return x_; }
  const Vector& s_ab() const { return s_ab_; }
  const Vector& weights() const { return w_; }
  const Vector& m_vector() const { return m_; }
  const std::vector<bool>& penalized() const { return penalized_; }
  /// Identity link: L is quadratic and evaluated through a cached Gram matrix.
  bool quadratic() const { return quadratic_; }

  /// Oriented objective (the function the solver minimises).
  double value(const Vector& theta) const;
  Vector grad(const Vector& theta) const;
  double value_and_grad(const Vector& theta, Vector& grad) const;

  /// Unoriented mean_i[Q_c]; equals orientation() * value().
  double raw_value(const Vector& theta) const { return sigma_ * value(theta); }
  Vector raw_grad(const Vector& theta) const { return sigma_ * grad(theta); }

  /// Rows whose linear predictor falls outside the exp clamp.
  std::size_t clamped_rows(const Vector& theta) const;

  /// Power-iteration estimate of the largest eigenvalue of the Hessian of L at
  /// theta (exact up to iteration error for the quadratic case).
  double curvature_estimate(const Vector& theta) const;

  /// Copy with S_ab and M multiplied by kappa > 0.
  LossProblem rescaled(double kappa) const;
  /// The same loss as a function of the listed coordinates only, the others
  /// held at zero.
  LossProblem restricted(const std::vector<Eigen::Index>& cols) const;

 private:
  Matrix x_;
  Vector s_ab_;
  Vector w_;
  Vector m_;
  LinkFunction link_;
  Target target_;
  Sign sign_;
  std::vector<bool> penalized_;
  int sigma_ = 1;
  Vector coef_;     // sigma * s_ab * w / n
  Vector linear_;   // sigma * M
  bool quadratic_ = false;
  Matrix gram_;     // X' diag(coef) X, quadratic case only
};

/// Builds the loss for nuisance `target` of `spec` on `data`.
/// `weight` defaults to w = 1. Throws DataError on a sign violation of S_ab (naming
/// the row), on zero, non-finite or mixed-sign weights, and on missing fields.
LossProblem build_loss(const FunctionalSpec& spec, const Dataset& data, const Basis& basis,
                       Target target, const LinkFunction& link,
                       const CovariateFunction& weight = {});

}  // namespace bifdr
