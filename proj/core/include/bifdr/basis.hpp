#pragma once

#include "bifdr/dataset.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace bifdr {

/// Feature map z -> phi(z) of fixed length p shared by both working models.
class Basis {
 public:
  using EvalFn = std::function<void(std::span<const double> z, std::span<double> out)>;

  /// phi(z) = z for covariates of dimension d.
  static Basis linear(std::size_t d);
  /// User-supplied map of length p. `input_dim` of 0 accepts any covariate length.
  static Basis custom(std::size_t p, std::size_t input_dim, EvalFn eval);

  /// Prepends a constant 1 feature that the solver leaves unpenalized.
  Basis with_intercept() const;

  std::size_t size() const { return p_; }
  std::size_t input_dim() const { return input_dim_; }
  bool has_intercept() const { return intercept_; }
  /// penalized()[j] is false for unpenalized columns (the intercept).
  const std::vector<bool>& penalized() const { return penalized_; }

  void eval(std::span<const double> z, std::span<double> out) const;
  Vector eval(std::span<const double> z) const;
  /// <theta, phi(z)>.
  double predictor(const Vector& theta, std::span<const double> z) const;

  /// n x p design matrix; throws DataError on a dimension mismatch or a
  /// non-finite feature.
  Matrix design(const Dataset& data) const;

 private:
  Basis(std::size_t p, std::size_t input_dim, EvalFn eval, bool identity);

  std::size_t p_ = 0;
  std::size_t input_dim_ = 0;
  EvalFn eval_;
  bool identity_ = false;
  bool intercept_ = false;
  std::vector<bool> penalized_;
};

}  // namespace bifdr
