#include "bifdr/basis.hpp"

#include "bifdr/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bifdr {

Basis::Basis(std::size_t p, std::size_t input_dim, EvalFn eval, bool identity)
    : p_(p), input_dim_(input_dim), eval_(std::move(eval)), identity_(identity),
      penalized_(p, true) {
  if (p_ == 0) throw ConfigError("basis must have at least one feature");
}

Basis Basis::linear(std::size_t d) {
  return Basis(d, d, nullptr, true);
}

Basis Basis::custom(std::size_t p, std::size_t input_dim, EvalFn eval) {
  if (!eval) throw ConfigError("custom basis needs an evaluation function");
  return Basis(p, input_dim, std::move(eval), false);
}

Basis Basis::with_intercept() const {
  if (intercept_) return *this;
  Basis inner = *this;
  Basis out(p_ + 1, input_dim_,
            [inner](std::span<const double> z, std::span<double> phi) {
              phi[0] = 1.0;
              inner.eval(z, phi.subspan(1));
            },
            false);
  out.intercept_ = true;
  out.penalized_[0] = false;
  std::copy(penalized_.begin(), penalized_.end(), out.penalized_.begin() + 1);
  return out;
}

void Basis::eval(std::span<const double> z, std::span<double> out) const {
  if (input_dim_ != 0 && z.size() != input_dim_) {
    throw DataError("basis expects covariates of dimension " + std::to_string(input_dim_) +
                    ", got " + std::to_string(z.size()));
  }
  if (identity_) {
    std::copy(z.begin(), z.end(), out.begin());
  } else {
    eval_(z, out);
  }
}

Vector Basis::eval(std::span<const double> z) const {
  Vector phi(static_cast<Eigen::Index>(p_));
  eval(z, std::span<double>(phi.data(), p_));
  return phi;
}

double Basis::predictor(const Vector& theta, std::span<const double> z) const {
  if (identity_) {
    double s = 0.0;
    for (std::size_t j = 0; j < p_; ++j) s += theta[static_cast<Eigen::Index>(j)] * z[j];
    return s;
  }
  return theta.dot(eval(z));
}

Matrix Basis::design(const Dataset& data) const {
  const auto n = static_cast<Eigen::Index>(data.rows());
  if (input_dim_ != 0 && data.covariate_dim() != input_dim_) {
    throw DataError("basis expects " + std::to_string(input_dim_) + " covariates, dataset has " +
                    std::to_string(data.covariate_dim()));
  }
  if (identity_) return data.covariates();
  Matrix X(n, static_cast<Eigen::Index>(p_));
  Vector phi(static_cast<Eigen::Index>(p_));
  for (Eigen::Index i = 0; i < n; ++i) {
    eval(data.z(static_cast<std::size_t>(i)), std::span<double>(phi.data(), p_));
    if (!phi.allFinite()) {
      throw DataError("basis produced a non-finite feature at row " + std::to_string(i));
    }
    X.row(i) = phi.transpose();
  }
  return X;
}

}  // namespace bifdr
