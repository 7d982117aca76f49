#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace bifdr {

/// Arguments of exp() are clamped to this range before exponentiation.
inline constexpr double kExpClamp = 700.0;

/// Clamp to [-kExpClamp, kExpClamp].
double clamp_exp_arg(double u) noexcept;

/// A link phi_c together with its derivative and an antiderivative psi_c
/// (psi_c' = phi_c). The link is strictly monotone; its direction equals the sign
/// of psi_c'', so S * psi_c is convex whenever sign(S) == direction().
class LinkFunction {
 public:
  enum class Kind { identity, exp, negexp, expit, inv_expit, neg_inv_expit, custom };

  /// A user-defined link. `direction` is +1 for increasing, -1 for decreasing.
  static LinkFunction custom(std::string name, std::function<double(double)> value,
                             std::function<double(double)> deriv,
                             std::function<double(double)> antideriv, int direction);

  const std::string& name() const { return name_; }
  Kind kind() const { return kind_; }
  bool is_identity() const { return kind_ == Kind::identity; }
  int direction() const { return direction_; }

  double value(double u) const;
  double deriv(double u) const;
  double antideriv(double u) const;
  /// value(u), with antideriv(u) stored in `psi`; one exponential for the exp family.
  double value_and_antideriv(double u, double& psi) const;
  /// True when |u| exceeds the exp clamp for an exp-family link.
  bool clamps(double u) const;

 private:
  friend LinkFunction link(std::string_view name);
  LinkFunction(std::string name, Kind kind, int direction) : name_(std::move(name)), kind_(kind), direction_(direction) {}

  std::string name_;
  Kind kind_;
  int direction_;
  std::function<double(double)> value_, deriv_, antideriv_;
};

/// Shipped links by CLI name: identity, exp (e^u), negexp (-e^{-u}), expit,
/// inv-expit (1 + e^{-u}) and neg-inv-expit (-(1 + e^{-u})). Throws ConfigError
/// for anything else.
LinkFunction link(std::string_view name);

std::vector<std::string> link_names();

}  // namespace bifdr
