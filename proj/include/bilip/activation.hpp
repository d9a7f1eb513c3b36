#ifndef BILIP_ACTIVATION_HPP
#define BILIP_ACTIVATION_HPP

#include "bilip/common.hpp"

#include <cmath>

namespace bilip {

enum class ActivationKind { softplus, relu };

inline const char* to_string(ActivationKind k) {
  return k == ActivationKind::softplus ? "softplus" : "relu";
}

inline ActivationKind activation_from_string(const std::string& s) {
  if (s == "softplus") return ActivationKind::softplus;
  if (s == "relu") return ActivationKind::relu;
  throw std::invalid_argument("unknown activation: " + s);
}

// Overflow-safe softplus and its derivatives. The value is computed as
// max(x,0) + log1p(exp(-|x|)); the derivative is the logistic function in its
// symmetric stable form.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_d2(double x) {
  const double s = logistic(x);
  return s * (1.0 - s);
}

struct Activation {
  ActivationKind kind;

  bool has_second_derivative() const { return kind == ActivationKind::softplus; }

  double value(double x) const {
    return kind == ActivationKind::softplus ? softplus(x) : std::max(x, 0.0);
  }
  double d1(double x) const {
    return kind == ActivationKind::softplus ? logistic(x) : (x > 0.0 ? 1.0 : 0.0);
  }
  double d2(double x) const {
    require(kind == ActivationKind::softplus, "second derivative requires softplus activation");
    return softplus_d2(x);
  }

  template <typename Derived>
  auto value(const Eigen::ArrayBase<Derived>& x) const {
    return x.unaryExpr([this](double v) { return value(v); });
  }
  template <typename Derived>
  auto d1(const Eigen::ArrayBase<Derived>& x) const {
    return x.unaryExpr([this](double v) { return d1(v); });
  }
  template <typename Derived>
  auto d2(const Eigen::ArrayBase<Derived>& x) const {
    require(kind == ActivationKind::softplus, "second derivative requires softplus activation");
    return x.unaryExpr([](double v) { return softplus_d2(v); });
  }
};

}  // namespace bilip

#endif
