#pragma once

/// Overflow-safe scaled softplus and its symmetrized variant.
///
/// With u = t / delta:
///   value      = delta * log(1 + exp(u))        smooth approximation of max(t, 0)
///   first      = sigmoid(u)
///   second     = sigmoid(u) (1 - sigmoid(u)) / delta
///   sym_value  = value(t) + value(-t)           smooth approximation of |t|
///   sym_first  = tanh(u / 2)
///   sym_second = sech^2(u / 2) / (2 delta)

#include <cmath>
#include <stdexcept>

namespace diffqp {

struct SoftplusEval {
  double value = 0.0;
  double first = 0.0;
  double second = 0.0;
  double sym_value = 0.0;
  double sym_first = 0.0;
  double sym_second = 0.0;
};

/// Evaluates the scaled softplus family at t with sharpness delta > 0.
///
/// Everything is computed in the log domain with a branch at |t / delta| = 30,
/// so no intermediate overflows for any finite t. For t / delta > 30 the value
/// reduces to t + delta * exp(-t / delta); for t / delta < -30 it decays as
/// delta * exp(t / delta). Derivatives stay positive until exp(-|t / delta|)
/// underflows. Rejects nonpositive delta and non-finite t.
inline SoftplusEval softplus_eval(double t, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("softplus_eval: delta must be positive");
  if (!std::isfinite(t)) throw std::invalid_argument("softplus_eval: t must be finite");

  const double u = t / delta;
  const double au = std::abs(u);
  const double e = std::exp(-au);  // in (0, 1]

  SoftplusEval out;

  if (u >= 30.0) {
    out.value = t + delta * std::log1p(e);
  } else {
    out.value = delta * std::log1p(std::exp(u));
  }
  // value(t) + value(-t) = |t| + 2 delta * log1p(exp(-|u|)).
  out.sym_value = std::abs(t) + 2.0 * delta * std::log1p(e);

  if (u >= 0.0) {
    out.first = 1.0 / (1.0 + e);
  } else {
    out.first = e / (1.0 + e);
  }

  // sigmoid(u) (1 - sigmoid(u)) = e / (1 + e)^2 for either sign of u.
  const double onep = 1.0 + e;
  out.second = e / (onep * onep * delta);

  out.sym_first = std::tanh(0.5 * u);
  // sech^2(u/2) / (2 delta) = 2 e / ((1 + e)^2 delta).
  out.sym_second = 2.0 * out.second;

  return out;
}

}  // namespace diffqp
