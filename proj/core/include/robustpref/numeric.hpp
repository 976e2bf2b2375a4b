#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace robustpref {

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x), stable in both tails.
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// -log sigmoid(x) without catastrophic cancellation.
inline double neg_log_sigmoid(double x) { return softplus(-x); }

inline double normal_pdf(double x) {
  static const double kInvSqrt2Pi = 0.3989422804014326779;
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Standard normal CDF. erfc keeps the lower tail accurate.
inline double normal_cdf(double x) {
  static const double kInvSqrt2 = 0.7071067811865475244;
  return 0.5 * std::erfc(-x * kInvSqrt2);
}

// -log Phi(x). The erfc route is accurate until Phi underflows; the
// asymptotic branch covers the far lower tail.
inline double neg_log_normal_cdf(double x) {
  if (x > -37.0) return -std::log(normal_cdf(x));
  // log Phi(x) ~ -x^2/2 - log(-x) - log sqrt(2 pi) + log(1 - 1/x^2 + ...)
  const double x2 = x * x;
  return 0.5 * x2 + std::log(-x) + 0.9189385332046727418 - std::log1p(-1.0 / x2);
}

inline double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::exp(v[i] - m);
  return m + std::log(acc);
}

inline Eigen::VectorXd log_softmax(const Eigen::VectorXd& v) {
  return (v.array() - logsumexp(v)).matrix();
}

}  // namespace robustpref
