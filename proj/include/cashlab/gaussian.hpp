#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace cashlab {

/// Standard normal CDF via erfc; accurate in both tails.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Mean and variance of a one-dimensional Gaussian score distribution.
struct ScoreGaussian {
  double mean = 0.0;
  double variance = 0.0;
};

namespace detail {

// P(score < eta) for a Gaussian that may be degenerate (zero variance).
inline double gaussian_below(double eta, double mean, double sd) {
  if (sd > 0.0) return normal_cdf((eta - mean) / sd);
  if (eta > mean) return 1.0;
  if (eta < mean) return 0.0;
  return 0.5;
}

}  // namespace detail

/// Balanced error of the rule "predict the higher-mean class when score > eta".
inline double balanced_error_at(const ScoreGaussian& a, const ScoreGaussian& b, double eta) {
  const ScoreGaussian& hi = a.mean >= b.mean ? a : b;
  const ScoreGaussian& lo = a.mean >= b.mean ? b : a;
  return 0.5 * detail::gaussian_below(eta, hi.mean, std::sqrt(hi.variance)) +
         0.5 * (1.0 - detail::gaussian_below(eta, lo.mean, std::sqrt(lo.variance)));
}

/// Threshold solving (eta - m1)/s1 = +/-(eta - m2)/s2.
///
/// Among the real roots lying in [min(m), max(m)] the one with the smaller
/// balanced error is kept. Equal variances give the midpoint.
inline double optimal_threshold(const ScoreGaussian& a, const ScoreGaussian& b) {
  const double s1 = std::sqrt(std::max(a.variance, 0.0));
  const double s2 = std::sqrt(std::max(b.variance, 0.0));
  const double lo = std::min(a.mean, b.mean);
  const double hi = std::max(a.mean, b.mean);

  if (s1 == s2) return 0.5 * (a.mean + b.mean);

  std::vector<double> roots;
  // Opposite signs: the standardized distances match on either side of eta.
  roots.push_back((a.mean * s2 + b.mean * s1) / (s1 + s2));
  // Same sign: a second crossing, usually outside the interval.
  roots.push_back((a.mean * s2 - b.mean * s1) / (s2 - s1));

  double best_eta = std::numeric_limits<double>::quiet_NaN();
  double best_err = std::numeric_limits<double>::infinity();
  for (double eta : roots) {
    if (!std::isfinite(eta) || eta < lo || eta > hi) continue;
    const double err = balanced_error_at(a, b, eta);
    if (err < best_err) {
      best_err = err;
      best_eta = eta;
    }
  }
  if (std::isnan(best_eta)) best_eta = 0.5 * (a.mean + b.mean);
  return best_eta;
}

/// Balanced error at the optimal threshold, returned together with that threshold.
inline std::pair<double, double> two_gaussian_error(const ScoreGaussian& a,
                                                   const ScoreGaussian& b) {
  const double eta = optimal_threshold(a, b);
  return {balanced_error_at(a, b, eta), eta};
}

}  // namespace cashlab
