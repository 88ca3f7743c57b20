#pragma once

// Non-LLM lambda selectors and the regret scorer shared by every selector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cashlab/errors.hpp"
#include "cashlab/lambda_grid.hpp"
#include "cashlab/rmt_oracle.hpp"
#include "cashlab/task_space.hpp"

namespace cashlab {

struct SelectorResult {
  double chosen_lambda = 0.0;
  double regret = 0.0;
  std::string selector_name;
  std::size_t trial_id = 0;
  int retries = 0;
  bool fallback = false;
};

/// E(chosen) - E(lambda*); zero when the selector hits the argmin.
inline double regret(double chosen, const ErrorCurve& curve) {
  bool on_grid = false;
  for (double l : curve.lambdas) on_grid = on_grid || l == chosen;
  if (!on_grid) throw DomainError(fmt::format("chosen lambda {} is not a grid value", chosen));
  return curve.error_at(chosen) - curve.min_error();
}

/// Grid point nearest (in log10) to the geometric mean of the support lambda*.
inline double log_mean_select(const Trial& trial, const LambdaGrid& grid) {
  if (trial.support.empty()) throw InsufficientContextError("log-mean selector needs k >= 1 support tasks");
  double sum = 0.0;
  for (const auto& s : trial.support) sum += std::log10(s.lambda_star);
  return grid[grid.nearest_index_log10(sum / static_cast<double>(trial.support.size()))];
}

struct LogisticOptions {
  /// Inverse L2 strength: objective is 0.5 |W|^2 + c * sum of cross-entropies.
  double c = 1.0;
  int max_iterations = 500;
  double tolerance = 1e-8;
};

/// Raw generator parameters (n1, n2, eps..., alpha1, alpha2) with eps = -mu2.
inline Eigen::VectorXd task_features(const TaskSpec& t) {
  Eigen::VectorXd f(4 + t.d());
  f(0) = t.n1;
  f(1) = t.n2;
  for (int i = 0; i < t.d(); ++i) f(2 + i) = -t.mu2(i);
  f(2 + t.d()) = t.alpha1;
  f(3 + t.d()) = t.alpha2;
  return f;
}

/// Multinomial logistic regression fitted by full-batch gradient descent with
/// Armijo backtracking. Deterministic for a given (x, labels) ordering.
class SoftmaxClassifier {
 public:
  SoftmaxClassifier(int num_classes, const LogisticOptions& opt = {}) : classes_(num_classes), opt_(opt) {}

  /// x: samples in rows (already standardized). labels in [0, num_classes).
  void fit(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
    const int p = static_cast<int>(x.cols());
    weights_ = Eigen::MatrixXd::Zero(classes_, p);
    bias_ = Eigen::VectorXd::Zero(classes_);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(x.rows(), classes_);
    for (Eigen::Index i = 0; i < x.rows(); ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

    double step = 1.0;
    double f = objective(x, onehot, weights_, bias_);
    iterations_ = 0;
    for (int it = 0; it < opt_.max_iterations; ++it) {
      iterations_ = it + 1;
      const Eigen::MatrixXd prob = probabilities(x, weights_, bias_);
      const Eigen::MatrixXd resid = opt_.c * (prob - onehot);
      const Eigen::MatrixXd grad_w = weights_ + resid.transpose() * x;
      const Eigen::VectorXd grad_b = resid.colwise().sum().transpose();
      const double g2 = grad_w.squaredNorm() + grad_b.squaredNorm();
      if (std::sqrt(g2) <= opt_.tolerance) break;

      step = std::min(step * 2.0, 1e3);
      double f_new = f;
      Eigen::MatrixXd w_new;
      Eigen::VectorXd b_new;
      for (int bt = 0; bt < 60; ++bt) {
        w_new = weights_ - step * grad_w;
        b_new = bias_ - step * grad_b;
        f_new = objective(x, onehot, w_new, b_new);
        if (f_new <= f - 1e-4 * step * g2) break;
        step *= 0.5;
      }
      if (!(f_new < f)) break;
      weights_ = std::move(w_new);
      bias_ = std::move(b_new);
      const double change = f - f_new;
      f = f_new;
      if (change <= opt_.tolerance * std::max(1.0, std::abs(f))) break;
    }
    objective_ = f;
  }

  /// Highest-scoring class; ties go to the lower index.
  int predict(const Eigen::VectorXd& features) const {
    const Eigen::VectorXd scores = weights_ * features + bias_;
    int best = 0;
    for (int k = 1; k < classes_; ++k)
      if (scores(k) > scores(best)) best = k;
    return best;
  }

  int iterations() const noexcept { return iterations_; }
  double objective() const noexcept { return objective_; }

 private:
  static Eigen::MatrixXd probabilities(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w,
                                       const Eigen::VectorXd& b) {
    Eigen::MatrixXd z = (x * w.transpose()).rowwise() + b.transpose();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      z.row(i) = (z.row(i).array() - mx).exp();
      z.row(i) /= z.row(i).sum();
    }
    return z;
  }

  double objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& onehot, const Eigen::MatrixXd& w,
                   const Eigen::VectorXd& b) const {
    const Eigen::MatrixXd z = (x * w.transpose()).rowwise() + b.transpose();
    double ce = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
      ce += lse - z.row(i).dot(onehot.row(i));
    }
    return 0.5 * w.squaredNorm() + opt_.c * ce;
  }

  int classes_;
  LogisticOptions opt_;
  Eigen::MatrixXd weights_;
  Eigen::VectorXd bias_;
  int iterations_ = 0;
  double objective_ = 0.0;
};

/// Supervised meta-learner trained on the trial's own support set.
///
/// A single distinct support class is returned directly; with k < 3 and
/// several classes the log-mean rule is used instead of a fit.
inline double logistic_select(const Trial& trial, const LambdaGrid& grid, const LogisticOptions& opt = {}) {
  if (trial.support.empty()) throw InsufficientContextError("logistic selector needs k >= 1 support tasks");

  struct Sample {
    Eigen::VectorXd f;
    int label;
  };
  std::vector<Sample> samples;
  samples.reserve(trial.support.size());
  for (const auto& s : trial.support) {
    const auto idx = grid.index_of(s.lambda_star);
    if (!idx) throw DomainError(fmt::format("support lambda* {} is not a grid value", s.lambda_star));
    samples.push_back({task_features(s.task), static_cast<int>(*idx)});
  }

  const bool single_class = std::all_of(samples.begin(), samples.end(),
                                        [&](const Sample& s) { return s.label == samples.front().label; });
  if (single_class) return grid[static_cast<std::size_t>(samples.front().label)];
  if (samples.size() < 3) return log_mean_select(trial, grid);

  // Canonical order makes the fit independent of support order bit-for-bit.
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
    for (Eigen::Index i = 0; i < a.f.size(); ++i)
      if (a.f(i) != b.f(i)) return a.f(i) < b.f(i);
    return a.label < b.label;
  });

  const auto k = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index p = samples.front().f.size();
  Eigen::MatrixXd x(k, p);
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < k; ++i) {
    x.row(i) = samples[static_cast<std::size_t>(i)].f.transpose();
    labels.push_back(samples[static_cast<std::size_t>(i)].label);
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd sd = ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(k)).sqrt();
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(sd(j) > 0.0)) sd(j) = 1.0;
  const Eigen::MatrixXd xs = (x.rowwise() - mean).array().rowwise() / sd.array();

  SoftmaxClassifier clf(static_cast<int>(grid.size()), opt);
  clf.fit(xs, labels);
  const Eigen::VectorXd target =
      ((task_features(trial.target).transpose() - mean).array() / sd.array()).matrix().transpose();
  return grid[static_cast<std::size_t>(clf.predict(target))];
}

}  // namespace cashlab
