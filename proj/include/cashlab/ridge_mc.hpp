#pragma once

// Monte Carlo ground truth for the ridge classifier's expected balanced error.
// Training sets are sampled; the test error given the trained weights is exact
// because test scores are Gaussian conditional on w.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "cashlab/errors.hpp"
#include "cashlab/gaussian.hpp"
#include "cashlab/lambda_grid.hpp"
#include "cashlab/parallel.hpp"
#include "cashlab/rmt_oracle.hpp"
#include "cashlab/seeding.hpp"

namespace cashlab {

struct McEstimate {
  double mean_error = 0.0;
  double std_error = 0.0;
  int draws = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const McEstimate&, const McEstimate&) = default;
};

/// w = (X^T X / n + lambda I)^-1 X^T y / n.
inline Eigen::VectorXd fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  if (x.rows() < 1) throw DomainError("ridge fit needs at least one sample");
  if (y.size() != x.rows()) throw DomainError("label count does not match sample count");
  if (!(lambda > 0.0)) throw DomainError("lambda must be > 0");
  const double n = static_cast<double>(x.rows());
  Eigen::MatrixXd gram = x.transpose() * x / n;
  gram.diagonal().array() += lambda;
  return gram.llt().solve(x.transpose() * y / n);
}

/// Exact balanced error of the score w^T x at the optimal threshold for fixed w.
inline double conditional_error(const Eigen::VectorXd& w, const TwoClassProblem& p) {
  if (w.size() != p.d()) throw DomainError("weight length does not match task dimension");
  if (!w.allFinite()) throw DomainError("weights must be finite");
  const ScoreGaussian a{w.dot(p.classes[0].mu), w.dot(p.classes[0].sigma * w)};
  const ScoreGaussian b{w.dot(p.classes[1].mu), w.dot(p.classes[1].sigma * w)};
  return two_gaussian_error(a, b).first;
}

inline double conditional_error(const Eigen::VectorXd& w, const TaskSpec& task) {
  return conditional_error(w, TwoClassProblem::from_task(task));
}

struct McOptions {
  std::size_t workers = 1;
};

/// One estimate per grid value. Every lambda reuses the same training draws;
/// draw i is seeded by mix_seed({seed, i}) so results do not depend on `workers`.
inline std::vector<McEstimate> mc_error_curve(const TaskSpec& task, const std::vector<double>& lambdas,
                                              int draws, std::uint64_t seed,
                                              const McOptions& opt = {}) {
  if (draws < 1) throw DomainError("draws must be >= 1");
  for (double l : lambdas)
    if (!(l > 0.0)) throw DomainError("lambda must be > 0");
  const auto p = TwoClassProblem::from_task(task);
  const int d = p.d();
  const double n = p.n();
  const std::array<Eigen::MatrixXd, 2> chol{p.classes[0].sigma.llt().matrixL(),
                                            p.classes[1].sigma.llt().matrixL()};
  const std::array<int, 2> counts{task.n1, task.n2};

  // errors[draw * L + l]
  std::vector<double> errors(static_cast<std::size_t>(draws) * lambdas.size());
  parallel_for(static_cast<std::size_t>(draws), opt.workers, [&](std::size_t draw) {
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(draw)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd xy = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd z(d);
    for (int k = 0; k < 2; ++k) {
      const double label = k == 0 ? 1.0 : -1.0;
      for (int s = 0; s < counts[k]; ++s) {
        for (int j = 0; j < d; ++j) z(j) = normal(rng);
        const Eigen::VectorXd x = p.classes[k].mu + chol[k] * z;
        gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
        xy += label * x;
      }
    }
    gram = gram.selfadjointView<Eigen::Lower>();
    gram /= n;
    xy /= n;
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
      Eigen::MatrixXd system = gram;
      system.diagonal().array() += lambdas[l];
      const Eigen::VectorXd w = system.llt().solve(xy);
      errors[draw * lambdas.size() + l] = conditional_error(w, p);
    }
  });

  std::vector<McEstimate> out;
  out.reserve(lambdas.size());
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    double sum = 0.0;
    for (int i = 0; i < draws; ++i) sum += errors[i * lambdas.size() + l];
    const double mean = sum / draws;
    double ss = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double r = errors[i * lambdas.size() + l] - mean;
      ss += r * r;
    }
    const double se = draws > 1 ? std::sqrt(ss / (draws - 1) / draws) : 0.0;
    out.push_back({mean, se, draws, seed});
  }
  return out;
}

inline std::vector<McEstimate> mc_error_curve(const TaskSpec& task, const LambdaGrid& grid, int draws,
                                              std::uint64_t seed, const McOptions& opt = {}) {
  return mc_error_curve(task, grid.values(), draws, seed, opt);
}

/// Averages conditional_error over `draws` sampled training sets.
inline McEstimate mc_expected_error(const TaskSpec& task, double lambda, int draws, std::uint64_t seed,
                                    const McOptions& opt = {}) {
  return mc_error_curve(task, std::vector<double>{lambda}, draws, seed, opt).front();
}

}  // namespace cashlab
