#pragma once

// Deterministic-equivalent test error of the ridge regression classifier on a
// two-class Gaussian mixture.
//
// The label contractions y^T J (.) / n reduce to (c1, -c2) because labels are
// constant within a class, so no n-sized object is ever built.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cashlab/errors.hpp"
#include "cashlab/gaussian.hpp"
#include "cashlab/lambda_grid.hpp"

namespace cashlab {

/// One synthetic two-class Gaussian classification task.
struct TaskSpec {
  int n1 = 0;
  int n2 = 0;
  Eigen::VectorXd mu1;
  Eigen::VectorXd mu2;
  double alpha1 = 0.0;
  double alpha2 = 0.0;

  int d() const noexcept { return static_cast<int>(mu1.size()); }
  int n() const noexcept { return n1 + n2; }

  void validate() const {
    if (n1 < 1 || n2 < 1) throw DomainError("class sample counts must be >= 1");
    if (mu1.size() < 1) throw DomainError("feature dimension must be >= 1");
    if (mu1.size() != mu2.size()) throw DomainError("mean vectors must have equal length");
    for (double a : {alpha1, alpha2})
      if (!(a >= 0.0 && a < 1.0)) throw DomainError(fmt::format("AR(1) coefficient {} not in [0,1)", a));
  }

  friend bool operator==(const TaskSpec& a, const TaskSpec& b) {
    return a.n1 == b.n1 && a.n2 == b.n2 && a.mu1 == b.mu1 && a.mu2 == b.mu2 &&
           a.alpha1 == b.alpha1 && a.alpha2 == b.alpha2;
  }
};

/// Sigma_ij = alpha^|i-j|.
inline Eigen::MatrixXd build_toeplitz_covariance(double alpha, int d) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw DomainError(fmt::format("AR(1) coefficient {} not in [0,1)", alpha));
  if (d < 1) throw DomainError("dimension must be >= 1");
  Eigen::MatrixXd sigma(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) sigma(i, j) = std::pow(alpha, std::abs(i - j));
  return sigma;
}

/// First and second moments of one class; c_mat = sigma + mu mu^T.
struct ClassModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd c_mat;

  static ClassModel make(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size())
      throw DomainError("covariance shape does not match mean length");
    Eigen::MatrixXd c = sigma + mu * mu.transpose();
    return {std::move(mu), std::move(sigma), std::move(c)};
  }
};

/// Class sizes plus class models. Everything in the oracle works on this.
struct TwoClassProblem {
  int n1 = 0;
  int n2 = 0;
  std::array<ClassModel, 2> classes;

  double n() const noexcept { return static_cast<double>(n1) + n2; }
  double c(int k) const noexcept { return (k == 0 ? n1 : n2) / n(); }
  int d() const noexcept { return static_cast<int>(classes[0].mu.size()); }

  static TwoClassProblem from_task(const TaskSpec& task) {
    task.validate();
    return {task.n1,
            task.n2,
            {ClassModel::make(task.mu1, build_toeplitz_covariance(task.alpha1, task.d())),
             ClassModel::make(task.mu2, build_toeplitz_covariance(task.alpha2, task.d()))}};
  }
};

struct FixedPointOptions {
  double tolerance = 1e-10;
  int max_iterations = 10000;
  /// Iterations without a new best residual before damping kicks in.
  int stall_window = 100;
  double damping = 0.5;
  std::array<double, 2> initial_delta{1.0, 1.0};
};

struct DeterministicEquivalents {
  std::array<double, 2> delta{};
  Eigen::MatrixXd q_bar;
  double lambda = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool damped = false;
};

namespace detail {

inline Eigen::MatrixXd resolvent(const TwoClassProblem& p, const std::array<double, 2>& delta,
                                 double lambda) {
  const int d = p.d();
  Eigen::MatrixXd m = lambda * Eigen::MatrixXd::Identity(d, d);
  for (int k = 0; k < 2; ++k) m += (p.c(k) / (1.0 + delta[k])) * p.classes[k].c_mat;
  Eigen::MatrixXd q = m.llt().solve(Eigen::MatrixXd::Identity(d, d));
  return 0.5 * (q + q.transpose());
}

inline std::array<double, 2> delta_map(const TwoClassProblem& p, const Eigen::MatrixXd& q_bar) {
  return {(p.classes[0].c_mat * q_bar).trace() / p.n(),
          (p.classes[1].c_mat * q_bar).trace() / p.n()};
}

}  // namespace detail

/// Solves Q = (sum_k c_k C_k / (1 + delta_k) + lambda I)^-1, delta_k = tr(C_k Q) / n.
///
/// Plain Picard iteration from `initial_delta`; switches to damped updates if the
/// residual has not improved for `stall_window` steps.
inline DeterministicEquivalents solve_fixed_point(const TwoClassProblem& p, double lambda,
                                                  const FixedPointOptions& opt = {}) {
  if (!(lambda > 0.0)) throw DomainError(fmt::format("lambda must be > 0, got {}", lambda));

  std::array<double, 2> delta = opt.initial_delta;
  double residual = std::numeric_limits<double>::infinity();
  double best_residual = residual;
  int since_best = 0;
  double step = 1.0;
  bool damped = false;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    const auto next = detail::delta_map(p, detail::resolvent(p, delta, lambda));
    residual = std::max(std::abs(next[0] - delta[0]), std::abs(next[1] - delta[1]));
    for (int k = 0; k < 2; ++k) delta[k] += step * (next[k] - delta[k]);

    if (residual <= opt.tolerance) {
      DeterministicEquivalents de;
      de.delta = delta;
      de.q_bar = detail::resolvent(p, delta, lambda);
      de.lambda = lambda;
      de.residual = residual;
      de.iterations = it;
      de.damped = damped;
      return de;
    }
    if (residual < best_residual) {
      best_residual = residual;
      since_best = 0;
    } else if (++since_best >= opt.stall_window && !damped) {
      damped = true;
      step = opt.damping;
    }
  }
  throw ConvergenceError(
      fmt::format("fixed point did not converge in {} iterations (residual {:.3e}, lambda {})",
                  opt.max_iterations, residual, lambda),
      residual, opt.max_iterations);
}

inline DeterministicEquivalents solve_fixed_point(const TaskSpec& task, double lambda,
                                                  const FixedPointOptions& opt = {}) {
  return solve_fixed_point(TwoClassProblem::from_task(task), lambda, opt);
}

/// Second-order deterministic equivalents: V, A, t^(j), d^(j) and K_j.
struct SecondOrderTerms {
  Eigen::Matrix2d v_mat;
  Eigen::Matrix2d a_mat;
  std::array<Eigen::Vector2d, 2> t_vecs;
  std::array<Eigen::Vector2d, 2> d_vecs;
  std::array<Eigen::MatrixXd, 2> k_mats;
};

inline SecondOrderTerms compute_second_order(const TwoClassProblem& p,
                                             const DeterministicEquivalents& de) {
  const Eigen::MatrixXd& q = de.q_bar;
  const double n = p.n();
  const auto& delta = de.delta;

  std::array<Eigen::MatrixXd, 2> qcq;
  for (int k = 0; k < 2; ++k) qcq[k] = q * p.classes[k].c_mat * q;

  SecondOrderTerms so;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) so.v_mat(i, j) = (p.classes[i].c_mat * qcq[j]).trace() / n;
  so.a_mat.setZero();
  for (int k = 0; k < 2; ++k) so.a_mat(k, k) = p.c(k) / ((1.0 + delta[k]) * (1.0 + delta[k]));

  const Eigen::Matrix2d system = Eigen::Matrix2d::Identity() - so.v_mat * so.a_mat;
  if (std::abs(system.determinant()) < 1e-12)
    throw SingularityError(fmt::format("I - V A is singular at lambda {}", de.lambda));
  const auto lu = system.partialPivLu();

  for (int j = 0; j < 2; ++j) {
    const Eigen::MatrixXd qsq = q * p.classes[j].sigma * q;
    for (int i = 0; i < 2; ++i) so.t_vecs[j](i) = (p.classes[i].c_mat * qsq).trace() / n;
    so.d_vecs[j] = lu.solve(so.t_vecs[j]);
    // The class-1 term carries c2 and the class-2 term carries c1.
    Eigen::MatrixXd k = qsq;
    k += (p.c(1) * so.d_vecs[j](0) / ((1.0 + delta[0]) * (1.0 + delta[0]))) * qcq[0];
    k += (p.c(0) * so.d_vecs[j](1) / ((1.0 + delta[1]) * (1.0 + delta[1]))) * qcq[1];
    so.k_mats[j] = 0.5 * (k + k.transpose());
  }
  return so;
}

/// Limiting class-conditional score moments, optimal threshold and balanced error.
struct ScoreStatistics {
  std::array<double, 2> m{};
  std::array<double, 2> v{};
  double eta_star = 0.0;
  double error = 0.5;
};

inline ScoreStatistics score_statistics(const TwoClassProblem& p,
                                        const DeterministicEquivalents& de,
                                        const SecondOrderTerms& so) {
  const Eigen::MatrixXd& q = de.q_bar;
  const double n = p.n();
  const auto& delta = de.delta;
  const std::array<double, 2> sign{1.0, -1.0};

  // y^T J M_delta / n as a d-vector.
  Eigen::VectorXd u = Eigen::VectorXd::Zero(p.d());
  for (int a = 0; a < 2; ++a) u += (sign[a] * p.c(a) / (1.0 + delta[a])) * p.classes[a].mu;
  const Eigen::VectorXd qu = q * u;

  ScoreStatistics st;
  for (int k = 0; k < 2; ++k) {
    st.m[k] = qu.dot(p.classes[k].mu);

    const Eigen::MatrixXd& kk = so.k_mats[k];
    double per_sample = 0.0;
    Eigen::VectorXd u_delta = Eigen::VectorXd::Zero(p.d());
    for (int a = 0; a < 2; ++a) {
      const double tr = (p.classes[a].sigma * kk).trace();
      const double one_plus = 1.0 + delta[a];
      per_sample += p.c(a) * tr / (one_plus * one_plus);
      u_delta += (sign[a] * p.c(a) * tr / (n * one_plus * one_plus)) * p.classes[a].mu;
    }
    per_sample /= n;
    const double mean_part = u.dot(kk * u);
    const double cross = -2.0 * u_delta.dot(qu);
    st.v[k] = per_sample + mean_part + cross;
    if (!(st.v[k] > 0.0) || !std::isfinite(st.v[k]))
      throw NumericalValidityError(
          fmt::format("score variance v{} = {} is not positive at lambda {}", k + 1, st.v[k], de.lambda));
  }

  const auto [err, eta] = two_gaussian_error({st.m[0], st.v[0]}, {st.m[1], st.v[1]});
  st.eta_star = eta;
  st.error = err;
  return st;
}

/// Full pipeline for one (problem, lambda) pair.
inline ScoreStatistics deterministic_test_error(const TwoClassProblem& p, double lambda,
                                                const FixedPointOptions& opt = {}) {
  const auto de = solve_fixed_point(p, lambda, opt);
  return score_statistics(p, de, compute_second_order(p, de));
}

/// Balanced test error for every grid value, plus its argmin.
struct ErrorCurve {
  std::vector<double> lambdas;
  std::vector<double> errors;
  std::size_t argmin = 0;

  double lambda_star() const { return lambdas.at(argmin); }
  double min_error() const { return errors.at(argmin); }

  double error_at(double lambda) const {
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      if (lambdas[i] == lambda) return errors[i];
    throw DomainError(fmt::format("lambda {} is not on the curve's grid", lambda));
  }
};

/// Index of the smallest value; exact ties resolve to the lowest index.
inline std::size_t argmin_first(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] < values[best]) best = i;
  return best;
}

inline ErrorCurve error_curve(const TaskSpec& task, const LambdaGrid& grid,
                              const FixedPointOptions& opt = {}) {
  const auto p = TwoClassProblem::from_task(task);
  ErrorCurve curve;
  curve.lambdas = grid.values();
  curve.errors.reserve(grid.size());
  for (double lambda : grid) {
    const auto tag = [&](const Error& e) { return fmt::format("{} [lambda={}]", e.what(), lambda); };
    try {
      curve.errors.push_back(deterministic_test_error(p, lambda, opt).error);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(tag(e), e.residual(), e.iterations());
    } catch (const SingularityError& e) {
      throw SingularityError(tag(e));
    } catch (const NumericalValidityError& e) {
      throw NumericalValidityError(tag(e));
    }
  }
  curve.argmin = argmin_first(curve.errors);
  return curve;
}

}  // namespace cashlab
