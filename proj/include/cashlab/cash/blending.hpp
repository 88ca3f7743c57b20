#pragma once

// Greedy forward blending over out-of-fold prediction vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cashlab/errors.hpp"

namespace cashlab::cash {

enum class Metric { rmse, mae, rmsle, accuracy, log_loss, auc };

inline Metric metric_from_string(std::string_view s) {
  if (s == "rmse") return Metric::rmse;
  if (s == "mae") return Metric::mae;
  if (s == "rmsle") return Metric::rmsle;
  if (s == "accuracy") return Metric::accuracy;
  if (s == "log_loss" || s == "logloss") return Metric::log_loss;
  if (s == "auc") return Metric::auc;
  throw ConfigError(fmt::format("unknown metric '{}'", s));
}

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::rmse: return "rmse";
    case Metric::mae: return "mae";
    case Metric::rmsle: return "rmsle";
    case Metric::accuracy: return "accuracy";
    case Metric::log_loss: return "log_loss";
    case Metric::auc: return "auc";
  }
  return "rmse";
}

inline bool higher_is_better(Metric m) { return m == Metric::accuracy || m == Metric::auc; }

namespace detail {

inline bool is_binary(const Eigen::VectorXd& y) {
  return (y.array() == 0.0 || y.array() == 1.0).all();
}

inline double auc(const Eigen::VectorXd& p, const Eigen::VectorXd& y) {
  const auto n = static_cast<std::size_t>(p.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p(a) < p(b); });
  // Mid-ranks for ties (Mann-Whitney U).
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && p(order[j + 1]) == p(order[i])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (y(i) == 1.0) {
      pos += 1;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

}  // namespace detail

/// Throws DomainError if `pred` cannot be scored against `target`.
inline void check_compatible(Metric m, const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  if (pred.size() != target.size())
    throw DomainError(fmt::format("prediction length {} differs from target length {}", pred.size(), target.size()));
  if (target.size() == 0) throw DomainError("empty target");
  if (!pred.allFinite() || !target.allFinite()) throw DomainError("predictions and targets must be finite");
  switch (m) {
    case Metric::rmsle:
      if ((pred.array() <= -1.0).any() || (target.array() <= -1.0).any())
        throw DomainError("rmsle needs values above -1");
      break;
    case Metric::accuracy:
    case Metric::log_loss:
      if (!detail::is_binary(target)) throw DomainError(fmt::format("{} needs 0/1 targets", to_string(m)));
      if ((pred.array() < 0.0).any() || (pred.array() > 1.0).any())
        throw DomainError(fmt::format("{} needs probabilities in [0, 1]", to_string(m)));
      break;
    case Metric::auc:
      if (!detail::is_binary(target)) throw DomainError("auc needs 0/1 targets");
      if (target.sum() == 0.0 || target.sum() == static_cast<double>(target.size()))
        throw DomainError("auc needs both classes in the target");
      break;
    default:
      break;
  }
}

/// Raw metric value in its natural direction.
inline double metric_value(Metric m, const Eigen::VectorXd& pred, const Eigen::VectorXd& y) {
  const double n = static_cast<double>(y.size());
  switch (m) {
    case Metric::rmse: return std::sqrt((pred - y).squaredNorm() / n);
    case Metric::mae: return (pred - y).cwiseAbs().sum() / n;
    case Metric::rmsle: {
      const Eigen::ArrayXd d = pred.array().log1p() - y.array().log1p();
      return std::sqrt(d.square().sum() / n);
    }
    case Metric::accuracy: {
      const Eigen::ArrayXd label = (pred.array() >= 0.5).cast<double>();
      return (label == y.array()).cast<double>().sum() / n;
    }
    case Metric::log_loss: {
      constexpr double eps = 1e-15;
      const Eigen::ArrayXd p = pred.array().max(eps).min(1.0 - eps);
      return -(y.array() * p.log() + (1.0 - y.array()) * (1.0 - p).log()).sum() / n;
    }
    case Metric::auc: return detail::auc(pred, y);
  }
  return 0.0;
}

/// Metric in minimization form (maximized metrics are negated).
inline double metric_loss(Metric m, const Eigen::VectorXd& pred, const Eigen::VectorXd& y) {
  const double v = metric_value(m, pred, y);
  return higher_is_better(m) ? -v : v;
}

struct BlendResult {
  std::vector<std::size_t> selection;  // model index per accepted round
  std::vector<double> loss_trace;      // blend loss after each accepted round

  double final_loss() const { return loss_trace.back(); }

  /// Share of each model in the uniform average.
  std::vector<double> weights(std::size_t models) const {
    std::vector<double> w(models, 0.0);
    for (auto i : selection) w[i] += 1.0 / static_cast<double>(selection.size());
    return w;
  }
};

/// Each round adds (with replacement) the model whose inclusion minimizes
/// the loss of the uniform average; stops after `max_rounds` or when no
/// addition strictly improves. Ties go to the lowest model index.
inline BlendResult greedy_blend(const std::vector<Eigen::VectorXd>& preds, const Eigen::VectorXd& target, Metric metric,
                                std::size_t max_rounds) {
  if (preds.empty()) throw DomainError("greedy_blend needs at least one model");
  for (const auto& p : preds) check_compatible(metric, p, target);

  BlendResult out;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(target.size());
  for (std::size_t round = 0; round < max_rounds; ++round) {
    const double count = static_cast<double>(round + 1);
    std::size_t best = 0;
    double best_loss = 0.0;
    for (std::size_t m = 0; m < preds.size(); ++m) {
      const double loss = metric_loss(metric, (sum + preds[m]) / count, target);
      if (m == 0 || loss < best_loss) {
        best = m;
        best_loss = loss;
      }
    }
    if (!out.loss_trace.empty() && !(best_loss < out.loss_trace.back())) break;
    sum += preds[best];
    out.selection.push_back(best);
    out.loss_trace.push_back(best_loss);
  }
  return out;
}

}  // namespace cashlab::cash
