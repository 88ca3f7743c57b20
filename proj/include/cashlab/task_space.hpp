#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cashlab/errors.hpp"
#include "cashlab/format.hpp"
#include "cashlab/lambda_grid.hpp"
#include "cashlab/rmt_oracle.hpp"
#include "cashlab/seeding.hpp"

namespace cashlab {

/// Draws one task: d = 2, n_k ~ U{10..500}, mu1 = (1,1), mu2 = -eps with
/// eps_i ~ U[0,2], alpha_k ~ U[0,0.9]; eps and alpha rounded to two decimals.
///
/// Draw order is n1, n2, eps1, eps2, alpha1, alpha2.
inline TaskSpec generate_task(Rng& rng) {
  std::uniform_int_distribution<int> count(10, 500);
  std::uniform_real_distribution<double> eps(0.0, 2.0);
  std::uniform_real_distribution<double> alpha(0.0, 0.9);

  TaskSpec t;
  t.n1 = count(rng);
  t.n2 = count(rng);
  t.mu1 = Eigen::VectorXd::Ones(2);
  t.mu2 = Eigen::VectorXd(2);
  for (int i = 0; i < 2; ++i) {
    const double e = round_to(eps(rng), 2);
    t.mu2(i) = e == 0.0 ? 0.0 : -e;
  }
  t.alpha1 = round_to(alpha(rng), 2);
  t.alpha2 = round_to(alpha(rng), 2);
  return t;
}

struct SupportExample {
  TaskSpec task;
  double lambda_star = 0.0;
};

/// k solved support tasks plus one target task.
struct Trial {
  std::vector<SupportExample> support;
  TaskSpec target;
  double target_lambda_star = 0.0;
  ErrorCurve target_curve;

  std::size_t k() const noexcept { return support.size(); }
};

using CurveFn = std::function<ErrorCurve(const TaskSpec&)>;

/// Generates k support tasks then the target, solving each with `curve_fn`.
inline Trial generate_trial(Rng& rng, std::size_t k, const CurveFn& curve_fn) {
  Trial trial;
  trial.support.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    TaskSpec t = generate_task(rng);
    const double star = curve_fn(t).lambda_star();
    trial.support.push_back({std::move(t), star});
  }
  trial.target = generate_task(rng);
  trial.target_curve = curve_fn(trial.target);
  trial.target_lambda_star = trial.target_curve.lambda_star();
  return trial;
}

/// Curve function backed by the deterministic-equivalent oracle.
inline CurveFn rmt_curve_fn(LambdaGrid grid) {
  return [grid = std::move(grid)](const TaskSpec& t) { return error_curve(t, grid); };
}

using TaskId = std::variant<long long, std::string>;

namespace detail {

inline std::string json_list(const Eigen::VectorXd& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_float_repr(v(i) == 0.0 ? 0.0 : v(i));
  }
  return out + "]";
}

inline std::string json_id(const TaskId& id) {
  if (const auto* n = std::get_if<long long>(&id)) return std::to_string(*n);
  return nlohmann::json(std::get<std::string>(id)).dump();
}

}  // namespace detail

/// One-line task object with fixed key order:
/// task_id, n1, n2, mu1, mu2, alpha1, alpha2[, lambda_star].
inline std::string task_to_json(const TaskSpec& t, const TaskId& id,
                                std::optional<double> lambda_star = std::nullopt) {
  std::string out = "{\"task_id\": " + detail::json_id(id);
  out += ", \"n1\": " + std::to_string(t.n1);
  out += ", \"n2\": " + std::to_string(t.n2);
  out += ", \"mu1\": " + detail::json_list(t.mu1);
  out += ", \"mu2\": " + detail::json_list(t.mu2);
  out += ", \"alpha1\": " + format_float_repr(t.alpha1);
  out += ", \"alpha2\": " + format_float_repr(t.alpha2);
  if (lambda_star) out += ", \"lambda_star\": " + format_float_repr(*lambda_star);
  return out + "}";
}

struct ParsedTask {
  TaskSpec task;
  TaskId id;
  std::optional<double> lambda_star;
};

inline ParsedTask task_from_json(const nlohmann::json& j) {
  try {
    ParsedTask out;
    const auto& id = j.at("task_id");
    if (id.is_number_integer()) out.id = id.get<long long>();
    else out.id = id.get<std::string>();
    out.task.n1 = j.at("n1").get<int>();
    out.task.n2 = j.at("n2").get<int>();
    const auto mu1 = j.at("mu1").get<std::vector<double>>();
    const auto mu2 = j.at("mu2").get<std::vector<double>>();
    out.task.mu1 = Eigen::Map<const Eigen::VectorXd>(mu1.data(), static_cast<Eigen::Index>(mu1.size()));
    out.task.mu2 = Eigen::Map<const Eigen::VectorXd>(mu2.data(), static_cast<Eigen::Index>(mu2.size()));
    out.task.alpha1 = j.at("alpha1").get<double>();
    out.task.alpha2 = j.at("alpha2").get<double>();
    if (j.contains("lambda_star")) out.lambda_star = j.at("lambda_star").get<double>();
    out.task.validate();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed task object: ") + e.what());
  }
}

inline ParsedTask task_from_json(const std::string& text) {
  try {
    return task_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw DomainError(std::string("task is not valid JSON: ") + e.what());
  }
}

/// "[0.0001, 0.001, ..., 1000.0]".
inline std::string grid_to_json(const LambdaGrid& grid) {
  std::string out = "[";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i) out += ", ";
    out += format_float_repr(grid[i]);
  }
  return out + "]";
}

/// Support tasks as a JSON array, one object per line, ids 0..k-1.
inline std::string support_to_json(const std::vector<SupportExample>& support) {
  if (support.empty()) return "[]";
  std::string out = "[\n";
  for (std::size_t i = 0; i < support.size(); ++i) {
    out += "  " + task_to_json(support[i].task, static_cast<long long>(i), support[i].lambda_star);
    out += i + 1 < support.size() ? ",\n" : "\n";
  }
  return out + "]";
}

/// Structured dump of a whole trial (used by the `generate` verb).
inline nlohmann::ordered_json trial_to_json(const Trial& trial, std::size_t trial_id) {
  nlohmann::ordered_json j;
  j["trial_id"] = trial_id;
  j["k"] = trial.k();
  auto& support = j["support"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < trial.support.size(); ++i)
    support.push_back(nlohmann::ordered_json::parse(
        task_to_json(trial.support[i].task, static_cast<long long>(i), trial.support[i].lambda_star)));
  j["target"] = nlohmann::ordered_json::parse(task_to_json(trial.target, std::string("NEW"), trial.target_lambda_star));
  j["target_errors"] = trial.target_curve.errors;
  return j;
}

}  // namespace cashlab
