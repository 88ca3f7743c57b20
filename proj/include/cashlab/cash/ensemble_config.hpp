#pragma once

// Hyperparameter grids and repair of proposed ensemble configurations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cashlab/errors.hpp"

namespace cashlab::cash {

using GridValue = std::variant<double, std::string>;

inline nlohmann::ordered_json to_json(const GridValue& v) {
  if (const auto* d = std::get_if<double>(&v)) {
    if (*d == std::floor(*d) && std::abs(*d) < 1e15) return static_cast<long long>(*d);
    return *d;
  }
  return std::get<std::string>(v);
}

struct GridColumn {
  std::string name;
  std::vector<double> numeric;       // ascending
  std::vector<std::string> labels;   // categorical options
  bool log_scale = false;

  bool admits(const GridValue& v) const {
    if (const auto* d = std::get_if<double>(&v)) return std::find(numeric.begin(), numeric.end(), *d) != numeric.end();
    return std::find(labels.begin(), labels.end(), std::get<std::string>(v)) != labels.end();
  }
};

struct FamilyGrid {
  std::string family;
  std::vector<GridColumn> columns;

  const GridColumn* column(std::string_view name) const {
    for (const auto& c : columns)
      if (c.name == name) return &c;
    return nullptr;
  }
};

/// Admissible values per family and column. File layout:
/// {"models": {family: {"columns": [...], "values": [[options of column 0], ...]}}}
/// Numeric option lists must be ascending. Columns whose positive numeric
/// options span a factor of 100 or more are projected in log space.
class HyperparameterGrid {
 public:
  static HyperparameterGrid from_json(const nlohmann::json& j) {
    HyperparameterGrid g;
    try {
      for (const auto& [family, body] : j.at("models").items()) {
        FamilyGrid fg{family, {}};
        const auto names = body.at("columns").get<std::vector<std::string>>();
        const auto& values = body.at("values");
        if (!values.is_array() || values.size() != names.size())
          throw ConfigError(fmt::format("grid for {} needs one option list per column", family));
        std::set<std::string> seen;
        for (std::size_t i = 0; i < names.size(); ++i) {
          if (!seen.insert(names[i]).second)
            throw ConfigError(fmt::format("grid for {} repeats column {}", family, names[i]));
          GridColumn col{names[i], {}, {}, false};
          for (const auto& opt : values[i]) {
            if (opt.is_number()) col.numeric.push_back(opt.get<double>());
            else if (opt.is_string()) col.labels.push_back(opt.get<std::string>());
            else throw ConfigError(fmt::format("grid option for {}.{} must be a number or string", family, names[i]));
          }
          if (col.numeric.empty() && col.labels.empty())
            throw ConfigError(fmt::format("grid column {}.{} has no options", family, names[i]));
          if (!std::is_sorted(col.numeric.begin(), col.numeric.end()) ||
              std::adjacent_find(col.numeric.begin(), col.numeric.end()) != col.numeric.end())
            throw ConfigError(fmt::format("numeric options of {}.{} must be strictly ascending", family, names[i]));
          if (!col.numeric.empty() && col.numeric.front() > 0.0)
            col.log_scale = col.numeric.back() / col.numeric.front() >= 100.0;
          fg.columns.push_back(std::move(col));
        }
        g.families_.push_back(std::move(fg));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed hyperparameter grid: ") + e.what());
    }
    return g;
  }

  static HyperparameterGrid load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open grid file {}", path.string()));
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(fmt::format("grid file {} is not valid JSON: {}", path.string(), e.what()));
    }
  }

  const FamilyGrid* family(std::string_view name) const {
    for (const auto& f : families_)
      if (f.family == name) return &f;
    return nullptr;
  }

  const std::vector<FamilyGrid>& families() const { return families_; }

 private:
  std::vector<FamilyGrid> families_;
};

/// Nearest numeric option; ties go to the smaller value.
inline double project_numeric(const GridColumn& col, double x) {
  if (col.numeric.empty()) throw DomainError(fmt::format("column {} has no numeric options", col.name));
  auto dist = [&](double g) {
    if (!col.log_scale) return std::abs(x - g);
    if (x <= 0.0) return g;  // everything is infinitely far; prefer the smallest
    return std::abs(std::log10(x) - std::log10(g));
  };
  double best = col.numeric.front();
  double best_d = dist(best);
  for (double g : col.numeric) {
    const double d = dist(g);
    if (d < best_d) {
      best = g;
      best_d = d;
    }
  }
  return best;
}

struct FamilyConfig {
  std::string family;
  std::vector<std::string> columns;
  std::vector<std::vector<GridValue>> rows;

  bool operator==(const FamilyConfig&) const = default;
};

struct EnsembleConfig {
  std::vector<FamilyConfig> families;

  std::size_t total_models() const {
    std::size_t n = 0;
    for (const auto& f : families) n += f.rows.size();
    return n;
  }

  bool operator==(const EnsembleConfig&) const = default;
};

/// Same shape as the proposal input: {"models": {family: {"columns", "values": [rows]}}}.
inline std::string render_config(const EnsembleConfig& cfg, int indent = -1) {
  nlohmann::ordered_json models = nlohmann::ordered_json::object();
  for (const auto& f : cfg.families) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : f.rows) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (const auto& v : r) row.push_back(to_json(v));
      rows.push_back(std::move(row));
    }
    models[f.family] = {{"columns", f.columns}, {"values", std::move(rows)}};
  }
  return nlohmann::ordered_json{{"models", std::move(models)}}.dump(indent);
}

enum class RejectReason { malformed, bad_categorical, wrong_count, unknown_family, unknown_column };

inline std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::malformed: return "malformed";
    case RejectReason::bad_categorical: return "bad_categorical";
    case RejectReason::wrong_count: return "wrong_count";
    case RejectReason::unknown_family: return "unknown_family";
    case RejectReason::unknown_column: return "unknown_column";
  }
  return "malformed";
}

struct Projection {
  std::string family;
  std::size_t row = 0;
  std::string column;
  double from = 0.0;
  double to = 0.0;
};

struct ConfigRejection {
  RejectReason reason;
  std::string detail;
};

struct AcceptedConfig {
  EnsembleConfig config;
  std::vector<Projection> projections;
};

using ValidationResult = std::variant<AcceptedConfig, ConfigRejection>;

inline bool accepted(const ValidationResult& r) { return std::holds_alternative<AcceptedConfig>(r); }

/// Checks, in order: structure, family names, column names, column
/// coverage and row arity, model count, categorical values. Numeric values
/// off the grid are projected onto it and recorded.
inline ValidationResult validate_config(std::string_view text, const HyperparameterGrid& grid,
                                        std::size_t expected_models = 10) {
  auto reject = [](RejectReason r, std::string detail) -> ValidationResult {
    return ConfigRejection{r, std::move(detail)};
  };

  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    return reject(RejectReason::malformed, std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("models") || !j["models"].is_object())
    return reject(RejectReason::malformed, "expected an object with a \"models\" object");

  for (const auto& [family, body] : j["models"].items()) {
    if (!body.is_object() || !body.contains("columns") || !body.contains("values") || !body["columns"].is_array() ||
        !body["values"].is_array())
      return reject(RejectReason::malformed, fmt::format("{} needs \"columns\" and \"values\" arrays", family));
    for (const auto& c : body["columns"])
      if (!c.is_string()) return reject(RejectReason::malformed, fmt::format("{} column names must be strings", family));
    for (const auto& row : body["values"]) {
      if (!row.is_array()) return reject(RejectReason::malformed, fmt::format("{} rows must be arrays", family));
      for (const auto& v : row)
        if (!v.is_number() && !v.is_string())
          return reject(RejectReason::malformed, fmt::format("{} values must be numbers or strings", family));
    }
  }

  for (const auto& [family, body] : j["models"].items())
    if (!grid.family(family)) return reject(RejectReason::unknown_family, family);

  for (const auto& [family, body] : j["models"].items()) {
    const auto* fg = grid.family(family);
    for (const auto& c : body["columns"])
      if (!fg->column(c.get<std::string>()))
        return reject(RejectReason::unknown_column, fmt::format("{}.{}", family, c.get<std::string>()));
  }

  for (const auto& [family, body] : j["models"].items()) {
    const auto* fg = grid.family(family);
    const auto cols = body["columns"].get<std::vector<std::string>>();
    const std::set<std::string> uniq(cols.begin(), cols.end());
    if (uniq.size() != cols.size()) return reject(RejectReason::malformed, fmt::format("{} repeats a column", family));
    if (cols.size() != fg->columns.size())
      return reject(RejectReason::malformed, fmt::format("{} must list all {} grid columns", family, fg->columns.size()));
    for (std::size_t r = 0; r < body["values"].size(); ++r)
      if (body["values"][r].size() != cols.size())
        return reject(RejectReason::malformed,
                      fmt::format("{} row {} has {} values for {} columns", family, r, body["values"][r].size(), cols.size()));
  }

  std::size_t total = 0;
  for (const auto& [family, body] : j["models"].items()) total += body["values"].size();
  if (total != expected_models)
    return reject(RejectReason::wrong_count, fmt::format("{} models, expected {}", total, expected_models));

  AcceptedConfig out;
  for (const auto& [family, body] : j["models"].items()) {
    const auto* fg = grid.family(family);
    FamilyConfig fc{family, body["columns"].get<std::vector<std::string>>(), {}};
    for (std::size_t r = 0; r < body["values"].size(); ++r) {
      std::vector<GridValue> row;
      for (std::size_t c = 0; c < fc.columns.size(); ++c) {
        const auto& col = *fg->column(fc.columns[c]);
        const auto& v = body["values"][r][c];
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          if (!col.admits(GridValue(s)))
            return reject(RejectReason::bad_categorical, fmt::format("{}.{} = \"{}\"", family, col.name, s));
          row.emplace_back(s);
          continue;
        }
        const double x = v.get<double>();
        if (col.numeric.empty())
          return reject(RejectReason::bad_categorical, fmt::format("{}.{} takes labels, got {}", family, col.name, x));
        const double snapped = project_numeric(col, x);
        if (snapped != x) out.projections.push_back({family, r, col.name, x, snapped});
        row.emplace_back(snapped);
      }
      fc.rows.push_back(std::move(row));
    }
    out.config.families.push_back(std::move(fc));
  }
  return out;
}

}  // namespace cashlab::cash
