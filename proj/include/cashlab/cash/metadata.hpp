#pragma once

// Markdown-style dataset summary shown to the model in place of raw data.

#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cashlab/errors.hpp"
#include "cashlab/format.hpp"

namespace cashlab::cash {

struct CategoricalStats {
  double min = 0, max = 0, median = 0, mode = 0;
};

struct TargetStats {
  double min = 0, max = 0, mean = 0, median = 0, std = 0, skewness = 0, kurtosis = 0;
};

struct DatasetMetadata {
  std::string name;
  std::string prediction_type;  // "regression" or "classification"
  std::string score_name;
  long long n_train = 0;
  long long n_test = 0;
  long long features_total = 0;
  long long features_numeric = 0;
  long long features_categorical = 0;
  double numerical_range_avg = 0.0;
  CategoricalStats categorical;
  bool has_missing = false;
  long long total_missing_values = 0;
  double data_density = 1.0;
  TargetStats target;

  void validate() const {
    if (prediction_type != "regression" && prediction_type != "classification")
      throw DomainError(fmt::format("prediction_type must be regression or classification, got '{}'", prediction_type));
    if (n_train < 0 || n_test < 0 || features_total < 0 || features_numeric < 0 || features_categorical < 0 ||
        total_missing_values < 0)
      throw DomainError("metadata counts must be nonnegative");
    if (features_numeric + features_categorical > features_total)
      throw DomainError("numeric + categorical features exceed the total");
    if (!(data_density >= 0.0 && data_density <= 1.0)) throw DomainError("data_density must lie in [0, 1]");
  }

  static DatasetMetadata from_json(const nlohmann::json& j) {
    DatasetMetadata m;
    try {
      m.name = j.at("name").get<std::string>();
      m.prediction_type = j.at("prediction_type").get<std::string>();
      m.score_name = j.at("score_name").get<std::string>();
      m.n_train = j.at("n_train").get<long long>();
      m.n_test = j.at("n_test").get<long long>();
      const auto& f = j.at("features");
      m.features_total = f.at("total").get<long long>();
      m.features_numeric = f.at("numeric").get<long long>();
      m.features_categorical = f.at("categorical").get<long long>();
      m.numerical_range_avg = f.value("numerical_range_avg", 0.0);
      if (m.features_categorical > 0) {
        const auto& c = j.at("unique_values_per_categorical");
        m.categorical = {c.at("min").get<double>(), c.at("max").get<double>(), c.at("median").get<double>(),
                         c.at("mode").get<double>()};
      }
      const auto& miss = j.at("missing_data");
      m.has_missing = miss.at("has_missing").get<bool>();
      m.total_missing_values = miss.value("total_missing_values", 0LL);
      m.data_density = miss.value("data_density", 1.0);
      const auto& t = j.at("target_values");
      m.target = {t.at("min").get<double>(),    t.at("max").get<double>(),  t.at("mean").get<double>(),
                  t.at("median").get<double>(), t.at("std").get<double>(),  t.at("skewness").get<double>(),
                  t.at("kurtosis").get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("malformed metadata: ") + e.what());
    }
    m.validate();
    return m;
  }
};

/// Renders the fixed block layout. Ratios and ranges keep two decimals,
/// target statistics three; the categorical section is omitted when the
/// dataset has no categorical features.
inline std::string render_metadata(const DatasetMetadata& md) {
  constexpr const char* sep = "    ";
  auto r2 = [](double x) { return format_float_repr(round_to(x, 2)); };
  auto r3 = [](double x) { return format_float_repr(round_to(x, 3)); };
  auto r3c = [](double x) { return format_number_compact(round_to(x, 3)); };

  const double ratio = md.n_test > 0 ? static_cast<double>(md.n_train) / static_cast<double>(md.n_test) : 0.0;
  const long long missing = md.has_missing ? md.total_missing_values : 0;

  std::string out;
  out += fmt::format("# Metadata for {}\n\n", md.name);
  out += fmt::format("## name\n{}\n\n", md.name);
  out += fmt::format("## prediction_type\n{}\n\n", md.prediction_type);
  out += fmt::format("## score_name\n{}\n\n", md.score_name);
  out += fmt::format("## n_train: {}{}n_test: {}{}total_samples: {}{}train_test_ratio: {}\n\n", md.n_train, sep,
                     md.n_test, sep, md.n_train + md.n_test, sep, r2(ratio));
  out += fmt::format("## features\ntotal: {}{}numeric: {}{}numerical_range_avg: {}{}categorical: {}\n\n",
                     md.features_total, sep, md.features_numeric, sep, r2(md.numerical_range_avg), sep,
                     md.features_categorical);
  if (md.features_categorical > 0) {
    const auto& c = md.categorical;
    out += fmt::format("### unique_values_per_categorical\nmin: {}{}max: {}{}median: {}{}mode: {}\n\n",
                       r3c(c.min), sep, r3c(c.max), sep, r3c(c.median), sep, r3c(c.mode));
  }
  out += fmt::format("## missing_data\nhas_missing: {}{}total_missing_values: {}{}data_density: {}\n\n",
                     md.has_missing ? "True" : "False", sep, missing, sep, r3(md.data_density));
  const auto& t = md.target;
  out += fmt::format(
      "## target_values\nmin: {}{}max: {}{}mean: {}{}median: {}{}std: {}{}skewness: {}{}kurtosis: {}\n", r3c(t.min),
      sep, r3c(t.max), sep, r3(t.mean), sep, r3(t.median), sep, r3(t.std), sep, r3(t.skewness), sep, r3(t.kurtosis));
  return out;
}

}  // namespace cashlab::cash
