#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <vector>

#include <fmt/format.h>

#include "cashlab/errors.hpp"

namespace cashlab {

/// Ordered set of admissible ridge penalties.
class LambdaGrid {
 public:
  explicit LambdaGrid(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DomainError("lambda grid must not be empty");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!(values_[i] > 0.0) || !std::isfinite(values_[i]))
        throw DomainError(fmt::format("lambda grid value {} is not a positive real", values_[i]));
      if (i > 0 && !(values_[i] > values_[i - 1]))
        throw DomainError("lambda grid must be strictly increasing");
    }
  }
  LambdaGrid(std::initializer_list<double> values) : LambdaGrid(std::vector<double>(values)) {}

  /// The eight-point decade grid 1e-4 ... 1e3.
  static LambdaGrid decades() {
    std::vector<double> v;
    for (int e = -4; e <= 3; ++e) v.push_back(std::pow(10.0, e));
    return LambdaGrid(std::move(v));
  }

  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_.at(i); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  std::optional<std::size_t> index_of(double lambda) const {
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (values_[i] == lambda) return i;
    return std::nullopt;
  }
  bool contains(double lambda) const { return index_of(lambda).has_value(); }

  /// Index of the grid point nearest to 10^log_x in log10 distance.
  /// Distances within 1e-12 of each other count as ties and go to the smaller value.
  std::size_t nearest_index_log10(double log_x) const {
    std::size_t best = 0;
    double best_dist = std::abs(log_x - std::log10(values_[0]));
    for (std::size_t i = 1; i < values_.size(); ++i) {
      const double dist = std::abs(log_x - std::log10(values_[i]));
      if (dist < best_dist - 1e-12) {
        best = i;
        best_dist = dist;
      }
    }
    return best;
  }

  std::size_t nearest_index(double x) const {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("cannot snap a non-positive value to a log grid");
    return nearest_index_log10(std::log10(x));
  }
  double snap(double x) const { return values_[nearest_index(x)]; }

  /// Middle element; the lower of the two for even sizes.
  double median() const { return values_[(values_.size() - 1) / 2]; }

  friend bool operator==(const LambdaGrid&, const LambdaGrid&) = default;

 private:
  std::vector<double> values_;
};

}  // namespace cashlab
