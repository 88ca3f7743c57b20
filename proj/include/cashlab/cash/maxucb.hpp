#pragma once

// MaxUCB arm selection: best observed reward plus a squared log bonus.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <fmt/format.h>

#include "cashlab/errors.hpp"
#include "cashlab/seeding.hpp"

namespace cashlab::cash {

struct BanditState {
  std::vector<std::vector<double>> history;  // rewards per arm
  std::size_t t = 0;                         // total pulls so far
  double alpha = 0.5;

  explicit BanditState(std::size_t arms = 0, double alpha_ = 0.5) : history(arms), alpha(alpha_) {}

  std::size_t arms() const { return history.size(); }
  std::size_t pulls(std::size_t arm) const { return history.at(arm).size(); }
};

/// max_reward + (alpha ln(round) / pulls)^2.
inline double maxucb_utility(double max_reward, std::size_t pulls, std::size_t round, double alpha) {
  const double bonus = alpha * std::log(static_cast<double>(round)) / static_cast<double>(pulls);
  return max_reward + bonus * bonus;
}

/// Utility of `arm` when choosing the next round, t + 1.
inline double maxucb_utility(const BanditState& s, std::size_t arm) {
  const auto& h = s.history.at(arm);
  if (h.empty()) throw DomainError(fmt::format("arm {} has not been pulled", arm));
  return maxucb_utility(*std::max_element(h.begin(), h.end()), h.size(), s.t + 1, s.alpha);
}

/// Unpulled arms first in index order, then the highest utility; ties go to
/// the lower index.
inline std::size_t maxucb_select(const BanditState& s) {
  if (s.arms() == 0) throw DomainError("bandit has no arms");
  for (std::size_t i = 0; i < s.arms(); ++i)
    if (s.history[i].empty()) return i;
  std::size_t best = 0;
  double best_u = maxucb_utility(s, 0);
  for (std::size_t i = 1; i < s.arms(); ++i) {
    const double u = maxucb_utility(s, i);
    if (u > best_u) {
      best = i;
      best_u = u;
    }
  }
  return best;
}

inline BanditState maxucb_update(BanditState s, std::size_t arm, double reward) {
  if (arm >= s.arms()) throw DomainError(fmt::format("arm {} out of range for {} arms", arm, s.arms()));
  s.history[arm].push_back(reward);
  ++s.t;
  return s;
}

/// Runs MaxUCB on arms with rewards ~ Uniform[0, upper_i]; returns pulls per arm.
inline std::vector<std::size_t> simulate_uniform_bandit(const std::vector<double>& upper, std::size_t horizon,
                                                        std::uint64_t seed, double alpha = 0.5) {
  Rng rng(seed);
  BanditState s(upper.size(), alpha);
  for (std::size_t round = 0; round < horizon; ++round) {
    const auto arm = maxucb_select(s);
    std::uniform_real_distribution<double> reward(0.0, upper[arm]);
    s = maxucb_update(std::move(s), arm, reward(rng));
  }
  std::vector<std::size_t> pulls(upper.size());
  for (std::size_t i = 0; i < upper.size(); ++i) pulls[i] = s.pulls(i);
  return pulls;
}

}  // namespace cashlab::cash
