#pragma once

#include <cstddef>
#include <vector>

#include "cashlab/errors.hpp"

namespace cashlab::cash {

enum class Direction { higher_better, lower_better };

/// Percentage of leaderboard entries strictly worse than `score`.
inline double prank(double score, const std::vector<double>& board, Direction dir) {
  if (board.empty()) throw DomainError("leaderboard is empty");
  std::size_t beaten = 0;
  for (double s : board) beaten += dir == Direction::higher_better ? s < score : s > score;
  return 100.0 * static_cast<double>(beaten) / static_cast<double>(board.size());
}

}  // namespace cashlab::cash
