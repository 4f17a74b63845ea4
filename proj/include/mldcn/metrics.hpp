#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mldcn/error.hpp"

namespace mldcn {

// ROC AUC as the Mann-Whitney statistic (wins + ties/2) / (n_pos * n_neg),
// computed from one sort with explicit tie groups. The numerator is kept as
// an integer count of half-wins so the result is exact up to the final
// division.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::metric, "auc: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  }
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) fail(ErrorCode::metric, "auc: non-binary label at row " + std::to_string(i));
    if (std::isnan(scores[i])) fail(ErrorCode::metric, "auc: NaN score at row " + std::to_string(i));
    n_pos += labels[i];
  }
  const std::uint64_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCode::metric, "auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::uint64_t half_wins = 0;  // 2 per win, 1 per tie
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]]) ++pos; else ++neg;
      ++j;
    }
    half_wins += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    i = j;
  }
  return static_cast<double>(half_wins) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Mean binary log-loss of probabilities, clamped away from 0 and 1.
inline double log_loss(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size() || probs.empty()) fail(ErrorCode::metric, "log_loss: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-15, 1.0 - 1e-15);
    s -= labels[i] ? std::log(p) : std::log1p(-p);
  }
  return s / static_cast<double>(probs.size());
}

}  // namespace mldcn
