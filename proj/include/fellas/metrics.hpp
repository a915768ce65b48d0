#pragma once

// Full-ranking evaluation: the held-out target is ranked against every item
// the user has not interacted with (no sampled candidates).

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fellas/domain.hpp"

namespace fellas {

// 1-based rank of target among non-excluded items. Ties go to the lower
// ItemId, so equal-scored items below the target's id outrank it.
inline int rank_target(std::span<const double> scores, ItemId target,
                       const std::vector<char>& excluded) {
  if (target < 0 || static_cast<std::size_t>(target) >= scores.size())
    throw std::out_of_range("rank_target: target outside score vector");
  if (excluded.size() != scores.size())
    throw std::invalid_argument("rank_target: exclusion mask size mismatch");
  if (excluded[static_cast<std::size_t>(target)])
    throw std::logic_error("rank_target: target is excluded (split bug)");
  const double ts = scores[static_cast<std::size_t>(target)];
  int rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (excluded[j] || static_cast<ItemId>(j) == target) continue;
    if (scores[j] > ts || (scores[j] == ts && static_cast<ItemId>(j) < target))
      ++rank;
  }
  return rank;
}

inline std::pair<double, double> hr_ndcg(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) return {0.0, 0.0};
  double hits = 0.0, gain = 0.0;
  for (int r : ranks) {
    if (r < 1) throw std::invalid_argument("hr_ndcg: rank < 1");
    if (r <= k) {
      hits += 1.0;
      gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
  }
  const double n = static_cast<double>(ranks.size());
  return {hits / n, gain / n};
}

struct EvalResult {
  double hr10 = 0, ndcg10 = 0, hr20 = 0, ndcg20 = 0;
  int user_count = 0;
};

inline EvalResult eval_from_ranks(const std::vector<int>& ranks) {
  EvalResult r;
  std::tie(r.hr10, r.ndcg10) = hr_ndcg(ranks, 10);
  std::tie(r.hr20, r.ndcg20) = hr_ndcg(ranks, 20);
  r.user_count = static_cast<int>(ranks.size());
  return r;
}

}  // namespace fellas
