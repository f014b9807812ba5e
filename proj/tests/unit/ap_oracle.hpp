#pragma once

// Brute-force AP: each item's rank is counted directly from the pairwise order
// (score descending, frame id ascending), then precision and recall are
// evaluated pointwise at every cut of the ranked list.

#include <cstdint>
#include <span>
#include <vector>

namespace lgdg::test {

inline double brute_force_ap(std::span<const double> scores, std::span<const std::uint8_t> labels,
                             std::span<const std::int64_t> ids) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> at_rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] < ids[i])) ++rank;
    }
    at_rank[rank] = i;
  }
  std::size_t total_pos = 0;
  for (auto l : labels) total_pos += l;

  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    std::size_t tp = 0;
    for (std::size_t r = 0; r < k; ++r) tp += labels[at_rank[r]];
    const double precision = static_cast<double>(tp) / static_cast<double>(k);
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace lgdg::test
