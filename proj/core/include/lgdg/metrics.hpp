#pragma once

// Frame-level average precision, mAP over the three criteria, and seed
// aggregation.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgdg/errors.hpp"
#include "lgdg/geometry.hpp"

namespace lgdg {

// Area under the precision/recall staircase for an already ranked list:
// Σ (R_k − R_{k−1})·P_k over the ranks holding a hit. `n_positives` may exceed
// the hits in the list (unretrieved positives cap recall below 1).
double staircase_ap(std::span<const std::uint8_t> ranked_hits, std::size_t n_positives);

// Ranks by score descending, ties by frame id ascending (frame ids default to
// positions). Throws UndefinedMetric without at least one positive and one
// negative.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels,
                         std::span<const std::int64_t> frame_ids = {});

struct PredictionSet {
  std::vector<std::array<double, kNumCriteria>> scores;
  std::vector<Labels> labels;
  std::vector<std::int64_t> frame_ids;

  std::size_t size() const { return scores.size(); }
  void add(const std::array<double, kNumCriteria>& s, const Labels& y, std::int64_t frame_id) {
    scores.push_back(s);
    labels.push_back(y);
    frame_ids.push_back(frame_id);
  }
};

struct MapResult {
  std::array<double, kNumCriteria> ap{};
  double map = 0.0;
};

// Throws UndefinedMetric carrying the offending criterion index.
MapResult map3(const PredictionSet& preds);

struct ResultAggregate {
  std::vector<double> values;
  double mean = 0.0;
  std::optional<double> std;  // sample (n−1) deviation, absent for n == 1
};

ResultAggregate aggregate(std::span<const double> values);

// "31.00 ± 1.41": values scaled by 100, two decimals; mean only when n == 1.
std::string format_mean_std(const ResultAggregate& agg);

}  // namespace lgdg
