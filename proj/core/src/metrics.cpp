#include "lgdg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "lgdg/errors.hpp"

namespace lgdg {

double staircase_ap(std::span<const std::uint8_t> ranked_hits, std::size_t n_positives) {
  if (n_positives == 0) throw UndefinedMetric("average precision needs at least one positive");
  const double n = static_cast<double>(n_positives);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked_hits.size(); ++k) {
    if (!ranked_hits[k]) continue;
    ++tp;
    const double recall = static_cast<double>(tp) / n;
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels,
                         std::span<const std::int64_t> frame_ids) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  if (!frame_ids.empty() && frame_ids.size() != scores.size()) {
    throw ShapeError("frame ids and scores differ in length");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw DomainError("non-finite score");
    if (labels[i]) ++positives;
  }
  if (positives == 0) throw UndefinedMetric("no positives");
  if (positives == scores.size()) throw UndefinedMetric("no negatives");

  auto id = [&](std::size_t i) {
    return frame_ids.empty() ? static_cast<std::int64_t>(i) : frame_ids[i];
  };
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return id(a) < id(b);
  });
  std::vector<std::uint8_t> hits(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) hits[k] = labels[order[k]] ? 1 : 0;
  return staircase_ap(hits, positives);
}

MapResult map3(const PredictionSet& preds) {
  if (preds.labels.size() != preds.size() || preds.frame_ids.size() != preds.size()) {
    throw ShapeError("prediction set columns differ in length");
  }
  MapResult r;
  std::vector<double> s(preds.size());
  std::vector<std::uint8_t> y(preds.size());
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      s[i] = preds.scores[i][c];
      y[i] = preds.labels[i][c] ? 1 : 0;
    }
    try {
      r.ap[c] = average_precision(s, y, preds.frame_ids);
    } catch (const UndefinedMetric& e) {
      throw UndefinedMetric("criterion C" + std::to_string(c + 1) + ": " + e.what(),
                            static_cast<int>(c));
    }
  }
  r.map = (r.ap[0] + r.ap[1] + r.ap[2]) / 3.0;
  return r;
}

ResultAggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw DomainError("aggregate of an empty result set");
  ResultAggregate a;
  a.values.assign(values.begin(), values.end());
  // Shifted by the first value so identical inputs give exactly std 0.
  const double n = static_cast<double>(values.size());
  const double shift = values.front();
  double total = 0.0;
  for (double v : values) total += v - shift;
  const double offset = total / n;
  a.mean = shift + offset;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - shift - offset) * (v - shift - offset);
    a.std = std::sqrt(ss / (n - 1.0));
  }
  return a;
}

std::string format_mean_std(const ResultAggregate& agg) {
  char buf[64];
  if (agg.std) {
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * agg.mean, 100.0 * *agg.std);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * agg.mean);
  }
  return buf;
}

}  // namespace lgdg
