#pragma once

// Detection sources: a noise-parameterized oracle that perturbs ground truth,
// and a small learned grid detector.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgdg/geometry.hpp"
#include "lgdg/layers.hpp"
#include "lgdg/rng.hpp"
#include "lgdg/scene.hpp"

namespace lgdg {

struct Detection {
  Box box;
  ClassProbs class_probs{};
  double score = 0.0;  // max of class_probs

  std::size_t argmax_class() const;
  friend bool operator==(const Detection&, const Detection&) = default;
};

using ConfusionMatrix = std::array<std::array<double, kNumClasses>, kNumClasses>;

struct NoiseProfile {
  double box_jitter_sigma = 0.0;  // pixels, per coordinate
  std::array<double, kNumClasses> miss_rate{};
  double false_positive_rate = 0.0;
  ConfusionMatrix confusion = identity_confusion();  // row = true class
  double prob_temperature = 1.0;

  static ConfusionMatrix identity_confusion();
  // Diagonal `keep`, remaining mass spread evenly over the other classes.
  static ConfusionMatrix uniform_confusion(double keep);
  static NoiseProfile zero() { return {}; }

  // Throws ConfigError on rates outside [0,1], rows not summing to 1,
  // negative sigma or non-positive temperature.
  void validate() const;
  friend bool operator==(const NoiseProfile&, const NoiseProfile&) = default;
};

// p_j ∝ row_j^(1/T), normalized.
ClassProbs soften(const std::array<double, kNumClasses>& row, double temperature);

// Per present object: dropped with its class miss rate, otherwise the box is
// jittered, reordered, clipped (min 1 px) and labelled with the softened
// confusion row. One false positive at a random box is appended with the
// false-positive rate. Reads only the scene's objects and image dims.
std::vector<Detection> simulate_detect(const Scene& scene, const NoiseProfile& profile, Rng& rng);

// ---------------------------------------------------------------------------
// Learned grid detector

struct GridDetectorConfig {
  BackboneConfig encoder;  // same architecture as the classifier backbone
  std::size_t grid = 8;    // must equal the encoder's output size
  int epochs = 12;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double score_threshold = 0.3;
  double nms_iou = 0.5;
};

// Channel layout of the per-cell head output.
inline constexpr std::size_t kCellObj = 0;
inline constexpr std::size_t kCellCls = 1;
inline constexpr std::size_t kCellBox = 1 + kNumClasses;
inline constexpr std::size_t kCellChannels = kCellBox + 4;

class GridDetector {
 public:
  GridDetector() = default;
  GridDetector(const GridDetectorConfig& cfg, Rng& rng);

  // 3×S×S image tensor (S = encoder input size) → kCellChannels×g×g.
  Tensor forward(const Tensor& image) const;
  NamedParams parameters() const;
  const GridDetectorConfig& config() const { return cfg_; }
  const Backbone& encoder() const { return encoder_; }

 private:
  GridDetectorConfig cfg_;
  Backbone encoder_;
  Conv2d head_;
};

struct DetectorTrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_objectness_loss;
};

// Throws DomainError on an empty training set.
GridDetector train_grid_detector(std::span<const Scene* const> scenes,
                                 const GridDetectorConfig& cfg, std::uint64_t seed,
                                 DetectorTrainLog* log = nullptr);

// Objectness, class and box loss for one image; exposed for tests.
struct DetectorLoss {
  Tensor total;
  Tensor objectness;
};
DetectorLoss grid_detector_loss(const GridDetector& det, const Scene& scene);

// Ideal head output for a set of objects: objectness ±`logit` and class
// logits ±`logit` with exact box offsets. Several objects in one cell: the
// largest wins.
Tensor encode_grid_targets(std::span<const SceneObject> objects, double width, double height,
                           std::size_t grid, double logit = 8.0);

// Per-cell decode, objectness threshold, per-class greedy NMS.
std::vector<Detection> decode_grid(const Tensor& head_output, double width, double height,
                                   double score_threshold, double nms_iou);

// Greedy NMS within each argmax class, visiting detections in the given
// priority order (higher first).
std::vector<Detection> nms(const std::vector<Detection>& dets, std::span<const double> priority,
                           double iou_threshold);

// Resamples to the encoder size when needed; boxes come back in image pixels.
std::vector<Detection> detect(const GridDetector& det, const Image& image,
                              std::optional<double> score_threshold = std::nullopt);

void save_grid_detector(const std::filesystem::path& path, const GridDetector& det,
                        const std::string& fingerprint);
GridDetector load_grid_detector(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Box evaluation

struct DetectorEval {
  std::array<std::optional<double>, kNumClasses> ap{};  // absent without ground truth
  std::optional<double> mean;
};

// Per-class AP with greedy IoU matching: detections of a class (by argmax)
// ranked by score, ties by frame order, each matched to the best unmatched
// ground-truth box of that class in its frame.
DetectorEval evaluate_detections(std::span<const std::vector<Detection>> detections,
                                 std::span<const std::vector<SceneObject>> ground_truth,
                                 double iou_threshold = 0.5);

}  // namespace lgdg
