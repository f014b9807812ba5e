#pragma once

// Synthetic two-domain scenes whose three criteria are pure functions of the
// object layout.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lgdg/geometry.hpp"
#include "lgdg/tensor.hpp"

namespace lgdg {

using Rgb = std::array<double, 3>;

// 3×H×W, row-major, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(3 * h * w, 0.0) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  Tensor to_tensor() const { return Tensor::from({3, height, width}, pixels); }
  // Bilinear resample to h×w (no-op copy when dims already match).
  Image resized(std::size_t h, std::size_t w) const;
  std::array<double, 3> channel_means() const;

  friend bool operator==(const Image&, const Image&) = default;
};

struct SceneObject {
  ObjectClass cls = ObjectClass::Gallbladder;
  Box box;
  Rgb color{0.5, 0.5, 0.5};
  double texture = 0.0;
  bool present = true;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  Image image;
  std::vector<SceneObject> objects;
  Labels labels{};
  int video_id = 0;
  int frame_index = 0;
  int domain_id = 0;
  std::uint64_t render_seed = 0;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct DomainConfig {
  std::string name = "source";
  int domain_id = 0;
  std::size_t width = 64;
  std::size_t height = 64;
  // Fraction of the frame lost to the circular field-of-view border (0 = none).
  double fov_crop_fraction = 0.0;
  Rgb background_mean{0.55, 0.25, 0.22};
  double background_std = 0.04;
  // Hue rotation applied to the whole frame, in turns.
  double hue_shift = 0.0;
  std::array<Rgb, kNumClasses> class_colors{};
  double color_jitter = 0.04;
  double texture_amplitude = 0.05;
  std::array<double, kNumClasses> presence_priors{};
  std::array<double, kNumCriteria> criterion_rates{};
  // Per-frame standard deviation of the layout random walk, normalized units.
  double walk_sigma = 0.01;
  std::string noise_profile;

  friend bool operator==(const DomainConfig&, const DomainConfig&) = default;
};

// Shipped presets. Source targets the larger reference dataset's training
// rates, target the smaller and more imbalanced one.
DomainConfig default_source_domain();
DomainConfig default_target_domain();

// Throws ConfigError on invalid fields (rates outside (0,1), bad dims...).
void validate(const DomainConfig& cfg);

// Criteria:
//   C1  cystic duct and artery present, disjoint, each more than half inside
//       the calot triangle box;
//   C2  calot triangle present and no tool overlapping it above IoU 0.2;
//   C3  cystic plate present with area >= 1.5% of the image.
// `image_area` is the pixel area of the frame the boxes live in.
Labels label_scene(std::span<const SceneObject> objects, double image_area);

inline constexpr double kCalotCoverage = 0.5;
inline constexpr double kToolIou = 0.2;
inline constexpr double kPlateAreaFraction = 0.015;

std::vector<Scene> generate_video(const DomainConfig& cfg, int video_id, int n_frames,
                                  std::uint64_t seed);

// Renders `scene.objects` (pixel boxes in cfg's frame) with cfg's appearance.
Image render(const Scene& scene, const DomainConfig& cfg);

// Same layout re-expressed in `to`'s frame and rendered with its appearance.
Scene transfer_scene(const Scene& scene, const DomainConfig& from, const DomainConfig& to);

// ---------------------------------------------------------------------------
// Video-level splits

struct VideoSummary {
  int video_id = 0;
  Labels achieved{};  // criterion reached in at least one frame
};

struct SplitAssignment {
  std::vector<int> train, val, test;
};

std::vector<VideoSummary> summarize_videos(std::span<const Scene> scenes);

// Largest per-split, per-criterion absolute deviation of the video-level
// achievement rate from the global rate.
double split_deviation(std::span<const VideoSummary> videos, const SplitAssignment& split);

// Video-disjoint split with sizes from `fractions` (largest remainder) and
// per-criterion achievement rates balanced across splits.
SplitAssignment stratified_split(std::span<const VideoSummary> videos,
                                 const std::array<double, 3>& fractions, std::uint64_t seed);

}  // namespace lgdg
