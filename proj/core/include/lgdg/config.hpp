#pragma once

// Experiment configuration, its canonical JSON form and fingerprint, and the
// shipped presets.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lgdg/detector.hpp"
#include "lgdg/models.hpp"
#include "lgdg/objectives.hpp"
#include "lgdg/optimizer.hpp"
#include "lgdg/scene.hpp"

namespace lgdg {

enum class Variant { Lg, LgDg, Layout, LayoutImage, Image, DetInit };
enum class Setting { FullySupervised, PartiallySupervised, DomainGeneralization };
enum class DetectionSource { Oracle, Learned };

// "lg", "lg-dg", "layout", "layout+image", "image", "det-init".
std::string to_string(Variant v);
// "fully-supervised", "partially-supervised", "domain-generalization".
std::string to_string(Setting s);
std::string to_string(DetectionSource s);
Variant parse_variant(const std::string& s);
Setting parse_setting(const std::string& s);
DetectionSource parse_detection_source(const std::string& s);

bool is_graph_variant(Variant v);

struct DataConfig {
  int n_videos = 70;
  int frames_per_video = 30;
  std::uint64_t seed = 2024;
  std::array<double, 3> split_fractions{4.0 / 7.0, 1.5 / 7.0, 1.5 / 7.0};
  // Frames with frame_index % annotated_every == 0 carry box annotations for
  // detector training.
  int annotated_every = 6;
  // Optional directory written by gen-data; datasets are generated in memory
  // when empty.
  std::string dir;
};

struct TrainConfig {
  int epochs = 60;
  std::size_t batch_size = 16;
  AdamConfig adam{.lr = 3e-3};
  // Keep every k-th training frame (1 = all).
  int train_stride = 1;
  // Sanity mode when > 0: train on this many training frames (chosen so each
  // criterion has positives and negatives) and select on the same frames.
  int overfit_frames = 0;
};

// Where the harness may draw the class balance and the model-selection split
// from. Anything other than the training domain is a protocol violation under
// domain generalization.
struct ProtocolConfig {
  std::string balance_from = "train-domain";    // | "target-domain"
  std::string selection_from = "train-domain";  // | "target-domain"
};

struct ExperimentConfig {
  std::string name = "default";
  Variant variant = Variant::LgDg;
  Setting setting = Setting::DomainGeneralization;
  // Unset fields resolve per variant (see resolved_*).
  std::optional<CategorySet> cvs_mask;
  std::optional<CategorySet> recon_mask;
  std::optional<LossWeights> weights;

  DetectionSource detection_source = DetectionSource::Oracle;
  // Keyed "<detector domain profile>-><image domain profile>".
  std::map<std::string, NoiseProfile> noise_profiles;
  DomainConfig source;
  DomainConfig target;
  DataConfig data;
  TrainConfig train;
  GridDetectorConfig detector;
  LgModelConfig model;
  BaselineConfig baseline;
  ProtocolConfig protocol;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  MaskingConfig resolved_masking() const;
  LossWeights resolved_weights() const;
  // Throws ConfigError when the key is missing.
  const NoiseProfile& noise_profile(const DomainConfig& detector_domain,
                                    const DomainConfig& image_domain) const;
  // Throws ConfigError on any inconsistency.
  void validate() const;
};

// Canonical JSON text (sorted keys, every field present, defaults resolved).
std::string to_json_text(const ExperimentConfig& cfg, bool include_seeds = true);
// Missing keys keep defaults; unknown keys are rejected with ConfigError.
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// 16 hex digits of FNV-1a 64 over the canonical JSON without seeds.
std::string fingerprint(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Presets

ExperimentConfig default_config();
std::map<std::string, NoiseProfile> default_noise_profiles();
// Same experiment with source and target exchanged.
ExperimentConfig swap_domains(const ExperimentConfig& cfg);

}  // namespace lgdg
