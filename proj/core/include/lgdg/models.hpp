#pragma once

// Trainable heads: the latent-graph classifier (backbone, GNN head,
// reconstruction branch) and the four baseline classifiers.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgdg/detector.hpp"
#include "lgdg/latent_graph.hpp"
#include "lgdg/layers.hpp"

namespace lgdg {

// One frame as the models see it: the image resampled to the canonical model
// size, detections in native pixels, and the native frame dims.
struct Sample {
  Tensor image;  // 3×S×S
  std::vector<Detection> detections;
  double width = 0;
  double height = 0;
  Labels labels{};
  std::int64_t frame_id = 0;
};

Sample make_sample(const Scene& scene, std::vector<Detection> detections, std::size_t model_size,
                   std::int64_t frame_id);

// ---------------------------------------------------------------------------
// GNN classification head

struct GnnConfig {
  std::size_t hidden = 32;
  std::size_t layers = 2;
};

// Per layer: m_ij = ReLU(W_m [h_i; h_j; e_ij]), summed into node i, then
// h_i ← h_i + ReLU(W_u [h_i; Σ_j m_ij]). Mean readout (or a learned embedding
// for empty graphs) concatenated with a pooled backbone-map feature, then a
// linear layer to three logits.
class GnnHead {
 public:
  GnnHead() = default;
  GnnHead(std::size_t visual_dim, const GnnConfig& cfg, Rng& rng);

  // Returns 1×3 logits.
  Tensor classify(const LatentGraph& graph) const;
  void collect(const std::string& prefix, NamedParams& out) const;

 private:
  GnnConfig cfg_;
  Linear node_in_;
  std::vector<Linear> message_;
  std::vector<Linear> update_;
  Tensor empty_embedding_;  // 1×hidden
  Linear image_fc_;
  Linear out_;
};

// ---------------------------------------------------------------------------
// Reconstruction branch

struct ReconConfig {
  std::size_t layout_channels = 8;  // C_l
  std::size_t grid = 16;            // layout resolution; image size / 4
  std::size_t hidden_channels = 8;
  bool include_backbone = true;     // concatenate the resized backbone map
};

class ReconBranch {
 public:
  ReconBranch() = default;
  ReconBranch(std::size_t node_dim, std::size_t backbone_channels, const ReconConfig& cfg,
              Rng& rng);

  // C_l×grid_h×grid_w: every node's projected feature added into the cells
  // its box covers. Boxes come from the graph's (possibly noised) semantic
  // coordinates, reordered and clipped to [0,1].
  Tensor build_feature_layout(const LatentGraph& graph, std::size_t grid_h,
                              std::size_t grid_w) const;

  // [layout; resized backbone map (optional); pooled backgroundized image]
  // through two stride-2 transpose convolutions. `backgroundized` is 3×S×S
  // with S = 4·grid; the output has the same shape.
  Tensor reconstruct(const LatentGraph& graph, const Tensor& backgroundized) const;

  std::size_t decoder_input_channels() const;
  const ReconConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, NamedParams& out) const;

 private:
  ReconConfig cfg_;
  std::size_t backbone_channels_ = 0;
  Linear layout_proj_;
  ConvTranspose2d up1_;
  ConvTranspose2d up2_;
};

// Copy of a 3×S×S image with every pixel whose center lies in a detection box
// (native frame coordinates) replaced by N(0,1) noise, drawn in raster order.
Tensor backgroundize(const Tensor& image, std::span<const Detection> detections, double width,
                     double height, Rng& rng);

// ---------------------------------------------------------------------------
// Latent-graph classifier

struct LgModelConfig {
  BackboneConfig backbone;
  GnnConfig gnn;
  ReconConfig recon;
  bool with_recon = true;
};

class LgModel {
 public:
  LgModel() = default;
  LgModel(const LgModelConfig& cfg, Rng& rng);

  LatentGraph encode(const Sample& sample) const;
  Tensor classify(const LatentGraph& graph) const { return head_.classify(graph); }

  const GnnHead& head() const { return head_; }
  const Backbone& backbone() const { return backbone_; }
  const std::optional<ReconBranch>& recon() const { return recon_; }
  const LgModelConfig& config() const { return cfg_; }
  NamedParams parameters() const;

 private:
  LgModelConfig cfg_;
  Backbone backbone_;
  GnnHead head_;
  std::optional<ReconBranch> recon_;
};

// ---------------------------------------------------------------------------
// Baselines

enum class BaselineKind { LayoutOnly, LayoutImage, ImageOnly, DetInit };

// 6×grid×grid: each detection's class probabilities added over its covered
// cells. Reads detections only.
Tensor rasterize_layout(std::span<const Detection> detections, double width, double height,
                        std::size_t grid);

struct BaselineConfig {
  BackboneConfig backbone;  // image-only / det-init encoder, and the model size
  std::size_t layout_grid = 16;
  std::size_t hidden_channels = 16;
};

class BaselineClassifier {
 public:
  BaselineClassifier() = default;
  BaselineClassifier(BaselineKind kind, const BaselineConfig& cfg, Rng& rng);
  // Det-init: image-only architecture with the encoder copied from `detector`.
  static BaselineClassifier from_detector(const GridDetector& detector, const BaselineConfig& cfg,
                                          Rng& rng);

  // Returns 1×3 logits.
  Tensor classify(const Sample& sample) const;
  BaselineKind kind() const { return kind_; }
  NamedParams parameters() const;

 private:
  BaselineKind kind_ = BaselineKind::ImageOnly;
  BaselineConfig cfg_;
  Conv2d conv1_, conv2_;  // layout variants
  Backbone encoder_;      // image variants
  Linear fc_;
};

// ---------------------------------------------------------------------------
// Checkpoints

void save_parameters(const std::filesystem::path& path, const NamedParams& params,
                     const std::string& metadata_json);
// Loads values into `params` by name; returns the stored metadata JSON text.
std::string load_parameters(const std::filesystem::path& path, NamedParams& params);

}  // namespace lgdg
