#pragma once

// Object-centric latent graph built from an image's backbone map and its
// detections, and the masking function over the three feature categories.

#include <array>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lgdg/detector.hpp"
#include "lgdg/layers.hpp"
#include "lgdg/rng.hpp"

namespace lgdg {

enum class FeatureCategory : std::uint8_t { GraphVisual = 1, GraphSemantic = 2, BackboneImage = 4 };

// Subset of the three feature categories.
class CategorySet {
 public:
  constexpr CategorySet() = default;
  constexpr CategorySet(std::initializer_list<FeatureCategory> cats) {
    for (auto c : cats) bits_ |= static_cast<std::uint8_t>(c);
  }
  static constexpr CategorySet all() {
    return {FeatureCategory::GraphVisual, FeatureCategory::GraphSemantic,
            FeatureCategory::BackboneImage};
  }
  constexpr bool contains(FeatureCategory c) const {
    return (bits_ & static_cast<std::uint8_t>(c)) != 0;
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr CategorySet complement() const { return from_bits(static_cast<std::uint8_t>(~bits_ & 7)); }
  static constexpr CategorySet from_bits(std::uint8_t bits) {
    CategorySet s;
    s.bits_ = bits & 7;
    return s;
  }
  friend constexpr bool operator==(CategorySet, CategorySet) = default;

  // Names: "graph-visual", "graph-semantic", "backbone-image".
  std::vector<std::string> names() const;
  // Throws ConfigError on an unknown name.
  static CategorySet parse(std::span<const std::string> names);

 private:
  std::uint8_t bits_ = 0;
};

std::string category_name(FeatureCategory c);

inline constexpr std::size_t kNodeSemanticDim = 4 + kNumClasses;
inline constexpr std::size_t kEdgeGeometricDim = 5;
inline constexpr std::size_t kMaxNeighbors = 3;

// Node/edge tensors are undefined when the graph has no nodes/edges (tensors
// cannot have zero extents). Node and edge parts are shared, not copied, by
// mask() for categories it leaves alone.
struct LatentGraph {
  std::size_t n_nodes = 0;
  Tensor node_visual;    // n×C_b
  Tensor node_semantic;  // n×10: x1,y1,x2,y2 normalized, then class probs
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (i, j): j is a neighbour of i
  Tensor edge_visual;     // m×C_b
  Tensor edge_semantic;   // m×5
  Tensor backbone_map;    // C_b×h×w
  double image_width = 0;
  double image_height = 0;

  std::size_t n_edges() const { return edges.size(); }
};

// (Δcx/W, Δcy/H, log(wA/wB), log(hA/hB), IoU) with Δ = A − B. Throws
// DomainError on a zero-area box.
std::array<double, kEdgeGeometricDim> geometric_edge_features(const Box& a, const Box& b,
                                                              double width, double height);

// k = min(3, n−1) nearest neighbours of each node by center distance, ties by
// index. Returned edges are grouped by source node.
std::vector<std::pair<std::size_t, std::size_t>> knn_edges(std::span<const Box> boxes);

// Cells of an h×w grid covered by a box given in normalized [0,1] coordinates:
// those whose centers fall inside it, or the cell holding the box center when
// none does.
std::vector<std::size_t> covered_cells(double x1, double y1, double x2, double y2, std::size_t h,
                                       std::size_t w);

// Builds G from a backbone map and detections in a width×height frame. Node
// visual features are mean-pools of the map over each box's covered cells,
// edge visual features over the union box; both stay differentiable w.r.t.
// the map.
LatentGraph encode(const Tensor& backbone_map, std::span<const Detection> detections,
                   double width, double height);

// Runs the backbone on the image (resampled to its input size) first.
LatentGraph encode(const Image& image, std::span<const Detection> detections,
                   const Backbone& backbone);

// Fresh graph with the requested categories replaced by i.i.d. N(0,1) noise,
// drawn in the fixed order node visual, edge visual, node semantic, edge
// semantic, backbone map.
LatentGraph mask(const LatentGraph& graph, CategorySet categories, Rng& rng);

// Debug dump in the checkpoint container: JSON header with shapes, edges and
// semantic parts, binary blobs for every tensor.
void write_graph_dump(const std::filesystem::path& path, const LatentGraph& graph);
LatentGraph read_graph_dump(const std::filesystem::path& path);

}  // namespace lgdg
