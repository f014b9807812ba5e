#include "lgdg/latent_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_io.hpp"
#include "lgdg/container.hpp"

namespace lgdg {

namespace {

constexpr std::array<FeatureCategory, 3> kAllCategories = {
    FeatureCategory::GraphVisual, FeatureCategory::GraphSemantic, FeatureCategory::BackboneImage};

Tensor noise_like(const Tensor& t, Rng& rng) {
  std::vector<double> v(t.numel());
  for (double& x : v) x = rng.normal();
  return Tensor::from(t.shape(), std::move(v));
}

// rows×(h·w) averaging matrix, one row per cell list.
Tensor pool_matrix(const std::vector<std::vector<std::size_t>>& cells, std::size_t hw) {
  std::vector<double> m(cells.size() * hw, 0.0);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const double w = 1.0 / static_cast<double>(cells[r].size());
    for (std::size_t c : cells[r]) m[r * hw + c] = w;
  }
  return Tensor::from({cells.size(), hw}, std::move(m));
}

}  // namespace

std::string category_name(FeatureCategory c) {
  switch (c) {
    case FeatureCategory::GraphVisual: return "graph-visual";
    case FeatureCategory::GraphSemantic: return "graph-semantic";
    case FeatureCategory::BackboneImage: return "backbone-image";
  }
  return "?";
}

std::vector<std::string> CategorySet::names() const {
  std::vector<std::string> out;
  for (auto c : kAllCategories) {
    if (contains(c)) out.push_back(category_name(c));
  }
  return out;
}

CategorySet CategorySet::parse(std::span<const std::string> names) {
  std::uint8_t bits = 0;
  for (const std::string& n : names) {
    bool found = false;
    for (auto c : kAllCategories) {
      if (category_name(c) == n) {
        bits |= static_cast<std::uint8_t>(c);
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown feature category '" + n + "'");
  }
  return from_bits(bits);
}

std::array<double, kEdgeGeometricDim> geometric_edge_features(const Box& a, const Box& b,
                                                              double width, double height) {
  if (!(a.width() > 0 && a.height() > 0 && b.width() > 0 && b.height() > 0)) {
    throw DomainError("geometric edge features need boxes with positive area");
  }
  return {(a.cx() - b.cx()) / width, (a.cy() - b.cy()) / height, std::log(a.width() / b.width()),
          std::log(a.height() / b.height()), iou(a, b)};
}

std::vector<std::pair<std::size_t, std::size_t>> knn_edges(std::span<const Box> boxes) {
  const std::size_t n = boxes.size();
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  if (n < 2) return edges;
  const std::size_t k = std::min(kMaxNeighbors, n - 1);
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    auto dist = [&](std::size_t j) {
      const double dx = boxes[i].cx() - boxes[j].cx();
      const double dy = boxes[i].cy() - boxes[j].cy();
      return dx * dx + dy * dy;
    };
    std::stable_sort(others.begin(), others.end(),
                     [&](std::size_t p, std::size_t q) { return dist(p) < dist(q); });
    for (std::size_t r = 0; r < k; ++r) edges.emplace_back(i, others[r]);
  }
  return edges;
}

std::vector<std::size_t> covered_cells(double x1, double y1, double x2, double y2, std::size_t h,
                                       std::size_t w) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < h; ++i) {
    const double cy = (static_cast<double>(i) + 0.5) / static_cast<double>(h);
    if (cy < y1 || cy > y2) continue;
    for (std::size_t j = 0; j < w; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) / static_cast<double>(w);
      if (cx >= x1 && cx <= x2) cells.push_back(i * w + j);
    }
  }
  if (cells.empty()) {
    auto idx = [](double v, std::size_t n) {
      const double c = std::clamp(v, 0.0, 1.0) * static_cast<double>(n);
      return std::min(n - 1, static_cast<std::size_t>(std::floor(c)));
    };
    cells.push_back(idx(0.5 * (y1 + y2), h) * w + idx(0.5 * (x1 + x2), w));
  }
  return cells;
}

LatentGraph encode(const Tensor& backbone_map, std::span<const Detection> detections,
                   double width, double height) {
  if (backbone_map.rank() != 3) throw ShapeError("backbone map must be C×h×w");
  if (!(width > 0 && height > 0)) throw DomainError("image dims must be positive");
  LatentGraph g;
  g.backbone_map = backbone_map;
  g.image_width = width;
  g.image_height = height;
  g.n_nodes = detections.size();
  if (g.n_nodes == 0) return g;

  const std::size_t channels = backbone_map.dim(0), h = backbone_map.dim(1), w = backbone_map.dim(2);
  const Tensor flat = transpose(reshape(backbone_map, {channels, h * w}));

  std::vector<Box> boxes;
  std::vector<std::vector<std::size_t>> node_cells;
  std::vector<double> sem;
  for (const Detection& d : detections) {
    boxes.push_back(d.box);
    const double x1 = d.box.x1 / width, y1 = d.box.y1 / height;
    const double x2 = d.box.x2 / width, y2 = d.box.y2 / height;
    node_cells.push_back(covered_cells(x1, y1, x2, y2, h, w));
    sem.insert(sem.end(), {x1, y1, x2, y2});
    sem.insert(sem.end(), d.class_probs.begin(), d.class_probs.end());
  }
  g.node_visual = matmul(pool_matrix(node_cells, h * w), flat);
  g.node_semantic = Tensor::from({g.n_nodes, kNodeSemanticDim}, std::move(sem));

  g.edges = knn_edges(boxes);
  if (g.edges.empty()) return g;
  std::vector<std::vector<std::size_t>> edge_cells;
  std::vector<double> geo;
  for (const auto& [i, j] : g.edges) {
    const Box u = union_box(boxes[i], boxes[j]);
    edge_cells.push_back(covered_cells(u.x1 / width, u.y1 / height, u.x2 / width, u.y2 / height, h, w));
    const auto f = geometric_edge_features(boxes[i], boxes[j], width, height);
    geo.insert(geo.end(), f.begin(), f.end());
  }
  g.edge_visual = matmul(pool_matrix(edge_cells, h * w), flat);
  g.edge_semantic = Tensor::from({g.edges.size(), kEdgeGeometricDim}, std::move(geo));
  return g;
}

LatentGraph encode(const Image& image, std::span<const Detection> detections,
                   const Backbone& backbone) {
  const std::size_t s = backbone.config().input_size;
  const Tensor map = backbone.forward(image.resized(s, s).to_tensor());
  return encode(map, detections, static_cast<double>(image.width),
                static_cast<double>(image.height));
}

LatentGraph mask(const LatentGraph& graph, CategorySet categories, Rng& rng) {
  LatentGraph out = graph;
  if (categories.contains(FeatureCategory::GraphVisual)) {
    if (out.node_visual.defined()) out.node_visual = noise_like(graph.node_visual, rng);
    if (out.edge_visual.defined()) out.edge_visual = noise_like(graph.edge_visual, rng);
  }
  if (categories.contains(FeatureCategory::GraphSemantic)) {
    if (out.node_semantic.defined()) out.node_semantic = noise_like(graph.node_semantic, rng);
    if (out.edge_semantic.defined()) out.edge_semantic = noise_like(graph.edge_semantic, rng);
  }
  if (categories.contains(FeatureCategory::BackboneImage) && out.backbone_map.defined()) {
    out.backbone_map = noise_like(graph.backbone_map, rng);
  }
  return out;
}

void write_graph_dump(const std::filesystem::path& path, const LatentGraph& graph) {
  Container c;
  c.kind = "latent-graph";
  Json edges = Json::array();
  for (const auto& [i, j] : graph.edges) edges.push_back({i, j});
  Json shapes = Json::object();
  auto add_blob = [&](const std::string& name, const Tensor& t) {
    if (!t.defined()) return;
    shapes[name] = t.shape();
    c.blobs.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  };
  add_blob("node_visual", graph.node_visual);
  add_blob("node_semantic", graph.node_semantic);
  add_blob("edge_visual", graph.edge_visual);
  add_blob("edge_semantic", graph.edge_semantic);
  add_blob("backbone_map", graph.backbone_map);
  Json node_sem = Json::array();
  if (graph.node_semantic.defined()) {
    const auto v = graph.node_semantic.data();
    for (std::size_t i = 0; i < graph.n_nodes; ++i) {
      node_sem.push_back(std::vector<double>(v.begin() + i * kNodeSemanticDim,
                                             v.begin() + (i + 1) * kNodeSemanticDim));
    }
  }
  Json edge_sem = Json::array();
  if (graph.edge_semantic.defined()) {
    const auto v = graph.edge_semantic.data();
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
      edge_sem.push_back(std::vector<double>(v.begin() + e * kEdgeGeometricDim,
                                             v.begin() + (e + 1) * kEdgeGeometricDim));
    }
  }
  c.metadata_json = Json{{"n_nodes", graph.n_nodes},
                         {"edges", edges},
                         {"image_width", graph.image_width},
                         {"image_height", graph.image_height},
                         {"shapes", shapes},
                         {"node_semantic", node_sem},
                         {"edge_semantic", edge_sem}}
                        .dump();
  write_container(path, c);
}

LatentGraph read_graph_dump(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind != "latent-graph") throw IoError("not a latent-graph dump: " + c.kind);
  LatentGraph g;
  try {
    const Json meta = Json::parse(c.metadata_json);
    g.n_nodes = meta.at("n_nodes").get<std::size_t>();
    g.image_width = meta.at("image_width").get<double>();
    g.image_height = meta.at("image_height").get<double>();
    for (const Json& e : meta.at("edges")) {
      g.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt graph dump header: ") + e.what());
  }
  for (const ContainerBlob& b : c.blobs) {
    Tensor t = Tensor::from(b.shape, b.values);
    if (b.name == "node_visual") g.node_visual = t;
    else if (b.name == "node_semantic") g.node_semantic = t;
    else if (b.name == "edge_visual") g.edge_visual = t;
    else if (b.name == "edge_semantic") g.edge_semantic = t;
    else if (b.name == "backbone_map") g.backbone_map = t;
  }
  return g;
}

}  // namespace lgdg
