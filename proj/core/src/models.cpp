#include "lgdg/models.hpp"

#include <algorithm>

#include "lgdg/container.hpp"

namespace lgdg {

Sample make_sample(const Scene& scene, std::vector<Detection> detections, std::size_t model_size,
                   std::int64_t frame_id) {
  Sample s;
  s.image = scene.image.resized(model_size, model_size).to_tensor();
  s.detections = std::move(detections);
  s.width = static_cast<double>(scene.image.width);
  s.height = static_cast<double>(scene.image.height);
  s.labels = scene.labels;
  s.frame_id = frame_id;
  return s;
}

namespace {

// Constant 0/1 matrix selecting rows: out[r][index[r]] = 1.
Tensor gather_matrix(const std::vector<std::size_t>& index, std::size_t n) {
  std::vector<double> m(index.size() * n, 0.0);
  for (std::size_t r = 0; r < index.size(); ++r) m[r * n + index[r]] = 1.0;
  return Tensor::from({index.size(), n}, std::move(m));
}

}  // namespace

// ---------------------------------------------------------------------------
// GnnHead

GnnHead::GnnHead(std::size_t visual_dim, const GnnConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.hidden == 0) throw ConfigError("GNN hidden size must be positive");
  const std::size_t h = cfg.hidden;
  node_in_ = Linear(visual_dim + kNodeSemanticDim, h, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    message_.emplace_back(2 * h + visual_dim + kEdgeGeometricDim, h, rng);
    update_.emplace_back(2 * h, h, rng);
  }
  std::vector<double> e(h);
  for (double& v : e) v = rng.uniform(-0.1, 0.1);
  empty_embedding_ = Tensor::parameter({1, h}, std::move(e));
  image_fc_ = Linear(visual_dim, visual_dim, rng);
  out_ = Linear(h + visual_dim, kNumCriteria, rng);
}

Tensor GnnHead::classify(const LatentGraph& graph) const {
  if (!graph.backbone_map.defined()) throw ShapeError("latent graph has no backbone map");
  Tensor readout;
  if (graph.n_nodes == 0) {
    readout = empty_embedding_;
  } else {
    const std::size_t n = graph.n_nodes;
    Tensor h = relu(node_in_.forward(concat_cols({graph.node_visual, graph.node_semantic})));
    Tensor gather_src, gather_dst, scatter, edge_in;
    if (!graph.edges.empty()) {
      std::vector<std::size_t> src, dst;
      for (const auto& [i, j] : graph.edges) {
        src.push_back(i);
        dst.push_back(j);
      }
      gather_src = gather_matrix(src, n);
      gather_dst = gather_matrix(dst, n);
      scatter = transpose(gather_src);
      edge_in = concat_cols({graph.edge_visual, graph.edge_semantic});
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      Tensor agg;
      if (!graph.edges.empty()) {
        const Tensor msg = relu(message_[l].forward(
            concat_cols({matmul(gather_src, h), matmul(gather_dst, h), edge_in})));
        agg = matmul(scatter, msg);
      } else {
        agg = Tensor::zeros({n, cfg_.hidden});
      }
      h = add(h, relu(update_[l].forward(concat_cols({h, agg}))));
    }
    readout = matmul(Tensor::full({1, n}, 1.0 / static_cast<double>(n)), h);
  }
  const Tensor image = relu(image_fc_.forward(global_avg_pool(graph.backbone_map)));
  return out_.forward(concat_cols({readout, image}));
}

void GnnHead::collect(const std::string& prefix, NamedParams& out) const {
  node_in_.collect(prefix + ".node_in", out);
  for (std::size_t l = 0; l < message_.size(); ++l) {
    message_[l].collect(prefix + ".message" + std::to_string(l), out);
    update_[l].collect(prefix + ".update" + std::to_string(l), out);
  }
  out.emplace_back(prefix + ".empty_embedding", empty_embedding_);
  image_fc_.collect(prefix + ".image_fc", out);
  out_.collect(prefix + ".out", out);
}

// ---------------------------------------------------------------------------
// ReconBranch

ReconBranch::ReconBranch(std::size_t node_dim, std::size_t backbone_channels,
                         const ReconConfig& cfg, Rng& rng)
    : cfg_(cfg), backbone_channels_(backbone_channels) {
  if (cfg.grid == 0 || cfg.layout_channels == 0) throw ConfigError("invalid reconstruction dims");
  layout_proj_ = Linear(node_dim, cfg.layout_channels, rng);
  up1_ = ConvTranspose2d(decoder_input_channels(), cfg.hidden_channels, 2, 2, rng);
  up2_ = ConvTranspose2d(cfg.hidden_channels, 3, 2, 2, rng);
}

std::size_t ReconBranch::decoder_input_channels() const {
  return cfg_.layout_channels + (cfg_.include_backbone ? backbone_channels_ : 0) + 3;
}

Tensor ReconBranch::build_feature_layout(const LatentGraph& graph, std::size_t grid_h,
                                         std::size_t grid_w) const {
  if (grid_h == 0 || grid_w == 0) throw ShapeError("layout grid must be at least 1x1");
  const std::size_t cl = cfg_.layout_channels;
  if (graph.n_nodes == 0) return Tensor::zeros({cl, grid_h, grid_w});
  const std::size_t hw = grid_h * grid_w;
  const auto sem = graph.node_semantic.data();
  std::vector<double> paint(hw * graph.n_nodes, 0.0);
  for (std::size_t n = 0; n < graph.n_nodes; ++n) {
    const double* s = sem.data() + n * kNodeSemanticDim;
    const double x1 = std::clamp(std::min(s[0], s[2]), 0.0, 1.0);
    const double x2 = std::clamp(std::max(s[0], s[2]), 0.0, 1.0);
    const double y1 = std::clamp(std::min(s[1], s[3]), 0.0, 1.0);
    const double y2 = std::clamp(std::max(s[1], s[3]), 0.0, 1.0);
    for (std::size_t c : covered_cells(x1, y1, x2, y2, grid_h, grid_w)) {
      paint[c * graph.n_nodes + n] = 1.0;
    }
  }
  const Tensor proj =
      layout_proj_.forward(concat_cols({graph.node_visual, graph.node_semantic}));
  const Tensor flat = matmul(Tensor::from({hw, graph.n_nodes}, std::move(paint)), proj);
  return reshape(transpose(flat), {cl, grid_h, grid_w});
}

Tensor ReconBranch::reconstruct(const LatentGraph& graph, const Tensor& backgroundized) const {
  const std::size_t g = cfg_.grid;
  if (backgroundized.rank() != 3 || backgroundized.dim(0) != 3 || backgroundized.dim(1) != 4 * g ||
      backgroundized.dim(2) != 4 * g) {
    throw ShapeError("backgroundized image must be 3x" + std::to_string(4 * g) + "x" +
                     std::to_string(4 * g) + ", got " + shape_str(backgroundized.shape()));
  }
  std::vector<Tensor> parts{build_feature_layout(graph, g, g)};
  if (cfg_.include_backbone) {
    if (graph.backbone_map.dim(0) != backbone_channels_) {
      throw ShapeError("backbone map channel count differs from the branch's");
    }
    parts.push_back(resize_bilinear(graph.backbone_map, g, g));
  }
  parts.push_back(avg_pool2d(backgroundized, 4));
  const Tensor x = concat_rows(parts);
  return sigmoid(up2_.forward(relu(up1_.forward(x))));
}

void ReconBranch::collect(const std::string& prefix, NamedParams& out) const {
  layout_proj_.collect(prefix + ".layout_proj", out);
  up1_.collect(prefix + ".up1", out);
  up2_.collect(prefix + ".up2", out);
}

Tensor backgroundize(const Tensor& image, std::span<const Detection> detections, double width,
                     double height, Rng& rng) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("backgroundize expects 3xHxW");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<double> out(image.data().begin(), image.data().end());
  for (std::size_t y = 0; y < h; ++y) {
    const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * height;
    for (std::size_t x = 0; x < w; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * width;
      const bool fg = std::any_of(detections.begin(), detections.end(), [&](const Detection& d) {
        return px >= d.box.x1 && px <= d.box.x2 && py >= d.box.y1 && py <= d.box.y2;
      });
      if (!fg) continue;
      for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = rng.normal();
    }
  }
  return Tensor::from(image.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// LgModel

LgModel::LgModel(const LgModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  Rng backbone_rng = rng.fork("backbone");
  Rng head_rng = rng.fork("gnn-head");
  Rng recon_rng = rng.fork("recon");
  backbone_ = Backbone(cfg.backbone, backbone_rng);
  head_ = GnnHead(cfg.backbone.channels, cfg.gnn, head_rng);
  if (cfg.with_recon) {
    if (cfg.recon.grid * 4 != cfg.backbone.input_size) {
      throw ConfigError("reconstruction grid must be a quarter of the model image size");
    }
    recon_.emplace(cfg.backbone.channels + kNodeSemanticDim, cfg.backbone.channels, cfg.recon,
                   recon_rng);
  }
}

LatentGraph LgModel::encode(const Sample& sample) const {
  return lgdg::encode(backbone_.forward(sample.image), sample.detections, sample.width,
                      sample.height);
}

NamedParams LgModel::parameters() const {
  NamedParams p;
  backbone_.collect("backbone", p);
  head_.collect("head", p);
  if (recon_) recon_->collect("recon", p);
  return p;
}

// ---------------------------------------------------------------------------
// Baselines

Tensor rasterize_layout(std::span<const Detection> detections, double width, double height,
                        std::size_t grid) {
  if (grid == 0) throw ShapeError("layout grid must be positive");
  std::vector<double> v(kNumClasses * grid * grid, 0.0);
  for (const Detection& d : detections) {
    for (std::size_t c : covered_cells(d.box.x1 / width, d.box.y1 / height, d.box.x2 / width,
                                       d.box.y2 / height, grid, grid)) {
      for (std::size_t k = 0; k < kNumClasses; ++k) v[k * grid * grid + c] += d.class_probs[k];
    }
  }
  return Tensor::from({kNumClasses, grid, grid}, std::move(v));
}

BaselineClassifier::BaselineClassifier(BaselineKind kind, const BaselineConfig& cfg, Rng& rng)
    : kind_(kind), cfg_(cfg) {
  if (kind == BaselineKind::LayoutOnly || kind == BaselineKind::LayoutImage) {
    if (cfg.backbone.input_size % cfg.layout_grid != 0) {
      throw ConfigError("layout grid must divide the model image size");
    }
    const std::size_t in = kNumClasses + (kind == BaselineKind::LayoutImage ? 3 : 0);
    conv1_ = Conv2d(in, cfg.hidden_channels, 3, 2, 1, rng);
    conv2_ = Conv2d(cfg.hidden_channels, cfg.hidden_channels, 3, 2, 1, rng);
    fc_ = Linear(cfg.hidden_channels, kNumCriteria, rng);
  } else {
    encoder_ = Backbone(cfg.backbone, rng);
    fc_ = Linear(cfg.backbone.channels, kNumCriteria, rng);
  }
}

BaselineClassifier BaselineClassifier::from_detector(const GridDetector& detector,
                                                     const BaselineConfig& cfg, Rng& rng) {
  BaselineConfig c = cfg;
  c.backbone = detector.config().encoder;
  BaselineClassifier clf(BaselineKind::DetInit, c, rng);
  NamedParams dst = clf.parameters();
  copy_matching(detector.parameters(), "encoder", dst, "encoder");
  return clf;
}

Tensor BaselineClassifier::classify(const Sample& sample) const {
  switch (kind_) {
    case BaselineKind::LayoutOnly:
    case BaselineKind::LayoutImage: {
      Tensor x = rasterize_layout(sample.detections, sample.width, sample.height, cfg_.layout_grid);
      if (kind_ == BaselineKind::LayoutImage) {
        const std::size_t k = sample.image.dim(1) / cfg_.layout_grid;
        x = concat_rows({x, avg_pool2d(sample.image, k)});
      }
      const Tensor f = relu(conv2_.forward(relu(conv1_.forward(x))));
      return fc_.forward(global_avg_pool(f));
    }
    case BaselineKind::ImageOnly:
    case BaselineKind::DetInit:
      return fc_.forward(global_avg_pool(encoder_.forward(sample.image)));
  }
  throw Error("unknown baseline kind");
}

NamedParams BaselineClassifier::parameters() const {
  NamedParams p;
  if (kind_ == BaselineKind::LayoutOnly || kind_ == BaselineKind::LayoutImage) {
    conv1_.collect("conv1", p);
    conv2_.collect("conv2", p);
  } else {
    encoder_.collect("encoder", p);
  }
  fc_.collect("fc", p);
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_parameters(const std::filesystem::path& path, const NamedParams& params,
                     const std::string& metadata_json) {
  Container c;
  c.kind = "model";
  c.metadata_json = metadata_json;
  for (const auto& [name, t] : params) {
    c.blobs.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  }
  write_container(path, c);
}

std::string load_parameters(const std::filesystem::path& path, NamedParams& params) {
  const Container c = read_container(path);
  if (c.kind != "model") throw IoError("not a model checkpoint: " + c.kind);
  for (auto& [name, t] : params) {
    const ContainerBlob& b = c.blob(name);
    if (b.shape != t.shape()) throw IoError("checkpoint shape mismatch for " + name);
    auto dst = t.mutable_data();
    std::copy(b.values.begin(), b.values.end(), dst.begin());
  }
  return c.metadata_json;
}

}  // namespace lgdg
