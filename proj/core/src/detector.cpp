#include "lgdg/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_io.hpp"
#include "lgdg/container.hpp"
#include "lgdg/metrics.hpp"
#include "lgdg/optimizer.hpp"

namespace lgdg {

std::size_t Detection::argmax_class() const {
  return static_cast<std::size_t>(
      std::max_element(class_probs.begin(), class_probs.end()) - class_probs.begin());
}

ConfusionMatrix NoiseProfile::identity_confusion() {
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < kNumClasses; ++i) m[i][i] = 1.0;
  return m;
}

ConfusionMatrix NoiseProfile::uniform_confusion(double keep) {
  ConfusionMatrix m{};
  const double other = (1.0 - keep) / static_cast<double>(kNumClasses - 1);
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    for (std::size_t j = 0; j < kNumClasses; ++j) m[i][j] = i == j ? keep : other;
  }
  return m;
}

void NoiseProfile::validate() const {
  if (!(box_jitter_sigma >= 0)) throw ConfigError("box_jitter_sigma must be >= 0");
  if (!(false_positive_rate >= 0 && false_positive_rate <= 1)) {
    throw ConfigError("false_positive_rate must lie in [0,1]");
  }
  for (double r : miss_rate) {
    if (!(r >= 0 && r <= 1)) throw ConfigError("miss_rate must lie in [0,1]");
  }
  if (!(prob_temperature > 0)) throw ConfigError("prob_temperature must be positive");
  for (const auto& row : confusion) {
    double total = 0.0;
    for (double p : row) {
      if (!(p >= 0)) throw ConfigError("confusion entries must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("confusion rows must sum to 1");
  }
}

ClassProbs soften(const std::array<double, kNumClasses>& row, double temperature) {
  ClassProbs p{};
  double total = 0.0;
  for (std::size_t j = 0; j < kNumClasses; ++j) {
    p[j] = row[j] > 0 ? std::pow(row[j], 1.0 / temperature) : 0.0;
    total += p[j];
  }
  for (double& v : p) v /= total;
  return p;
}

namespace {

Detection make_detection(const Box& box, const ClassProbs& probs) {
  Detection d;
  d.box = box;
  d.class_probs = probs;
  d.score = *std::max_element(probs.begin(), probs.end());
  return d;
}

// Orders, clips and widens a box to at least one pixel inside the frame.
Box sanitize(Box b, double w, double h) {
  if (b.x1 > b.x2) std::swap(b.x1, b.x2);
  if (b.y1 > b.y2) std::swap(b.y1, b.y2);
  b = b.clipped(w, h);
  auto widen = [](double& lo, double& hi, double limit) {
    if (hi - lo >= 1.0) return;
    const double c = std::clamp(0.5 * (lo + hi), 0.5, limit - 0.5);
    lo = c - 0.5;
    hi = c + 0.5;
  };
  widen(b.x1, b.x2, w);
  widen(b.y1, b.y2, h);
  return b;
}

}  // namespace

std::vector<Detection> simulate_detect(const Scene& scene, const NoiseProfile& profile, Rng& rng) {
  const double w = static_cast<double>(scene.image.width);
  const double h = static_cast<double>(scene.image.height);
  std::vector<Detection> out;
  for (const SceneObject& o : scene.objects) {
    if (!o.present) continue;
    const auto cls = static_cast<std::size_t>(o.cls);
    if (rng.uniform() < profile.miss_rate[cls]) continue;
    Box b = o.box;
    if (profile.box_jitter_sigma > 0) {
      b.x1 += rng.normal(0.0, profile.box_jitter_sigma);
      b.y1 += rng.normal(0.0, profile.box_jitter_sigma);
      b.x2 += rng.normal(0.0, profile.box_jitter_sigma);
      b.y2 += rng.normal(0.0, profile.box_jitter_sigma);
    }
    out.push_back(make_detection(sanitize(b, w, h),
                                 soften(profile.confusion[cls], profile.prob_temperature)));
  }
  if (profile.false_positive_rate > 0 && rng.uniform() < profile.false_positive_rate) {
    const double bw = rng.uniform(0.1, 0.4) * w;
    const double bh = rng.uniform(0.1, 0.4) * h;
    const double x1 = rng.uniform(0.0, w - bw);
    const double y1 = rng.uniform(0.0, h - bh);
    const std::size_t cls = rng.index(kNumClasses);
    out.push_back(make_detection(sanitize({x1, y1, x1 + bw, y1 + bh}, w, h),
                                 soften(profile.confusion[cls], profile.prob_temperature)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid detector

GridDetector::GridDetector(const GridDetectorConfig& cfg, Rng& rng)
    : cfg_(cfg), encoder_(cfg.encoder, rng), head_(cfg.encoder.channels, kCellChannels, 3, 1, 1, rng) {
  if (cfg.grid != encoder_.output_size()) {
    throw ConfigError("grid size must equal the encoder output size");
  }
}

Tensor GridDetector::forward(const Tensor& image) const {
  return head_.forward(encoder_.forward(image));
}

NamedParams GridDetector::parameters() const {
  NamedParams p;
  encoder_.collect("encoder", p);
  head_.collect("head", p);
  return p;
}

namespace {

struct CellTargets {
  std::vector<double> objectness;  // g²
  std::vector<double> class_onehot;  // g²×6
  std::vector<double> box;           // g²×4
  std::vector<double> box_mask;      // g²×4
  std::size_t positives = 0;
};

CellTargets cell_targets(std::span<const SceneObject> objects, double width, double height,
                         std::size_t g) {
  CellTargets t;
  t.objectness.assign(g * g, 0.0);
  t.class_onehot.assign(g * g * kNumClasses, 0.0);
  t.box.assign(g * g * 4, 0.0);
  t.box_mask.assign(g * g * 4, 0.0);
  std::vector<double> owner_area(g * g, -1.0);
  const double gd = static_cast<double>(g);
  for (const SceneObject& o : objects) {
    if (!o.present) continue;
    const double cx = o.box.cx() / width * gd;
    const double cy = o.box.cy() / height * gd;
    const auto j = static_cast<std::size_t>(std::clamp(std::floor(cx), 0.0, gd - 1));
    const auto i = static_cast<std::size_t>(std::clamp(std::floor(cy), 0.0, gd - 1));
    const std::size_t cell = i * g + j;
    if (o.box.area() <= owner_area[cell]) continue;
    owner_area[cell] = o.box.area();
    t.objectness[cell] = 1.0;
    for (std::size_t k = 0; k < kNumClasses; ++k) t.class_onehot[cell * kNumClasses + k] = 0.0;
    t.class_onehot[cell * kNumClasses + static_cast<std::size_t>(o.cls)] = 1.0;
    t.box[cell * 4 + 0] = cx - static_cast<double>(j);
    t.box[cell * 4 + 1] = cy - static_cast<double>(i);
    t.box[cell * 4 + 2] = std::log(o.box.width() / width);
    t.box[cell * 4 + 3] = std::log(o.box.height() / height);
    for (std::size_t k = 0; k < 4; ++k) t.box_mask[cell * 4 + k] = 1.0;
  }
  for (double v : t.objectness) t.positives += v > 0 ? 1 : 0;
  return t;
}

Tensor canonical_input(const Image& image, std::size_t size) {
  return image.resized(size, size).to_tensor();
}

}  // namespace

Tensor encode_grid_targets(std::span<const SceneObject> objects, double width, double height,
                           std::size_t grid, double logit) {
  const CellTargets t = cell_targets(objects, width, height, grid);
  const std::size_t cells = grid * grid;
  std::vector<double> out(kCellChannels * cells, 0.0);
  for (std::size_t c = 0; c < cells; ++c) {
    const bool pos = t.objectness[c] > 0;
    out[kCellObj * cells + c] = pos ? logit : -logit;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      out[(kCellCls + k) * cells + c] = t.class_onehot[c * kNumClasses + k] > 0 ? logit : -logit;
    }
    for (std::size_t k = 0; k < 4; ++k) out[(kCellBox + k) * cells + c] = t.box[c * 4 + k];
  }
  return Tensor::from({kCellChannels, grid, grid}, std::move(out));
}

DetectorLoss grid_detector_loss(const GridDetector& det, const Scene& scene) {
  const std::size_t g = det.config().grid;
  const std::size_t size = det.config().encoder.input_size;
  const CellTargets t = cell_targets(scene.objects, static_cast<double>(scene.image.width),
                                     static_cast<double>(scene.image.height), g);
  const Tensor out = det.forward(canonical_input(scene.image, size));
  const Tensor cells = transpose(reshape(out, {kCellChannels, g * g}));

  const Tensor obj = slice_cols(cells, kCellObj, kCellObj + 1);
  const Tensor obj_t = Tensor::from({g * g, 1}, t.objectness);
  const Tensor obj_loss = mean(sub(softplus(obj), mul(obj, obj_t)));

  const double denom = static_cast<double>(std::max<std::size_t>(1, t.positives));
  const Tensor logp = log_softmax_rows(slice_cols(cells, kCellCls, kCellBox));
  const Tensor cls_loss =
      scale(sum(mul(logp, Tensor::from({g * g, kNumClasses}, t.class_onehot))), -1.0 / denom);

  const Tensor diff = sub(slice_cols(cells, kCellBox, kCellChannels),
                          Tensor::from({g * g, 4}, t.box));
  const Tensor box_loss =
      scale(sum(mul(mul(diff, diff), Tensor::from({g * g, 4}, t.box_mask))), 1.0 / denom);

  return {add(add(obj_loss, cls_loss), box_loss), obj_loss};
}

GridDetector train_grid_detector(std::span<const Scene* const> scenes,
                                 const GridDetectorConfig& cfg, std::uint64_t seed,
                                 DetectorTrainLog* log) {
  if (scenes.empty()) throw DomainError("grid detector needs at least one training scene");
  if (cfg.batch_size == 0) throw ConfigError("detector batch size must be positive");
  Rng init = Rng::derive(seed, "detector-init");
  GridDetector det(cfg, init);
  Adam opt(det.parameters(), AdamConfig{cfg.lr});

  std::vector<std::size_t> order(scenes.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::derive(seed, "detector-batches", static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(order.begin(), order.end());
    double epoch_total = 0.0, epoch_obj = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tape tape;
      TapeScope scope(tape);
      Tensor batch_loss;
      for (std::size_t k = start; k < end; ++k) {
        const DetectorLoss l = grid_detector_loss(det, *scenes[order[k]]);
        batch_loss = batch_loss.defined() ? add(batch_loss, l.total) : l.total;
        epoch_total += l.total.item();
        epoch_obj += l.objectness.item();
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      opt.zero_grad();
      backward(batch_loss);
      opt.step();
    }
    if (log) {
      log->epoch_loss.push_back(epoch_total / static_cast<double>(scenes.size()));
      log->epoch_objectness_loss.push_back(epoch_obj / static_cast<double>(scenes.size()));
    }
  }
  opt.zero_grad();
  return det;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, std::span<const double> priority,
                           double iou_threshold) {
  if (priority.size() != dets.size()) throw ShapeError("nms priority length mismatch");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return priority[a] > priority[b]; });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.argmax_class() == d.argmax_class() && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_grid(const Tensor& head_output, double width, double height,
                                   double score_threshold, double nms_iou) {
  if (head_output.rank() != 3 || head_output.dim(0) != kCellChannels ||
      head_output.dim(1) != head_output.dim(2)) {
    throw ShapeError("grid head output must be " + std::to_string(kCellChannels) + "xgxg");
  }
  const std::size_t g = head_output.dim(1);
  const std::size_t cells = g * g;
  const auto v = head_output.data();
  const double gd = static_cast<double>(g);
  std::vector<Detection> dets;
  std::vector<double> priority;
  for (std::size_t c = 0; c < cells; ++c) {
    const double o = v[kCellObj * cells + c];
    const double p_obj = 1.0 / (1.0 + std::exp(-o));
    if (p_obj < score_threshold) continue;
    ClassProbs probs{};
    double mx = -1e300;
    for (std::size_t k = 0; k < kNumClasses; ++k) mx = std::max(mx, v[(kCellCls + k) * cells + c]);
    double total = 0.0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      probs[k] = std::exp(v[(kCellCls + k) * cells + c] - mx);
      total += probs[k];
    }
    for (double& p : probs) p /= total;
    const double i = static_cast<double>(c / g), j = static_cast<double>(c % g);
    const double cx = (j + v[kCellBox * cells + c]) / gd * width;
    const double cy = (i + v[(kCellBox + 1) * cells + c]) / gd * height;
    const double bw = std::exp(std::min(v[(kCellBox + 2) * cells + c], 1.0)) * width;
    const double bh = std::exp(std::min(v[(kCellBox + 3) * cells + c], 1.0)) * height;
    dets.push_back(make_detection(
        sanitize({cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh}, width, height),
        probs));
    priority.push_back(p_obj);
  }
  return nms(dets, priority, nms_iou);
}

std::vector<Detection> detect(const GridDetector& det, const Image& image,
                              std::optional<double> score_threshold) {
  const Tensor out = det.forward(canonical_input(image, det.config().encoder.input_size));
  return decode_grid(out, static_cast<double>(image.width), static_cast<double>(image.height),
                     score_threshold.value_or(det.config().score_threshold),
                     det.config().nms_iou);
}

void save_grid_detector(const std::filesystem::path& path, const GridDetector& det,
                        const std::string& fingerprint) {
  const auto& cfg = det.config();
  Container c;
  c.kind = "grid-detector";
  c.metadata_json = Json{{"fingerprint", fingerprint},
                         {"grid", cfg.grid},
                         {"input_size", cfg.encoder.input_size},
                         {"hidden_channels", cfg.encoder.hidden_channels},
                         {"channels", cfg.encoder.channels},
                         {"score_threshold", cfg.score_threshold},
                         {"nms_iou", cfg.nms_iou}}
                        .dump();
  for (const auto& [name, t] : det.parameters()) {
    c.blobs.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  }
  write_container(path, c);
}

GridDetector load_grid_detector(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind != "grid-detector") throw IoError("not a grid-detector checkpoint: " + c.kind);
  GridDetectorConfig cfg;
  try {
    const Json meta = Json::parse(c.metadata_json);
    cfg.grid = meta.at("grid").get<std::size_t>();
    cfg.encoder.input_size = meta.at("input_size").get<std::size_t>();
    cfg.encoder.hidden_channels = meta.at("hidden_channels").get<std::size_t>();
    cfg.encoder.channels = meta.at("channels").get<std::size_t>();
    cfg.score_threshold = meta.at("score_threshold").get<double>();
    cfg.nms_iou = meta.at("nms_iou").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt detector metadata: ") + e.what());
  }
  Rng scratch(0);
  GridDetector det(cfg, scratch);
  NamedParams params = det.parameters();
  for (auto& [name, t] : params) {
    const ContainerBlob& b = c.blob(name);
    if (b.shape != t.shape()) throw IoError("checkpoint shape mismatch for " + name);
    auto dst = t.mutable_data();
    std::copy(b.values.begin(), b.values.end(), dst.begin());
  }
  return det;
}

DetectorEval evaluate_detections(std::span<const std::vector<Detection>> detections,
                                 std::span<const std::vector<SceneObject>> ground_truth,
                                 double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw ShapeError("detections and ground truth differ in frame count");
  }
  DetectorEval eval;
  double total = 0.0;
  int defined = 0;
  for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
    std::size_t n_gt = 0;
    for (const auto& objs : ground_truth) {
      for (const SceneObject& o : objs) n_gt += (o.present && std::size_t(o.cls) == cls) ? 1 : 0;
    }
    if (n_gt == 0) continue;

    struct Ranked {
      double score;
      std::size_t frame, index;
    };
    std::vector<Ranked> ranked;
    for (std::size_t f = 0; f < detections.size(); ++f) {
      for (std::size_t k = 0; k < detections[f].size(); ++k) {
        if (detections[f][k].argmax_class() == cls) ranked.push_back({detections[f][k].score, f, k});
      }
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.frame != b.frame) return a.frame < b.frame;
      return a.index < b.index;
    });
    std::vector<std::vector<bool>> used(ground_truth.size());
    for (std::size_t f = 0; f < ground_truth.size(); ++f) used[f].assign(ground_truth[f].size(), false);
    std::vector<std::uint8_t> hits;
    for (const Ranked& r : ranked) {
      const Box& box = detections[r.frame][r.index].box;
      const auto& objs = ground_truth[r.frame];
      double best = iou_threshold;
      std::optional<std::size_t> match;
      for (std::size_t g = 0; g < objs.size(); ++g) {
        if (used[r.frame][g] || !objs[g].present || std::size_t(objs[g].cls) != cls) continue;
        const double v = iou(box, objs[g].box);
        if (v >= best) {
          if (!match || v > best) match = g;
          best = v;
        }
      }
      if (match) used[r.frame][*match] = true;
      hits.push_back(match ? 1 : 0);
    }
    eval.ap[cls] = staircase_ap(hits, n_gt);
    total += *eval.ap[cls];
    ++defined;
  }
  if (defined > 0) eval.mean = total / defined;
  return eval;
}

}  // namespace lgdg
