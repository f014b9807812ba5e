#include "lgdg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lgdg/rng.hpp"

namespace lgdg {

Image Image::resized(std::size_t h, std::size_t w) const {
  if (h == height && w == width) return *this;
  const Tensor out = resize_bilinear(to_tensor(), h, w);
  Image img(h, w);
  std::copy(out.data().begin(), out.data().end(), img.pixels.begin());
  return img;
}

std::array<double, 3> Image::channel_means() const {
  std::array<double, 3> m{};
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += pixels[c * plane + p];
    m[c] = plane ? acc / static_cast<double>(plane) : 0.0;
  }
  return m;
}

namespace {

std::array<Rgb, kNumClasses> default_class_colors() {
  return {{
      {0.88, 0.78, 0.42},  // cystic plate
      {0.80, 0.50, 0.42},  // calot triangle
      {0.78, 0.10, 0.14},  // cystic artery
      {0.92, 0.88, 0.70},  // cystic duct
      {0.30, 0.52, 0.26},  // gallbladder
      {0.62, 0.64, 0.70},  // tool
  }};
}

}  // namespace

DomainConfig default_source_domain() {
  DomainConfig cfg;
  cfg.name = "source";
  cfg.domain_id = 0;
  cfg.width = 64;
  cfg.height = 64;
  cfg.fov_crop_fraction = 0.0;
  cfg.background_mean = {0.58, 0.24, 0.20};
  cfg.background_std = 0.04;
  cfg.hue_shift = 0.0;
  cfg.class_colors = default_class_colors();
  cfg.color_jitter = 0.04;
  cfg.texture_amplitude = 0.05;
  cfg.presence_priors = {0.7, 0.75, 0.7, 0.7, 0.95, 0.6};
  cfg.criterion_rates = {0.156, 0.112, 0.179};
  cfg.walk_sigma = 0.01;
  cfg.noise_profile = "source";
  return cfg;
}

DomainConfig default_target_domain() {
  DomainConfig cfg;
  cfg.name = "target";
  cfg.domain_id = 1;
  cfg.width = 80;
  cfg.height = 60;
  cfg.fov_crop_fraction = 0.25;
  cfg.background_mean = {0.40, 0.34, 0.42};
  cfg.background_std = 0.07;
  cfg.hue_shift = 0.33;
  cfg.class_colors = default_class_colors();
  cfg.color_jitter = 0.06;
  cfg.texture_amplitude = 0.09;
  cfg.presence_priors = {0.65, 0.7, 0.65, 0.65, 0.95, 0.7};
  cfg.criterion_rates = {0.021, 0.071, 0.084};
  cfg.walk_sigma = 0.012;
  cfg.noise_profile = "target";
  return cfg;
}

void validate(const DomainConfig& cfg) {
  auto fail = [&](const std::string& what) {
    throw ConfigError("domain '" + cfg.name + "': " + what);
  };
  if (cfg.width < 8 || cfg.height < 8) fail("image must be at least 8x8");
  for (double r : cfg.criterion_rates) {
    if (!(r > 0.0 && r < 1.0)) fail("criterion target rates must lie in (0, 1)");
  }
  for (double p : cfg.presence_priors) {
    if (!(p >= 0.0 && p <= 1.0)) fail("presence priors must lie in [0, 1]");
  }
  if (!(cfg.fov_crop_fraction >= 0.0 && cfg.fov_crop_fraction < 1.0)) {
    fail("fov_crop_fraction must lie in [0, 1)");
  }
  if (cfg.background_std < 0 || cfg.texture_amplitude < 0 || cfg.walk_sigma < 0) {
    fail("noise amplitudes must be non-negative");
  }
}

Labels label_scene(std::span<const SceneObject> objects, double image_area) {
  const SceneObject* calot = nullptr;
  const SceneObject* duct = nullptr;
  const SceneObject* artery = nullptr;
  const SceneObject* plate = nullptr;
  std::vector<const SceneObject*> tools;
  for (const SceneObject& o : objects) {
    if (!o.present) continue;
    switch (o.cls) {
      case ObjectClass::CalotTriangle: calot = &o; break;
      case ObjectClass::CysticDuct: duct = &o; break;
      case ObjectClass::CysticArtery: artery = &o; break;
      case ObjectClass::CysticPlate: plate = &o; break;
      case ObjectClass::Tool: tools.push_back(&o); break;
      case ObjectClass::Gallbladder: break;
    }
  }
  Labels y{false, false, false};
  if (calot && duct && artery) {
    y[0] = intersection_area(duct->box, artery->box) == 0.0 &&
           coverage(duct->box, calot->box) > kCalotCoverage &&
           coverage(artery->box, calot->box) > kCalotCoverage;
  }
  if (calot) {
    y[1] = std::none_of(tools.begin(), tools.end(), [&](const SceneObject* t) {
      return iou(t->box, calot->box) > kToolIou;
    });
  }
  if (plate) y[2] = plate->box.area() >= kPlateAreaFraction * image_area;
  return y;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

constexpr double kGolden = 0.6180339887498949;

struct NormBox {
  double cx, cy, w, h;
  Box to_box() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
};

Box clip_unit(Box b) {
  b = b.clipped(1.0, 1.0);
  constexpr double kMin = 0.01;
  if (b.x2 - b.x1 < kMin) {
    b.x1 = std::min(b.x1, 1.0 - kMin);
    b.x2 = b.x1 + kMin;
  }
  if (b.y2 - b.y1 < kMin) {
    b.y1 = std::min(b.y1, 1.0 - kMin);
    b.y2 = b.y1 + kMin;
  }
  return b;
}

// Sub-box of `outer` given fractional extents.
Box sub_box(const Box& outer, double fx1, double fy1, double fx2, double fy2) {
  const double w = outer.width(), h = outer.height();
  return {outer.x1 + fx1 * w, outer.y1 + fy1 * h, outer.x1 + fx2 * w, outer.y1 + fy2 * h};
}

struct Walk {
  double x = 0, y = 0;
  void step(Rng& rng, double sigma) {
    x = 0.9 * x + rng.normal(0.0, sigma);
    y = 0.9 * y + rng.normal(0.0, sigma);
  }
};

enum class DuctMode { Outside, Crossed };

}  // namespace

std::vector<Scene> generate_video(const DomainConfig& cfg, int video_id, int n_frames,
                                  std::uint64_t seed) {
  if (n_frames < 1) throw ConfigError("generate_video: n_frames must be >= 1");
  validate(cfg);
  const std::uint64_t domain_seed = splitmix64(seed ^ fnv1a64(cfg.name));
  Rng rng = Rng::derive(domain_seed, "video", static_cast<std::uint64_t>(video_id));

  // Video-level achievement follows a low-discrepancy sequence over video ids
  // so any run of consecutive ids reaches each criterion at close to rate a_c;
  // achieving videos end with a positive segment of expected length f_c * n.
  std::array<int, kNumCriteria> positive_frames{};
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    const double rate = cfg.criterion_rates[c];
    const double achieve = std::sqrt(rate);
    const double fraction = rate / achieve;
    const double offset = Rng::derive(domain_seed, "achievement", c).uniform();
    const double phase = std::fmod(offset + kGolden * static_cast<double>(video_id), 1.0);
    const double expected = fraction * n_frames;
    int k = static_cast<int>(std::floor(expected));
    if (rng.uniform() < expected - k) ++k;
    positive_frames[c] = phase < achieve ? std::min(k, n_frames) : 0;
  }

  std::array<bool, kNumClasses> video_presence{};
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    video_presence[k] = rng.bernoulli(cfg.presence_priors[k]);
  }
  std::array<Rgb, kNumClasses> colors = cfg.class_colors;
  for (auto& col : colors) {
    for (double& v : col) v = std::clamp(v + rng.normal(0.0, cfg.color_jitter), 0.0, 1.0);
  }

  NormBox gallbladder{0.5 + rng.uniform(-0.1, 0.1), 0.22 + rng.uniform(-0.04, 0.04),
                      0.5 + rng.uniform(-0.05, 0.05), 0.28 + rng.uniform(-0.04, 0.04)};
  NormBox calot{0.5 + rng.uniform(-0.08, 0.08), 0.62 + rng.uniform(-0.05, 0.05),
                0.36 + rng.uniform(-0.04, 0.04), 0.27 + rng.uniform(-0.03, 0.03)};
  NormBox plate_large{0.24 + rng.uniform(-0.04, 0.04), 0.42 + rng.uniform(-0.05, 0.05),
                      0.18 + rng.uniform(-0.02, 0.02), 0.16 + rng.uniform(-0.02, 0.02)};
  const double small_side = 0.07 + rng.uniform(0.0, 0.015);
  const bool tool_left = rng.bernoulli(0.5);
  NormBox tool_away{tool_left ? 0.1 : 0.9, 0.45 + rng.uniform(-0.15, 0.15), 0.1, 0.3};
  const DuctMode duct_mode = rng.bernoulli(0.5) ? DuctMode::Outside : DuctMode::Crossed;

  const auto cls_index = [](ObjectClass c) { return static_cast<std::size_t>(c); };
  const auto prior_ok = [&](ObjectClass c) { return cfg.presence_priors[cls_index(c)] > 0.0; };

  Walk walk_gb, walk_calot, walk_plate, walk_tool, walk_inner;
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(n_frames));
  const double W = static_cast<double>(cfg.width);
  const double H = static_cast<double>(cfg.height);
  for (int t = 0; t < n_frames; ++t) {
    walk_gb.step(rng, cfg.walk_sigma);
    walk_calot.step(rng, cfg.walk_sigma);
    walk_plate.step(rng, cfg.walk_sigma);
    walk_tool.step(rng, cfg.walk_sigma);
    walk_inner.step(rng, cfg.walk_sigma * 0.5);

    Labels want{};
    for (std::size_t c = 0; c < kNumCriteria; ++c) {
      want[c] = t >= n_frames - positive_frames[c];
    }

    auto present = [&](ObjectClass c) { return video_presence[cls_index(c)]; };
    const bool has_calot =
        prior_ok(ObjectClass::CalotTriangle) && (want[0] || want[1] || present(ObjectClass::CalotTriangle));
    const bool has_duct = prior_ok(ObjectClass::CysticDuct) && (want[0] || present(ObjectClass::CysticDuct));
    const bool has_artery =
        prior_ok(ObjectClass::CysticArtery) && (want[0] || present(ObjectClass::CysticArtery));
    const bool has_plate = prior_ok(ObjectClass::CysticPlate) && (want[2] || present(ObjectClass::CysticPlate));
    const bool tool_blocks = has_calot && !want[1];
    const bool has_tool = prior_ok(ObjectClass::Tool) && (tool_blocks || present(ObjectClass::Tool));

    NormBox calot_now = calot;
    calot_now.cx = std::clamp(calot.cx + walk_calot.x, 0.02 + calot.w / 2, 0.98 - calot.w / 2);
    calot_now.cy = std::clamp(calot.cy + walk_calot.y, 0.02 + calot.h / 2, 0.98 - calot.h / 2);
    const Box calot_box = calot_now.to_box();

    std::vector<std::pair<ObjectClass, Box>> layout;
    if (present(ObjectClass::Gallbladder)) {
      NormBox g = gallbladder;
      g.cx += walk_gb.x;
      g.cy += walk_gb.y;
      layout.emplace_back(ObjectClass::Gallbladder, clip_unit(g.to_box()));
    }
    if (has_plate) {
      NormBox p = plate_large;
      if (!want[2]) p.w = p.h = small_side;
      p.cx = std::clamp(p.cx + walk_plate.x, p.w / 2 + 0.01, 0.99 - p.w / 2);
      p.cy = std::clamp(p.cy + walk_plate.y, p.h / 2 + 0.01, 0.99 - p.h / 2);
      layout.emplace_back(ObjectClass::CysticPlate, clip_unit(p.to_box()));
    }
    if (has_calot) layout.emplace_back(ObjectClass::CalotTriangle, calot_box);

    // Duct left, artery right, both well inside the calot box when C1 holds.
    const double jx = std::clamp(walk_inner.x, -0.05, 0.05);
    const double jy = std::clamp(walk_inner.y, -0.1, 0.1);
    Box duct = sub_box(calot_box, 0.08 + jx, 0.2 + jy, 0.42 + jx, 0.8 + jy);
    Box artery = sub_box(calot_box, 0.58 - jx, 0.2 - jy, 0.92 - jx, 0.8 - jy);
    if (!want[0]) {
      if (duct_mode == DuctMode::Outside) {
        duct = sub_box(calot_box, 0.08 + jx, 0.98 + jy, 0.42 + jx, 1.58 + jy);
        artery = sub_box(calot_box, 0.58 - jx, 0.98 - jy, 0.92 - jx, 1.58 - jy);
        if (duct.y1 >= 0.97) duct = sub_box(calot_box, 0.08, -0.78, 0.42, -0.18);
        if (artery.y1 >= 0.97) artery = sub_box(calot_box, 0.58, -0.78, 0.92, -0.18);
      } else {
        artery = sub_box(calot_box, 0.24 - jx, 0.3 - jy, 0.58 - jx, 0.9 - jy);
      }
    }
    if (has_duct) layout.emplace_back(ObjectClass::CysticDuct, clip_unit(duct));
    if (has_artery) layout.emplace_back(ObjectClass::CysticArtery, clip_unit(artery));

    if (has_tool) {
      Box tool;
      if (tool_blocks) {
        tool = sub_box(calot_box, 0.2 + jx, 0.15 + jy, 0.8 + jx, 0.85 + jy);
      } else {
        NormBox a = tool_away;
        a.cy = std::clamp(a.cy + walk_tool.y, a.h / 2 + 0.01, 0.99 - a.h / 2);
        a.cx = std::clamp(a.cx + 0.3 * walk_tool.x, a.w / 2 + 0.01, 0.99 - a.w / 2);
        tool = a.to_box();
      }
      layout.emplace_back(ObjectClass::Tool, clip_unit(tool));
    }

    Scene scene;
    scene.video_id = video_id;
    scene.frame_index = t;
    scene.domain_id = cfg.domain_id;
    scene.render_seed = splitmix64(domain_seed ^ (static_cast<std::uint64_t>(video_id) << 20) ^
                                   static_cast<std::uint64_t>(t));
    for (const auto& [cls, box] : layout) {
      SceneObject o;
      o.cls = cls;
      o.box = box.scaled(W, H);
      o.color = colors[cls_index(cls)];
      o.texture = cfg.texture_amplitude;
      o.present = true;
      scene.objects.push_back(o);
    }
    scene.labels = label_scene(scene.objects, W * H);
    scene.image = render(scene, cfg);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Rotation about the grey axis by `turns` full turns.
Mat3 hue_rotation(double turns) {
  const double theta = 2.0 * std::numbers::pi * turns;
  const double c = std::cos(theta), s = std::sin(theta);
  const double k = 1.0 / std::sqrt(3.0);
  const double kx = k, ky = k, kz = k;
  const double t = 1.0 - c;
  return {{{c + kx * kx * t, kx * ky * t - kz * s, kx * kz * t + ky * s},
           {ky * kx * t + kz * s, c + ky * ky * t, ky * kz * t - kx * s},
           {kz * kx * t - ky * s, kz * ky * t + kx * s, c + kz * kz * t}}};
}

bool is_elliptic(ObjectClass c) {
  return c == ObjectClass::Gallbladder || c == ObjectClass::CalotTriangle ||
         c == ObjectClass::CysticPlate;
}

}  // namespace

Image render(const Scene& scene, const DomainConfig& cfg) {
  const std::size_t H = cfg.height, W = cfg.width;
  Image img(H, W);
  Rng rng = Rng::derive(scene.render_seed, "render");
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double noise = cfg.background_std > 0 ? rng.normal(0.0, cfg.background_std) : 0.0;
        img.at(c, y, x) = cfg.background_mean[c] + noise;
      }
    }
  }
  for (const SceneObject& o : scene.objects) {
    if (!o.present) continue;
    const long x0 = std::max(0L, static_cast<long>(std::floor(o.box.x1)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(o.box.y1)));
    const long x1 = std::min(static_cast<long>(W), static_cast<long>(std::ceil(o.box.x2)));
    const long y1 = std::min(static_cast<long>(H), static_cast<long>(std::ceil(o.box.y2)));
    const double cx = o.box.cx(), cy = o.box.cy();
    const double rx = o.box.width() / 2, ry = o.box.height() / 2;
    for (long y = y0; y < y1; ++y) {
      for (long x = x0; x < x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px < o.box.x1 || px > o.box.x2 || py < o.box.y1 || py > o.box.y2) continue;
        if (is_elliptic(o.cls)) {
          const double u = (px - cx) / rx, v = (py - cy) / ry;
          if (u * u + v * v > 1.0) continue;
        }
        const double tex = o.texture > 0 ? rng.normal(0.0, o.texture) : 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = o.color[c] + tex;
        }
      }
    }
  }
  const bool rotate = cfg.hue_shift != 0.0;
  const Mat3 rot = hue_rotation(cfg.hue_shift);
  const double radius = std::sqrt(2.0) * (1.0 - cfg.fov_crop_fraction);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      std::array<double, 3> px{img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)};
      if (rotate) {
        std::array<double, 3> r{};
        for (std::size_t i = 0; i < 3; ++i) {
          r[i] = rot[i][0] * px[0] + rot[i][1] * px[1] + rot[i][2] * px[2];
        }
        px = r;
      }
      if (cfg.fov_crop_fraction > 0) {
        const double u = (x + 0.5 - W / 2.0) / (W / 2.0);
        const double v = (y + 0.5 - H / 2.0) / (H / 2.0);
        if (std::sqrt(u * u + v * v) > radius) px = {0.03, 0.03, 0.03};
      }
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(px[c], 0.0, 1.0);
    }
  }
  return img;
}

Scene transfer_scene(const Scene& scene, const DomainConfig& from, const DomainConfig& to) {
  Scene out = scene;
  const double sx = static_cast<double>(to.width) / static_cast<double>(from.width);
  const double sy = static_cast<double>(to.height) / static_cast<double>(from.height);
  for (SceneObject& o : out.objects) o.box = o.box.scaled(sx, sy);
  out.domain_id = to.domain_id;
  out.labels = label_scene(out.objects, static_cast<double>(to.width * to.height));
  out.image = render(out, to);
  return out;
}

// ---------------------------------------------------------------------------
// Splits

std::vector<VideoSummary> summarize_videos(std::span<const Scene> scenes) {
  std::vector<VideoSummary> out;
  for (const Scene& s : scenes) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const VideoSummary& v) { return v.video_id == s.video_id; });
    if (it == out.end()) {
      out.push_back({s.video_id, {false, false, false}});
      it = out.end() - 1;
    }
    for (std::size_t c = 0; c < kNumCriteria; ++c) it->achieved[c] = it->achieved[c] || s.labels[c];
  }
  std::sort(out.begin(), out.end(),
            [](const VideoSummary& a, const VideoSummary& b) { return a.video_id < b.video_id; });
  return out;
}

namespace {

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    const auto i = static_cast<std::size_t>(
        std::max_element(remainder.begin(), remainder.end()) - remainder.begin());
    ++sizes[i];
    remainder[i] = -1.0;
    ++assigned;
  }
  return sizes;
}

// Per-split achieving counts, kept incrementally during the search.
struct SplitState {
  std::array<std::vector<std::size_t>, 3> members;
  std::array<std::array<int, kNumCriteria>, 3> counts{};
};

struct Score {
  double worst = 0.0;
  double spread = 0.0;
  int uncovered = 0;
  bool operator<(const Score& o) const {
    if (uncovered != o.uncovered) return uncovered < o.uncovered;
    if (worst != o.worst) return worst < o.worst - 1e-12;
    return spread < o.spread - 1e-12;
  }
};

Score score_state(const SplitState& s, const std::array<double, kNumCriteria>& global,
                  const std::array<int, kNumCriteria>& global_count) {
  Score sc;
  for (std::size_t k = 0; k < 3; ++k) {
    const double n = static_cast<double>(s.members[k].size());
    for (std::size_t c = 0; c < kNumCriteria; ++c) {
      const double dev = std::abs(s.counts[k][c] / n - global[c]);
      sc.worst = std::max(sc.worst, dev);
      sc.spread += dev * dev;
      if (global_count[c] >= 3 && s.counts[k][c] == 0) ++sc.uncovered;
    }
  }
  return sc;
}

}  // namespace

double split_deviation(std::span<const VideoSummary> videos, const SplitAssignment& split) {
  std::array<double, kNumCriteria> global{};
  for (const auto& v : videos)
    for (std::size_t c = 0; c < kNumCriteria; ++c) global[c] += v.achieved[c];
  for (double& g : global) g /= static_cast<double>(videos.size());
  double worst = 0.0;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    if (part->empty()) continue;
    std::array<double, kNumCriteria> rate{};
    for (int id : *part) {
      auto it = std::find_if(videos.begin(), videos.end(),
                             [&](const VideoSummary& v) { return v.video_id == id; });
      if (it == videos.end()) throw ConfigError("split references unknown video");
      for (std::size_t c = 0; c < kNumCriteria; ++c) rate[c] += it->achieved[c];
    }
    for (std::size_t c = 0; c < kNumCriteria; ++c) {
      worst = std::max(worst, std::abs(rate[c] / static_cast<double>(part->size()) - global[c]));
    }
  }
  return worst;
}

SplitAssignment stratified_split(std::span<const VideoSummary> videos,
                                 const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
  }
  if (videos.size() < 3) throw ConfigError("stratified split needs at least 3 videos");
  const std::size_t n = videos.size();
  const auto sizes = split_sizes(n, fractions);
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("too few videos for the requested split fractions");
  }

  std::array<double, kNumCriteria> global{};
  std::array<int, kNumCriteria> global_count{};
  for (const auto& v : videos) {
    for (std::size_t c = 0; c < kNumCriteria; ++c) global_count[c] += v.achieved[c];
  }
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    global[c] = static_cast<double>(global_count[c]) / static_cast<double>(n);
  }

  Rng rng = Rng::derive(seed, "split");
  SplitState best_state;
  Score best_score{1e9, 1e9, 1 << 20};
  const int restarts = n <= 16 ? 64 : 24;
  for (int r = 0; r < restarts; ++r) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    SplitState st;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < sizes[k]; ++i) {
        const std::size_t v = order[pos++];
        st.members[k].push_back(v);
        for (std::size_t c = 0; c < kNumCriteria; ++c) st.counts[k][c] += videos[v].achieved[c];
      }
    }
    Score cur = score_state(st, global, global_count);
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::size_t a = 0; a < 3 && !improved; ++a) {
        for (std::size_t b = a + 1; b < 3 && !improved; ++b) {
          for (std::size_t i = 0; i < st.members[a].size() && !improved; ++i) {
            for (std::size_t j = 0; j < st.members[b].size() && !improved; ++j) {
              const std::size_t va = st.members[a][i], vb = st.members[b][j];
              for (std::size_t c = 0; c < kNumCriteria; ++c) {
                const int d = int(videos[vb].achieved[c]) - int(videos[va].achieved[c]);
                st.counts[a][c] += d;
                st.counts[b][c] -= d;
              }
              const Score cand = score_state(st, global, global_count);
              if (cand < cur) {
                std::swap(st.members[a][i], st.members[b][j]);
                cur = cand;
                improved = true;
              } else {
                for (std::size_t c = 0; c < kNumCriteria; ++c) {
                  const int d = int(videos[vb].achieved[c]) - int(videos[va].achieved[c]);
                  st.counts[a][c] -= d;
                  st.counts[b][c] += d;
                }
              }
            }
          }
        }
      }
    }
    if (cur < best_score) {
      best_score = cur;
      best_state = st;
    }
  }

  SplitAssignment out;
  std::array<std::vector<int>*, 3> parts{&out.train, &out.val, &out.test};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t v : best_state.members[k]) parts[k]->push_back(videos[v].video_id);
    std::sort(parts[k]->begin(), parts[k]->end());
  }
  return out;
}

}  // namespace lgdg
