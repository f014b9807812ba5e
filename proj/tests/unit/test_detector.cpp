#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "lgdg/detector.hpp"
#include "support.hpp"

using namespace lgdg;
namespace fs = std::filesystem;

namespace {

Scene layout_scene(std::vector<SceneObject> objects, std::size_t w = 64, std::size_t h = 64) {
  Scene s;
  s.image = Image(h, w);
  s.objects = std::move(objects);
  return s;
}

SceneObject obj(ObjectClass c, Box b) {
  SceneObject o;
  o.cls = c;
  o.box = b;
  return o;
}

void check_valid(const Detection& d, double w, double h) {
  CHECK(d.box.valid());
  CHECK(d.box.x1 >= 0);
  CHECK(d.box.y1 >= 0);
  CHECK(d.box.x2 <= w);
  CHECK(d.box.y2 <= h);
  double total = 0;
  for (double p : d.class_probs) {
    CHECK(p >= 0.0);
    total += p;
  }
  CHECK(std::abs(total - 1.0) < 1e-9);
  CHECK(d.score == *std::max_element(d.class_probs.begin(), d.class_probs.end()));
}

Scene busy_scene() {
  return layout_scene({obj(ObjectClass::CalotTriangle, {10, 30, 40, 55}),
                       obj(ObjectClass::CysticDuct, {12, 33, 22, 50}),
                       obj(ObjectClass::CysticArtery, {28, 33, 38, 50}),
                       obj(ObjectClass::Gallbladder, {20, 4, 50, 22}),
                       obj(ObjectClass::Tool, {50, 20, 60, 60})});
}

}  // namespace

TEST_SUITE("detector") {
  TEST_CASE("zero-noise profile is the identity on present objects") {
    Scene s = busy_scene();
    s.objects[3].present = false;
    Rng rng(1);
    const auto dets = simulate_detect(s, NoiseProfile::zero(), rng);
    REQUIRE(dets.size() == 4);
    std::size_t k = 0;
    for (const SceneObject& o : s.objects) {
      if (!o.present) continue;
      CHECK(dets[k].box == o.box);
      CHECK(dets[k].argmax_class() == static_cast<std::size_t>(o.cls));
      CHECK(dets[k].class_probs[static_cast<std::size_t>(o.cls)] == 1.0);
      ++k;
    }
  }

  TEST_CASE("all-miss profile leaves only false positives") {
    NoiseProfile p;
    p.miss_rate.fill(1.0);
    p.false_positive_rate = 1.0;
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
      const auto dets = simulate_detect(busy_scene(), p, rng);
      REQUIRE(dets.size() == 1);
      check_valid(dets[0], 64, 64);
    }
    p.false_positive_rate = 0.0;
    CHECK(simulate_detect(busy_scene(), p, rng).empty());
  }

  TEST_CASE("empirical recall matches miss rates") {
    NoiseProfile p;
    p.miss_rate = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
    p.box_jitter_sigma = 1.0;
    std::vector<SceneObject> objs;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      objs.push_back(obj(static_cast<ObjectClass>(c), {1.0 + 10 * c, 5, 9.0 + 10 * c, 20}));
    }
    const Scene s = layout_scene(objs);
    std::array<int, kNumClasses> kept{};
    Rng rng(3);
    const int trials = 5000;
    for (int t = 0; t < trials; ++t) {
      for (const auto& d : simulate_detect(s, p, rng)) ++kept[d.argmax_class()];
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      CHECK(std::abs(kept[c] / double(trials) - (1 - p.miss_rate[c])) < 0.02);
    }
  }

  TEST_CASE("noisy detections stay valid") {
    NoiseProfile p;
    p.box_jitter_sigma = 6.0;
    p.miss_rate.fill(0.1);
    p.false_positive_rate = 0.5;
    p.confusion = NoiseProfile::uniform_confusion(0.6);
    p.prob_temperature = 2.0;
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
      for (const auto& d : simulate_detect(busy_scene(), p, rng)) check_valid(d, 64, 64);
    }
  }

  TEST_CASE("detections never depend on labels") {
    Scene a = busy_scene();
    Scene b = a;
    b.labels = {true, true, true};
    a.labels = {false, false, false};
    NoiseProfile p;
    p.box_jitter_sigma = 2;
    p.false_positive_rate = 0.3;
    Rng ra(5), rb(5);
    CHECK(simulate_detect(a, p, ra) == simulate_detect(b, p, rb));
  }

  TEST_CASE("noise profile validation and helpers") {
    NoiseProfile p;
    CHECK_NOTHROW(p.validate());
    p.miss_rate[2] = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = NoiseProfile{};
    p.confusion[0][1] = 0.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = NoiseProfile{};
    p.prob_temperature = 0;
    CHECK_THROWS_AS(p.validate(), ConfigError);

    const auto u = NoiseProfile::uniform_confusion(0.7);
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      CHECK(std::accumulate(u[r].begin(), u[r].end(), 0.0) == doctest::Approx(1.0));
      CHECK(u[r][r] == 0.7);
    }
    const ClassProbs sharp = soften({0.7, 0.06, 0.06, 0.06, 0.06, 0.06}, 1.0);
    CHECK(sharp[0] == doctest::Approx(0.7));
    const ClassProbs flat = soften({0.7, 0.06, 0.06, 0.06, 0.06, 0.06}, 4.0);
    CHECK(flat[0] < 0.7);
    CHECK(std::accumulate(flat.begin(), flat.end(), 0.0) == doctest::Approx(1.0));
  }

  TEST_CASE("decode of ideal logits recovers boxes") {
    Rng rng(6);
    for (int trial = 0; trial < 30; ++trial) {
      const double W = trial % 2 ? 80 : 64, H = trial % 2 ? 60 : 64;
      // One object per cell row, so no two land in the same cell.
      std::vector<SceneObject> objs;
      for (int i = 0; i < 3; ++i) {
        const double cy = (i * 2 + 1.5) / 8.0 * H;
        const double cx = rng.uniform(0.1, 0.9) * W;
        const double bw = rng.uniform(4, 12), bh = rng.uniform(3, 6);
        objs.push_back(obj(static_cast<ObjectClass>(rng.index(kNumClasses)),
                           {cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2}));
      }
      const Tensor t = encode_grid_targets(objs, W, H, 8);
      const auto dets = decode_grid(t, W, H, 0.3, 0.5);
      REQUIRE(dets.size() == objs.size());
      for (const auto& o : objs) {
        bool found = false;
        for (const auto& d : dets) {
          if (d.argmax_class() != static_cast<std::size_t>(o.cls)) continue;
          if (std::abs(d.box.x1 - o.box.x1) < 0.5 && std::abs(d.box.y1 - o.box.y1) < 0.5 &&
              std::abs(d.box.x2 - o.box.x2) < 0.5 && std::abs(d.box.y2 - o.box.y2) < 0.5) {
            found = true;
          }
        }
        CHECK(found);
      }
    }
  }

  TEST_CASE("decode below threshold is empty; NMS keeps one of two identical") {
    Tensor low = Tensor::full({kCellChannels, 8, 8}, 0.0);
    for (std::size_t c = 0; c < 64; ++c) low.mutable_data()[c] = -5.0;
    CHECK(decode_grid(low, 64, 64, 0.3, 0.5).empty());

    Detection d;
    d.box = {10, 10, 30, 30};
    d.class_probs = {0, 0, 1, 0, 0, 0};
    d.score = 1;
    const std::vector<Detection> two = {d, d};
    const std::vector<double> pri = {0.9, 0.8};
    CHECK(nms(two, pri, 0.5).size() == 1);

    Detection other = d;
    other.class_probs = {0, 1, 0, 0, 0, 0};
    const std::vector<Detection> mixed = {d, other};
    CHECK(nms(mixed, pri, 0.5).size() == 2);
  }

  TEST_CASE("grid detector overfits a single repeated scene") {
    Scene s = busy_scene();
    s.image = Image(64, 64);
    Rng rng(7);
    for (double& p : s.image.pixels) p = rng.uniform(0, 0.2);
    for (const auto& o : s.objects) {
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = std::size_t(o.box.y1); y < std::size_t(o.box.y2); ++y)
          for (std::size_t x = std::size_t(o.box.x1); x < std::size_t(o.box.x2); ++x)
            s.image.at(c, y, x) = 0.3 + 0.1 * static_cast<double>(o.cls) + 0.05 * c;
    }
    std::vector<const Scene*> scenes(16, &s);
    GridDetectorConfig cfg;
    cfg.epochs = 200;
    cfg.lr = 1e-2;
    DetectorTrainLog log;
    const GridDetector det = train_grid_detector(scenes, cfg, 3, &log);
    REQUIRE(log.epoch_objectness_loss.size() == 200);
    CHECK(log.epoch_objectness_loss.back() < 0.05);

    // Frozen detector: repeated inference is identical.
    CHECK(detect(det, s.image) == detect(det, s.image));

    CHECK_THROWS_AS(train_grid_detector(std::vector<const Scene*>{}, cfg, 0), DomainError);
  }

  TEST_CASE("grid detector loss gradient") {
    GridDetectorConfig cfg;
    cfg.encoder.input_size = 16;
    cfg.encoder.hidden_channels = 2;
    cfg.encoder.channels = 3;
    cfg.grid = 2;
    Rng rng(8);
    const GridDetector det(cfg, rng);
    Scene s = layout_scene({obj(ObjectClass::Tool, {1, 1, 7, 9}), obj(ObjectClass::CysticDuct, {9, 8, 15, 15})}, 16, 16);
    for (double& p : s.image.pixels) p = rng.uniform();
    std::vector<Tensor> params;
    for (auto& [n, t] : det.parameters()) params.push_back(t);
    CHECK(grad_check_params([&] { return grid_detector_loss(det, s).total; }, params) < 1e-5);
  }

  TEST_CASE("checkpoint round trip") {
    GridDetectorConfig cfg;
    Rng rng(9);
    const GridDetector det(cfg, rng);
    const fs::path path = fs::temp_directory_path() / "lgdg_test_detector.ckpt";
    save_grid_detector(path, det, "abc");
    const GridDetector back = load_grid_detector(path);
    const auto a = det.parameters();
    const auto b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(lgdg::test::bit_equal(a[i].second, b[i].second));
    }
    fs::remove(path);
  }

  TEST_CASE("per-class box evaluation") {
    const std::vector<std::vector<SceneObject>> gt = {
        {obj(ObjectClass::Tool, {0, 0, 10, 10}), obj(ObjectClass::Gallbladder, {20, 20, 40, 40})},
        {obj(ObjectClass::Tool, {5, 5, 15, 15})}};
    auto det = [](Box b, std::size_t cls, double score) {
      Detection d;
      d.box = b;
      d.class_probs.fill((1 - score) / 5);
      d.class_probs[cls] = score;
      d.score = score;
      return d;
    };
    const std::vector<std::vector<Detection>> perfect = {
        {det({0, 0, 10, 10}, 5, 0.9), det({20, 20, 40, 40}, 4, 0.8)}, {det({5, 5, 15, 15}, 5, 0.7)}};
    const DetectorEval e = evaluate_detections(perfect, gt);
    CHECK(*e.ap[5] == 1.0);
    CHECK(*e.ap[4] == 1.0);
    CHECK_FALSE(e.ap[0].has_value());
    CHECK(*e.mean == 1.0);

    // A confident false positive ranked first halves tool precision there.
    auto noisy = perfect;
    noisy[1].insert(noisy[1].begin(), det({40, 40, 60, 60}, 5, 0.95));
    const DetectorEval n = evaluate_detections(noisy, gt);
    CHECK(*n.ap[5] == doctest::Approx(0.5 * (0.5 + 2.0 / 3.0)));
  }
}
