#include <doctest.h>

#include <filesystem>
#include <map>

#include "lgdg/latent_graph.hpp"
#include "support.hpp"

using namespace lgdg;
using lgdg::test::bit_equal;
using lgdg::test::random_tensor;

namespace {

Detection det(Box b, std::size_t cls) {
  Detection d;
  d.box = b;
  d.class_probs.fill(0.0);
  d.class_probs[cls] = 1.0;
  d.score = 1.0;
  return d;
}

std::vector<Detection> random_dets(Rng& rng, std::size_t n, double W, double H) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = rng.uniform(0, W - 10), y1 = rng.uniform(0, H - 10);
    Detection d = det({x1, y1, x1 + rng.uniform(2, 10), y1 + rng.uniform(2, 10)}, rng.index(kNumClasses));
    for (double& p : d.class_probs) p = rng.uniform(0.01, 1);
    double t = 0;
    for (double p : d.class_probs) t += p;
    for (double& p : d.class_probs) p /= t;
    d.score = *std::max_element(d.class_probs.begin(), d.class_probs.end());
    out.push_back(d);
  }
  return out;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t c = t.dim(1);
  return {t.data().begin() + r * c, t.data().begin() + (r + 1) * c};
}

}  // namespace

TEST_SUITE("latent-graph") {
  TEST_CASE("encode examples") {
    Rng rng(1);
    const Tensor map = random_tensor({4, 8, 8}, rng);
    const LatentGraph empty = encode(map, std::vector<Detection>{}, 64, 64);
    CHECK(empty.n_nodes == 0);
    CHECK(empty.n_edges() == 0);
    CHECK(bit_equal(empty.backbone_map, map));

    const LatentGraph one = encode(map, std::vector{det({4, 4, 20, 20}, 1)}, 64, 64);
    CHECK(one.n_nodes == 1);
    CHECK(one.n_edges() == 0);
    CHECK(one.node_visual.shape() == Shape{1, 4});
    CHECK(one.node_semantic.shape() == Shape{1, kNodeSemanticDim});

    const LatentGraph two = encode(map, std::vector{det({0, 0, 2, 2}, 0), det({1, 1, 3, 3}, 2)}, 64, 64);
    REQUIRE(two.n_edges() == 2);
    CHECK(two.edge_semantic[4] == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  }

  TEST_CASE("node visual features are box mean-pools of the map") {
    Rng rng(2);
    const Tensor map = random_tensor({3, 4, 4}, rng);
    // Box covering the top-left 2×2 cells of a 4×4 grid on a 64×64 frame.
    const LatentGraph g = encode(map, std::vector{det({0, 0, 32, 32}, 0)}, 64, 64);
    for (std::size_t c = 0; c < 3; ++c) {
      const double expect = (map[c * 16 + 0] + map[c * 16 + 1] + map[c * 16 + 4] + map[c * 16 + 5]) / 4;
      CHECK(g.node_visual[c] == doctest::Approx(expect).epsilon(1e-14));
    }
  }

  TEST_CASE("graph invariants") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
      const std::size_t n = 1 + rng.index(7);
      const auto dets = random_dets(rng, n, 80, 60);
      const LatentGraph g = encode(random_tensor({5, 6, 6}, rng), dets, 80, 60);
      CHECK(g.n_nodes == n);
      CHECK(g.n_edges() == n * std::min<std::size_t>(3, n - 1));
      for (const auto& [i, j] : g.edges) {
        CHECK(i < n);
        CHECK(j < n);
        CHECK(i != j);
      }
      for (std::size_t e = 0; e < g.n_edges(); ++e) {
        const double iou_v = g.edge_semantic[e * kEdgeGeometricDim + 4];
        CHECK(iou_v >= 0.0);
        CHECK(iou_v <= 1.0);
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
          const double v = g.node_semantic[i * kNodeSemanticDim + k];
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
      }
    }
  }

  TEST_CASE("semantic parts depend on detections only") {
    Rng rng(4);
    const auto dets = random_dets(rng, 5, 64, 64);
    const LatentGraph a = encode(random_tensor({4, 8, 8}, rng), dets, 64, 64);
    const LatentGraph b = encode(random_tensor({4, 8, 8}, rng), dets, 64, 64);
    CHECK(bit_equal(a.node_semantic, b.node_semantic));
    CHECK(bit_equal(a.edge_semantic, b.edge_semantic));
    CHECK(a.edges == b.edges);
    CHECK_FALSE(bit_equal(a.node_visual, b.node_visual));
  }

  TEST_CASE("encode is permutation-equivariant") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
      const std::size_t n = 2 + rng.index(5);
      const auto dets = random_dets(rng, n, 64, 64);
      const Tensor map = random_tensor({3, 8, 8}, rng);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm.begin(), perm.end());
      std::vector<Detection> permuted;
      for (std::size_t i = 0; i < n; ++i) permuted.push_back(dets[perm[i]]);

      const LatentGraph g = encode(map, dets, 64, 64);
      const LatentGraph h = encode(map, permuted, 64, 64);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(row(h.node_visual, i) == row(g.node_visual, perm[i]));
        CHECK(row(h.node_semantic, i) == row(g.node_semantic, perm[i]));
      }
      std::map<std::pair<std::size_t, std::size_t>, std::pair<std::vector<double>, std::vector<double>>> ge;
      for (std::size_t e = 0; e < g.n_edges(); ++e) {
        ge[g.edges[e]] = {row(g.edge_visual, e), row(g.edge_semantic, e)};
      }
      REQUIRE(h.n_edges() == g.n_edges());
      for (std::size_t e = 0; e < h.n_edges(); ++e) {
        const auto key = std::make_pair(perm[h.edges[e].first], perm[h.edges[e].second]);
        REQUIRE(ge.count(key) == 1);
        CHECK(ge[key].first == row(h.edge_visual, e));
        CHECK(ge[key].second == row(h.edge_semantic, e));
      }
    }
  }

  TEST_CASE("geometric edge features") {
    const Box a{4, 6, 20, 30};
    const auto same = geometric_edge_features(a, a, 64, 64);
    CHECK(same == std::array<double, 5>{0, 0, 0, 0, 1});
    CHECK(geometric_edge_features(a, {30, 30, 40, 40}, 64, 64)[4] == 0.0);
    CHECK_THROWS_AS(geometric_edge_features(a, {5, 5, 5, 9}, 64, 64), DomainError);

    Rng rng(6);
    for (int t = 0; t < 200; ++t) {
      auto rb = [&] {
        const double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
        return Box{x1, y1, x1 + rng.uniform(1, 14), y1 + rng.uniform(1, 14)};
      };
      const Box p = rb(), q = rb();
      const auto f = geometric_edge_features(p, q, 64, 48);
      const auto r = geometric_edge_features(q, p, 64, 48);
      for (std::size_t k = 0; k < 4; ++k) CHECK(f[k] == doctest::Approx(-r[k]).epsilon(1e-14));
      CHECK(f[4] == r[4]);
    }
  }

  TEST_CASE("mask semantics") {
    Rng rng(7);
    const auto dets = random_dets(rng, 4, 64, 64);
    const LatentGraph g = encode(random_tensor({4, 8, 8}, rng), dets, 64, 64);
    const LatentGraph before = g;

    Rng r0(1);
    const LatentGraph id = mask(g, {}, r0);
    CHECK(bit_equal(id.node_visual, g.node_visual));
    CHECK(bit_equal(id.node_semantic, g.node_semantic));
    CHECK(bit_equal(id.edge_visual, g.edge_visual));
    CHECK(bit_equal(id.edge_semantic, g.edge_semantic));
    CHECK(bit_equal(id.backbone_map, g.backbone_map));

    for (std::uint8_t bits = 1; bits < 8; ++bits) {
      const CategorySet cats = CategorySet::from_bits(bits);
      Rng ra(9), rb(9);
      const LatentGraph m = mask(g, cats, ra);
      const LatentGraph m2 = mask(g, cats, rb);
      CHECK(bit_equal(m.node_visual, m2.node_visual));
      CHECK(bit_equal(m.backbone_map, m2.backbone_map));
      const bool vis = cats.contains(FeatureCategory::GraphVisual);
      const bool sem = cats.contains(FeatureCategory::GraphSemantic);
      const bool img = cats.contains(FeatureCategory::BackboneImage);
      CHECK(bit_equal(m.node_visual, g.node_visual) != vis);
      CHECK(bit_equal(m.edge_visual, g.edge_visual) != vis);
      CHECK(bit_equal(m.node_semantic, g.node_semantic) != sem);
      CHECK(bit_equal(m.edge_semantic, g.edge_semantic) != sem);
      CHECK(bit_equal(m.backbone_map, g.backbone_map) != img);
      CHECK(m.edges == g.edges);
    }
    // Input untouched.
    CHECK(bit_equal(g.node_visual, before.node_visual));
    CHECK(bit_equal(g.backbone_map, before.backbone_map));
  }

  TEST_CASE("mask noise moments") {
    Rng rng(8);
    const auto dets = random_dets(rng, 7, 64, 64);
    const LatentGraph g = encode(random_tensor({16, 8, 8}, rng), dets, 64, 64);
    std::vector<double> drawn;
    Rng noise(10);
    while (drawn.size() < 10000) {
      const LatentGraph m = mask(g, CategorySet::all(), noise);
      for (const Tensor* t : {&m.node_visual, &m.edge_visual, &m.node_semantic, &m.edge_semantic,
                              &m.backbone_map}) {
        drawn.insert(drawn.end(), t->data().begin(), t->data().end());
      }
    }
    double mean = 0;
    for (double v : drawn) mean += v;
    mean /= double(drawn.size());
    double var = 0;
    for (double v : drawn) var += (v - mean) * (v - mean);
    var /= double(drawn.size() - 1);
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);
  }

  TEST_CASE("category sets") {
    CHECK(CategorySet::all().complement().empty());
    const std::vector<std::string> names = {"graph-visual", "backbone-image"};
    const CategorySet s = CategorySet::parse(names);
    CHECK(s.contains(FeatureCategory::GraphVisual));
    CHECK_FALSE(s.contains(FeatureCategory::GraphSemantic));
    CHECK(s.names() == names);
    const std::vector<std::string> bad = {"pixels"};
    CHECK_THROWS_AS(CategorySet::parse(bad), ConfigError);
  }

  TEST_CASE("covered cells") {
    CHECK(covered_cells(0, 0, 1, 1, 2, 2).size() == 4);
    // A tiny box between centers falls back to the cell holding its center.
    CHECK(covered_cells(0.01, 0.01, 0.02, 0.02, 4, 4) == std::vector<std::size_t>{0});
  }

  TEST_CASE("graph dump round trip") {
    Rng rng(11);
    const LatentGraph g = encode(random_tensor({4, 8, 8}, rng), random_dets(rng, 3, 64, 64), 64, 64);
    const auto path = std::filesystem::temp_directory_path() / "lgdg_test_graph.bin";
    write_graph_dump(path, g);
    const LatentGraph r = read_graph_dump(path);
    CHECK(r.n_nodes == g.n_nodes);
    CHECK(r.edges == g.edges);
    CHECK(bit_equal(r.node_visual, g.node_visual));
    CHECK(bit_equal(r.edge_semantic, g.edge_semantic));
    CHECK(bit_equal(r.backbone_map, g.backbone_map));
    std::filesystem::remove(path);
  }
}
