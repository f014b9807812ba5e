#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lgdg/objectives.hpp"
#include "support.hpp"

using namespace lgdg;
using lgdg::test::bit_equal;
using lgdg::test::random_tensor;

namespace {

constexpr double kLn2 = std::numbers::ln2;

// Independent scalar form of the weighted BCE.
double bce_oracle(const std::array<double, 3>& z, const Labels& y, const ClassBalance& b) {
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double p = 1.0 / (1.0 + std::exp(-z[c]));
    const double w = y[c] ? 1.0 / b.positive_rate[c] : 1.0 / (1.0 - b.positive_rate[c]);
    total += -w * (y[c] ? std::log(p) : std::log(1.0 - p));
  }
  return total / 3.0;
}

Tensor logits(const std::array<double, 3>& z) { return Tensor::from({1, 3}, {z[0], z[1], z[2]}); }

Detection det(Box b, std::size_t cls) {
  Detection d;
  d.box = b;
  d.class_probs.fill(0.02);
  d.class_probs[cls] = 0.9;
  d.score = 0.9;
  return d;
}

LgModelConfig toy_lg() {
  LgModelConfig c;
  c.backbone = {16, 2, 3};
  c.gnn = {4, 2};
  c.recon = {2, 4, 2, true};
  return c;
}

Sample toy_sample(Rng& rng, std::size_t n_dets) {
  Sample s;
  s.image = random_tensor({3, 16, 16}, rng, 0, 1);
  s.width = 20;
  s.height = 16;
  for (std::size_t i = 0; i < n_dets; ++i) {
    const double x1 = rng.uniform(0, 14), y1 = rng.uniform(0, 10);
    s.detections.push_back(det({x1, y1, x1 + rng.uniform(2, 6), y1 + rng.uniform(2, 6)},
                               rng.index(kNumClasses)));
  }
  s.labels = {rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5)};
  return s;
}

LatentGraph toy_graph(Rng& rng, std::size_t n) {
  Sample s = toy_sample(rng, n);
  return encode(random_tensor({3, 2, 2}, rng), s.detections, s.width, s.height);
}

const ClassBalance kBal{{0.3, 0.6, 0.2}};

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("balanced BCE examples") {
    const ClassBalance even{{0.5, 0.5, 0.5}};
    CHECK(balanced_bce(logits({0, 0, 0}), {true, false, true}, even).item() ==
          doctest::Approx(2 * kLn2).epsilon(1e-14));

    const ClassBalance rare{{0.2, 0.2, 0.2}};
    const double five = balanced_bce(logits({0, 0, 0}), {true, true, true}, rare).item();
    CHECK(five == doctest::Approx(5 * kLn2).epsilon(1e-14));
    CHECK(five == doctest::Approx(3.4657359).epsilon(1e-7));

    CHECK(balanced_bce(logits({40, -40, 40}), {true, false, true}, kBal).item() < 1e-15);

    // At p = 0.5 both weights are 2: twice the unweighted mean BCE.
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
      const std::array<double, 3> z{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
      const Labels y{rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5)};
      double plain = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double p = 1.0 / (1.0 + std::exp(-z[c]));
        plain += -(y[c] ? std::log(p) : std::log(1 - p));
      }
      CHECK(balanced_bce(logits(z), y, even).item() == doctest::Approx(2 * plain / 3).epsilon(1e-12));
    }
  }

  TEST_CASE("balanced BCE matches the scalar oracle") {
    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
      const std::array<double, 3> z{rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-8, 8)};
      const Labels y{rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5)};
      const ClassBalance b{{rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)}};
      CHECK(balanced_bce(logits(z), y, b).item() == doctest::Approx(bce_oracle(z, y, b)).epsilon(1e-12));
    }
  }

  TEST_CASE("balanced BCE gradient") {
    Rng rng(3);
    for (int seed = 0; seed < 10; ++seed) {
      const Labels y{rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5)};
      const Tensor z = random_tensor({1, 3}, rng, -3, 3);
      CHECK(grad_check([&](const Tensor& x) { return balanced_bce(x, y, kBal); }, z) < 1e-5);
    }
  }

  TEST_CASE("class balance validation") {
    CHECK_NOTHROW(kBal.validate());
    CHECK_THROWS_AS((ClassBalance{{0.0, 0.5, 0.5}}.validate()), DomainError);
    CHECK_THROWS_AS((ClassBalance{{0.5, 1.0, 0.5}}.validate()), DomainError);
    const std::vector<Labels> labels = {{true, false, false}, {true, true, false}, {false, false, true},
                                        {false, false, false}};
    const ClassBalance b = ClassBalance::from_labels(labels);
    CHECK(b.positive_rate[0] == 0.5);
    CHECK(b.positive_rate[1] == 0.25);
    CHECK(b.positive_rate[2] == 0.25);
    CHECK_THROWS_AS(balanced_bce(logits({0, 0, 0}), {true, true, true}, ClassBalance{{0.5, 0.0, 0.5}}),
                    DomainError);
  }

  TEST_CASE("disentanglement loss with zero weights is exactly zero") {
    Rng grng(4);
    const GnnHead head(3, {4, 2}, grng);
    const LatentGraph g = toy_graph(grng, 3);
    Rng a(9), b(9);
    const DisentanglementTerms t =
        disentanglement_loss(g, {true, false, true}, {0, 0, 0, 0}, head, kBal, a);
    CHECK(t.total.item() == 0.0);
    CHECK(std::isnan(t.sem));
    CHECK(std::isnan(t.viz));
    CHECK(std::isnan(t.img));
    // The stream advances exactly as with nonzero weights.
    disentanglement_loss(g, {true, false, true}, {1, 0.3, 0.3, 0}, head, kBal, b);
    CHECK(a.next() == b.next());
  }

  TEST_CASE("disentanglement loss equals the hand-combined branches") {
    Rng grng(5);
    const GnnHead head(3, {4, 2}, grng);
    for (std::size_t n : {0u, 1u, 2u, 5u}) {
      const LatentGraph g = toy_graph(grng, n);
      const Labels y{true, false, true};
      Rng a(11), b(11);
      const DisentanglementTerms t = disentanglement_loss(g, y, {1, 0.3, 0.3, 0}, head, kBal, a);
      const double sem = balanced_bce(head.classify(mask(g, kKeepSemantic, b)), y, kBal).item();
      const double viz = balanced_bce(head.classify(mask(g, kKeepVisual, b)), y, kBal).item();
      const double img = balanced_bce(head.classify(mask(g, kKeepImage, b)), y, kBal).item();
      CHECK(t.sem == sem);
      CHECK(t.viz == viz);
      CHECK(t.img == img);
      CHECK(std::abs(t.total.item() - (1.0 * sem + 0.3 * viz + 0.3 * img)) < 1e-12);
    }
  }

  TEST_CASE("disentanglement loss is linear in the weights") {
    Rng grng(6);
    const GnnHead head(3, {4, 2}, grng);
    const LatentGraph g = toy_graph(grng, 4);
    const Labels y{false, true, true};
    auto L = [&](LossWeights w) {
      Rng r(13);
      return disentanglement_loss(g, y, w, head, kBal, r).total.item();
    };
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
      const LossWeights w1{rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2), 0};
      const LossWeights w2{rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2), 0};
      const double k = rng.uniform(0.1, 5);
      const LossWeights scaled{k * w1.sem, k * w1.viz, k * w1.img, 0};
      const LossWeights summed{w1.sem + w2.sem, w1.viz + w2.viz, w1.img + w2.img, 0};
      CHECK(L(scaled) == doctest::Approx(k * L(w1)).epsilon(1e-12));
      CHECK(L(summed) == doctest::Approx(L(w1) + L(w2)).epsilon(1e-12));
    }
  }

  TEST_CASE("disentanglement loss gradient") {
    for (int seed = 0; seed < 10; ++seed) {
      Rng grng(100 + seed);
      const GnnHead head(3, {4, 2}, grng);
      NamedParams p;
      head.collect("head", p);
      std::vector<Tensor> params;
      for (auto& [n, t] : p) params.push_back(t);
      const LatentGraph g = toy_graph(grng, static_cast<std::size_t>(seed % 4));
      const double err = grad_check_params(
          [&] {
            Rng r(1);
            return disentanglement_loss(g, {true, false, true}, {1, 0.3, 0.3, 0}, head, kBal, r).total;
          },
          params);
      CHECK(err < 1e-5);
    }
  }

  TEST_CASE("negative weights are rejected") {
    CHECK_NOTHROW(LossWeights{}.validate());
    CHECK_THROWS_AS((LossWeights{1, -0.1, 0.3, 0.5}.validate()), ConfigError);
    CHECK_THROWS_AS((LossWeights{1, 0.3, 0.3, -1}.validate()), ConfigError);
  }

  TEST_CASE("reconstruction MSE") {
    CHECK(reconstruction_loss(Tensor::zeros({3, 4, 4}), Tensor::full({3, 4, 4}, 1.0)).item() == 1.0);
    CHECK(reconstruction_loss(Tensor::full({3, 4, 4}, 0.5), Tensor::full({3, 4, 4}, 0.5)).item() == 0.0);
    CHECK_THROWS_AS(reconstruction_loss(Tensor::zeros({3, 4, 4}), Tensor::zeros({3, 4, 2})), ShapeError);
    Rng rng(8);
    for (int t = 0; t < 20; ++t) {
      const Tensor a = random_tensor({3, 8, 8}, rng), b = random_tensor({3, 8, 8}, rng);
      double naive = 0;
      for (std::size_t i = 0; i < a.numel(); ++i) naive += (a[i] - b[i]) * (a[i] - b[i]);
      naive /= static_cast<double>(a.numel());
      CHECK(reconstruction_loss(a, b).item() == doctest::Approx(naive).epsilon(1e-13));
    }
    const Tensor target = random_tensor({3, 4, 4}, rng);
    CHECK(grad_check([&](const Tensor& x) { return reconstruction_loss(x, target); },
                     random_tensor({3, 4, 4}, rng)) < 1e-5);
  }

  TEST_CASE("total loss decomposes per sample") {
    Rng rng(9);
    Rng init(10);
    const LgModel model(toy_lg(), init);
    const std::vector<Sample> batch = {toy_sample(rng, 3), toy_sample(rng, 1)};
    const LossWeights w{1, 0.3, 0.3, 0.5};
    const MaskingConfig masking{{FeatureCategory::BackboneImage}, kKeepSemantic};

    Rng aug(1), dis(2);
    const LgLossTerms t = lgdg_total_loss(batch, model, w, masking, kBal, aug, dis);

    // Same stream order by hand: CVS mask, recon mask, backgroundizing noise on
    // `augment`; the three L_DIS masks on `disentangle`.
    Rng a(1), d(2);
    double expected = 0;
    for (const Sample& s : batch) {
      const LatentGraph g = model.encode(s);
      const double cvs = balanced_bce(model.classify(mask(g, masking.cvs, a)), s.labels, kBal).item();
      const double l_dis = disentanglement_loss(g, s.labels, w, model.head(), kBal, d).total.item();
      const LatentGraph gr = mask(g, masking.recon, a);
      const Tensor bg = backgroundize(s.image, s.detections, s.width, s.height, a);
      const double rec = reconstruction_loss(model.recon()->reconstruct(gr, bg), s.image).item();
      expected += cvs + l_dis + 0.5 * rec;
    }
    expected /= 2.0;
    CHECK(std::abs(t.total.item() - expected) < 1e-12);
    CHECK(std::abs(t.cvs + t.dis + 0.5 * t.recon - t.total.item()) < 1e-12);
    CHECK(aug.next() == a.next());
    CHECK(dis.next() == d.next());
    CHECK_THROWS_AS(lgdg_total_loss(std::vector<Sample>{}, model, w, masking, kBal, aug, dis), DomainError);
  }

  TEST_CASE("zero disentanglement weights reduce the objective to the plain one") {
    Rng rng(11);
    Rng init(12);
    const LgModel model(toy_lg(), init);
    const std::vector<Sample> batch = {toy_sample(rng, 2), toy_sample(rng, 4), toy_sample(rng, 0)};
    const MaskingConfig masking{};
    Rng aug1(5), dis1(6), aug2(5);
    const LgLossTerms with_dis =
        lgdg_total_loss(batch, model, {0, 0, 0, 0.5}, masking, kBal, aug1, dis1);
    // The plain objective: CVS plus weighted reconstruction, nothing else.
    Tensor total;
    for (const Sample& s : batch) {
      const LatentGraph g = model.encode(s);
      Tensor l = add(balanced_bce(model.classify(mask(g, masking.cvs, aug2)), s.labels, kBal),
                     Tensor::scalar(0.0));
      const LatentGraph gr = mask(g, masking.recon, aug2);
      const Tensor bg = backgroundize(s.image, s.detections, s.width, s.height, aug2);
      l = add(l, scale(reconstruction_loss(model.recon()->reconstruct(gr, bg), s.image), 0.5));
      total = total.defined() ? add(total, l) : l;
    }
    total = scale(total, 1.0 / 3.0);
    CHECK(bit_equal(with_dis.total, total));
    CHECK(with_dis.dis == 0.0);
  }
}
