#include <doctest.h>

#include <cmath>

#include "lgdg/tensor.hpp"
#include "support.hpp"

using namespace lgdg;
using lgdg::test::bit_equal;
using lgdg::test::random_tensor;

TEST_SUITE("tensor") {
  TEST_CASE("elementwise examples") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    const Tensor s = add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}));
    CHECK(s[0] == 4);
    CHECK(s[1] == 6);

    Tensor x = Tensor::parameter({1}, {3.0});
    Tape tape;
    Tensor y;
    {
      TapeScope scope(tape);
      y = mul(x, x);
    }
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("elementwise errors") {
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(log(Tensor::from({2}, {1.0, 0.0})), DomainError);
    CHECK_THROWS_AS(log(Tensor::from({1}, {-1.0})), DomainError);
  }

  TEST_CASE("matmul examples") {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor m = Tensor::from({2, 2}, {1.5, -2, 3, 4.25});
    CHECK(bit_equal(matmul(eye, m), m));
    const Tensor r = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {5, 6}));
    CHECK(r.shape() == Shape{2, 1});
    CHECK(r[0] == 17);
    CHECK(r[1] == 39);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);

    Rng rng(7);
    const Tensor b = random_tensor({3, 2}, rng);
    const double err =
        grad_check([&](const Tensor& a) { return sum(matmul(a, b)); }, random_tensor({4, 3}, rng));
    CHECK(err < 1e-6);
  }

  TEST_CASE("resize_bilinear examples") {
    const Tensor c = resize_bilinear(Tensor::full({2, 3, 4}, 0.7), 5, 2);
    CHECK(c.shape() == Shape{2, 5, 2});
    for (double v : c.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

    const Tensor one = resize_bilinear(Tensor::from({1, 1, 1}, {2.5}), 3, 4);
    for (double v : one.data()) CHECK(v == 2.5);

    // Corner-aligned sampling puts the 3×3 center at (0.5, 0.5) of the 2×2
    // grid: bilinear weights 1/4 each.
    const Tensor r = resize_bilinear(Tensor::from({1, 2, 2}, {0, 1, 2, 3}), 3, 3);
    CHECK(r[4] == doctest::Approx(0.25 * (0 + 1 + 2 + 3)));
    CHECK(r[0] == 0);
    CHECK(r[8] == 3);
    CHECK_THROWS(resize_bilinear(Tensor::zeros({1, 2, 2}), 0, 3));
  }

  TEST_CASE("backward examples") {
    Tensor w = Tensor::parameter({3}, {1, 2, 3});
    {
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = sum(w);
      }
      tape.backward(loss);
      for (double g : w.grad()) CHECK(g == 1.0);
      CHECK_THROWS_AS(tape.backward(loss), TapeError);
    }
    {
      w.zero_grad();
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = add(scale(sum(w), 0.0), Tensor::scalar(1.0));
      }
      tape.backward(loss);
      for (double g : w.grad()) CHECK(g == 0.0);
    }
    {
      Tape tape;
      Tensor v;
      {
        TapeScope scope(tape);
        v = scale(w, 2.0);
      }
      CHECK_THROWS_AS(tape.backward(v), TapeError);
    }
  }

  TEST_CASE("grad_check examples and errors") {
    Rng rng(1);
    const Tensor x = random_tensor({6}, rng);
    CHECK(grad_check([](const Tensor& t) { return sum(t); }, x) < 1e-10);
    CHECK(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x) < 1e-7);
    CHECK_THROWS_AS(grad_check([](const Tensor& t) { return t; }, x), ShapeError);
    CHECK_THROWS(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-2));
  }

  // Every differentiable op, 10 seeds, dims ≤ 8.
  TEST_CASE("grad_check over every op") {
    using Fn = std::function<Tensor(const Tensor&, Rng&)>;
    struct Case {
      const char* name;
      Shape shape;
      Fn f;
      double lo = -1.0;
      double hi = 1.0;
    };
    const std::vector<Case> cases = {
        {"add", {2, 3}, [](const Tensor& x, Rng& r) { return sum(mul(add(x, random_tensor({2, 3}, r)), x)); }},
        {"sub", {2, 3}, [](const Tensor& x, Rng& r) { return sum(mul(sub(random_tensor({2, 3}, r), x), x)); }},
        {"mul", {4}, [](const Tensor& x, Rng& r) { return sum(mul(x, random_tensor({4}, r))); }},
        {"relu", {5}, [](const Tensor& x, Rng&) { return sum(mul(relu(x), x)); }},
        {"sigmoid", {5}, [](const Tensor& x, Rng&) { return sum(sigmoid(x)); }},
        {"log", {5}, [](const Tensor& x, Rng&) { return sum(log(x)); }, 0.5, 2.0},
        {"scale", {3}, [](const Tensor& x, Rng&) { return sum(mul(scale(x, -1.7), x)); }},
        {"softplus", {5}, [](const Tensor& x, Rng&) { return sum(softplus(x)); }},
        {"tanh", {5}, [](const Tensor& x, Rng&) { return sum(tanh(x)); }},
        {"mean", {2, 4}, [](const Tensor& x, Rng&) { return mean(mul(x, x)); }},
        {"matmul-left", {3, 4}, [](const Tensor& x, Rng& r) { return sum(sigmoid(matmul(x, random_tensor({4, 2}, r)))); }},
        {"matmul-right", {4, 2}, [](const Tensor& x, Rng& r) { return sum(sigmoid(matmul(random_tensor({3, 4}, r), x))); }},
        {"transpose", {2, 3}, [](const Tensor& x, Rng& r) { return sum(mul(transpose(x), random_tensor({3, 2}, r))); }},
        {"reshape", {2, 3}, [](const Tensor& x, Rng& r) { return sum(mul(reshape(x, {3, 2}), random_tensor({3, 2}, r))); }},
        {"concat_rows", {2, 3}, [](const Tensor& x, Rng& r) { return sum(sigmoid(concat_rows({x, random_tensor({1, 3}, r), x}))); }},
        {"concat_cols", {2, 3}, [](const Tensor& x, Rng& r) { return sum(sigmoid(concat_cols({random_tensor({2, 1}, r), x, x}))); }},
        {"slice_cols", {2, 5}, [](const Tensor& x, Rng&) { return sum(sigmoid(slice_cols(x, 1, 4))); }},
        {"log_softmax_rows", {3, 4}, [](const Tensor& x, Rng& r) { return sum(mul(log_softmax_rows(x), random_tensor({3, 4}, r))); }},
        {"conv2d", {2, 6, 6}, [](const Tensor& x, Rng& r) { return sum(tanh(conv2d(x, random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r), 2, 1))); }},
        {"conv2d-weight", {3, 2, 3, 3}, [](const Tensor& w, Rng& r) { return sum(tanh(conv2d(random_tensor({2, 5, 5}, r), w, random_tensor({3}, r), 1, 0))); }},
        {"conv2d-bias", {3}, [](const Tensor& b, Rng& r) { return sum(tanh(conv2d(random_tensor({2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r), b, 2, 1))); }},
        {"conv_transpose2d", {2, 3, 3}, [](const Tensor& x, Rng& r) { return sum(tanh(conv_transpose2d(x, random_tensor({2, 3, 2, 2}, r), random_tensor({3}, r), 2))); }},
        {"conv_transpose2d-weight", {2, 3, 2, 2}, [](const Tensor& w, Rng& r) { return sum(tanh(conv_transpose2d(random_tensor({2, 3, 3}, r), w, random_tensor({3}, r), 2))); }},
        {"conv_transpose2d-bias", {3}, [](const Tensor& b, Rng& r) { return sum(tanh(conv_transpose2d(random_tensor({2, 3, 3}, r), random_tensor({2, 3, 2, 2}, r), b, 2))); }},
        {"avg_pool2d", {2, 4, 4}, [](const Tensor& x, Rng&) { return sum(tanh(avg_pool2d(x, 2))); }},
        {"resize_bilinear-up", {2, 3, 2}, [](const Tensor& x, Rng& r) { return sum(mul(resize_bilinear(x, 5, 4), random_tensor({2, 5, 4}, r))); }},
        {"resize_bilinear-down", {1, 6, 7}, [](const Tensor& x, Rng& r) { return sum(mul(resize_bilinear(x, 4, 3), random_tensor({1, 4, 3}, r))); }},
        {"global_avg_pool", {3, 2, 4}, [](const Tensor& x, Rng&) { return sum(tanh(global_avg_pool(x))); }},
    };
    for (const Case& c : cases) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CAPTURE(c.name);
        CAPTURE(seed);
        Rng data(seed);
        const Tensor x = random_tensor(c.shape, data, c.lo, c.hi);
        const std::uint64_t fixed_seed = 1000 + seed;
        const double err = grad_check(
            [&](const Tensor& t) {
              Rng aux(fixed_seed);
              return c.f(t, aux);
            },
            x);
        CHECK(err < 1e-5);
      }
    }
  }

  TEST_CASE("backward is linear in the loss") {
    Rng rng(3);
    Tensor w = Tensor::parameter({3, 4}, lgdg::test::random_values(12, rng));
    const Tensor a = random_tensor({2, 3}, rng);
    auto l1 = [&] { return sum(sigmoid(matmul(a, w))); };
    auto l2 = [&] { return mean(mul(w, w)); };
    auto grads_of = [&](const std::function<Tensor()>& f) {
      w.zero_grad();
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = f();
      }
      tape.backward(loss);
      return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    const auto g1 = grads_of(l1);
    const auto g2 = grads_of(l2);
    const auto g12 = grads_of([&] { return add(l1(), l2()); });
    for (std::size_t i = 0; i < g12.size(); ++i) {
      const double expect = g1[i] + g2[i];
      CHECK(std::abs(g12[i] - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
    }
  }

  TEST_CASE("deterministic forward and backward") {
    auto run = [] {
      Rng rng(11);
      Tensor w = Tensor::parameter({2, 3, 3, 3}, lgdg::test::random_values(54, rng));
      const Tensor x = random_tensor({3, 8, 8}, rng);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = mean(relu(conv2d(x, w, Tensor(), 2, 1)));
      }
      tape.backward(loss);
      return std::make_pair(loss.detach(), Tensor::from(w.shape(), {w.grad().begin(), w.grad().end()}));
    };
    const auto a = run();
    const auto b = run();
    CHECK(bit_equal(a.first, b.first));
    CHECK(bit_equal(a.second, b.second));
  }

  TEST_CASE("shape invariants") {
    const Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(shape_numel(t.shape()) == t.numel());
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(reshape(t, {5, 5}), ShapeError);
  }

  TEST_CASE("non-finite results raise divergence") {
    CHECK_THROWS_AS(scale(Tensor::from({1}, {1e300}), 1e300), NumericDivergence);
  }

  TEST_CASE("no recording without a tape") {
    Tensor w = Tensor::parameter({2}, {1, 2});
    const Tensor y = mul(w, w);
    CHECK(y.is_leaf());
    CHECK(current_tape() == nullptr);
  }
}
