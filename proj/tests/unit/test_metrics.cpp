#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ap_oracle.hpp"
#include "lgdg/metrics.hpp"
#include "lgdg/rng.hpp"

using namespace lgdg;

namespace {

std::vector<std::int64_t> iota_ids(std::size_t n) {
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("average_precision examples") {
    const std::vector<double> s = {0.9, 0.8, 0.3, 0.1};
    const std::vector<std::uint8_t> y = {1, 1, 0, 0};
    CHECK(average_precision(s, y) == 1.0);

    const std::vector<double> s2 = {0.2, 0.9};
    const std::vector<std::uint8_t> y2 = {1, 0};
    CHECK(average_precision(s2, y2) == 0.5);
  }

  TEST_CASE("undefined AP raises") {
    const std::vector<double> s = {0.1, 0.2};
    const std::vector<std::uint8_t> none = {0, 0};
    const std::vector<std::uint8_t> all = {1, 1};
    CHECK_THROWS_AS(average_precision(s, none), UndefinedMetric);
    CHECK_THROWS_AS(average_precision(s, all), UndefinedMetric);
  }

  TEST_CASE("ties break by frame id") {
    const std::vector<double> s = {0.5, 0.5};
    const std::vector<std::uint8_t> y = {0, 1};
    const std::vector<std::int64_t> pos_first = {2, 1};
    const std::vector<std::int64_t> neg_first = {1, 2};
    CHECK(average_precision(s, y, pos_first) == 1.0);
    CHECK(average_precision(s, y, neg_first) == 0.5);
  }

  TEST_CASE("matches brute force on random sets n <= 8") {
    Rng rng(5);
    for (int trial = 0; trial < 3000; ++trial) {
      const std::size_t n = 2 + rng.index(7);
      std::vector<double> s(n);
      std::vector<std::uint8_t> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<double>(rng.index(4)) / 4.0;  // frequent ties
        y[i] = rng.bernoulli(0.4);
      }
      y[0] = 1;
      y[1] = 0;
      std::vector<std::int64_t> ids = iota_ids(n);
      rng.shuffle(ids.begin(), ids.end());
      CHECK(average_precision(s, y, ids) == lgdg::test::brute_force_ap(s, y, ids));
    }
  }

  TEST_CASE("invariant under strictly monotone score transforms") {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 3 + rng.index(20);
      std::vector<double> s(n), t(n);
      std::vector<std::uint8_t> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform(-2, 2);
        t[i] = std::exp(3 * s[i]) + 1.0;
        y[i] = rng.bernoulli(0.5);
      }
      y[0] = 1;
      y[1] = 0;
      CHECK(average_precision(s, y) == average_precision(t, y));
    }
  }

  TEST_CASE("inverted scores and labels follow the staircase oracle") {
    Rng rng(10);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 8;
      std::vector<double> s(n), neg(n);
      std::vector<std::uint8_t> y(n), flip(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform();
        neg[i] = -s[i];
        y[i] = i % 2;
        flip[i] = 1 - y[i];
      }
      const auto ids = iota_ids(n);
      CHECK(average_precision(neg, flip, ids) == lgdg::test::brute_force_ap(neg, flip, ids));
    }
  }

  TEST_CASE("staircase_ap caps recall for unretrieved positives") {
    const std::vector<std::uint8_t> hits = {1, 0};
    CHECK(staircase_ap(hits, 2) == 0.5);
  }

  TEST_CASE("map3 examples") {
    PredictionSet p;
    p.add({0.9, 0.9, 0.9}, {true, true, true}, 0);
    p.add({0.1, 0.1, 0.1}, {false, false, false}, 1);
    CHECK(map3(p).map == 1.0);

    // Criteria 2 and 3 rank their single positive second of two.
    PredictionSet q;
    q.add({0.9, 0.2, 0.9}, {true, true, false}, 0);
    q.add({0.1, 0.9, 0.1}, {false, false, true}, 1);
    const MapResult r = map3(q);
    CHECK(r.ap[0] == 1.0);
    CHECK(r.ap[1] == 0.5);
    CHECK(r.ap[2] == 0.5);
    CHECK(r.map == doctest::Approx((1.0 + 0.5 + 0.5) / 3.0));
  }

  TEST_CASE("map3 matches independently recomputed APs") {
    Rng rng(12);
    PredictionSet p;
    for (int i = 0; i < 40; ++i) {
      p.add({rng.uniform(), rng.uniform(), rng.uniform()},
            {rng.bernoulli(0.3), rng.bernoulli(0.5), rng.bernoulli(0.2) || i == 0}, i);
    }
    p.labels[1] = {false, false, false};
    const MapResult r = map3(p);
    double total = 0;
    for (std::size_t c = 0; c < kNumCriteria; ++c) {
      std::vector<double> s;
      std::vector<std::uint8_t> y;
      for (std::size_t i = 0; i < p.size(); ++i) {
        s.push_back(p.scores[i][c]);
        y.push_back(p.labels[i][c]);
      }
      const double ap = lgdg::test::brute_force_ap(s, y, p.frame_ids);
      CHECK(r.ap[c] == doctest::Approx(ap).epsilon(1e-15));
      total += ap;
    }
    CHECK(r.map == doctest::Approx(total / 3).epsilon(1e-15));
    CHECK(r.map >= 0.0);
    CHECK(r.map <= 1.0);
  }

  TEST_CASE("map3 reports the undefined criterion") {
    PredictionSet p;
    p.add({0.9, 0.9, 0.9}, {true, true, false}, 0);
    p.add({0.1, 0.1, 0.1}, {false, false, false}, 1);
    try {
      map3(p);
      FAIL("expected UndefinedMetric");
    } catch (const UndefinedMetric& e) {
      CHECK(e.criterion() == 2);
    }
  }

  TEST_CASE("aggregate examples") {
    const std::vector<double> same = {0.4, 0.4, 0.4};
    CHECK(*aggregate(same).std == 0.0);
    const std::vector<double> v = {1, 2, 3};
    const ResultAggregate a = aggregate(v);
    CHECK(a.mean == 2.0);
    CHECK(*a.std == 1.0);
    const std::vector<double> one = {0.3};
    CHECK_FALSE(aggregate(one).std.has_value());
    CHECK_THROWS(aggregate(std::vector<double>{}));
  }

  TEST_CASE("aggregate matches a two-pass computation") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> v(2 + rng.index(10));
      for (double& x : v) x = rng.uniform();
      double m = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double ss = 0;
      for (double x : v) ss += (x - m) * (x - m);
      const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      const ResultAggregate a = aggregate(v);
      CHECK(a.mean == doctest::Approx(m).epsilon(1e-14));
      CHECK(*a.std == doctest::Approx(sd).epsilon(1e-12));
    }
  }

  TEST_CASE("format_mean_std") {
    const std::vector<double> v = {0.30, 0.32};
    CHECK(format_mean_std(aggregate(v)) == "31.00 ± 1.41");
    const std::vector<double> one = {0.2788};
    CHECK(format_mean_std(aggregate(one)) == "27.88");
  }
}
