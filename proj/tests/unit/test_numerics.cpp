#include <doctest.h>

#include <cmath>
#include <set>

#include "pmia/error.hpp"
#include "pmia/numerics.hpp"

using namespace pmia;

TEST_CASE("rng streams are reproducible and independent") {
  Rng a(42, 3), b(42, 3), c(42, 4);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  const Rng root(9);
  auto d1 = root.derive("cdm-init");
  auto d2 = root.derive("cdm-init");
  CHECK(d1.next_u64() == d2.next_u64());
  CHECK(root.derive("x").next_u64() != root.derive("y").next_u64());
}

TEST_CASE("rng draws stay in range with sane moments") {
  Rng r(1);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
  sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.below(7);
    REQUIRE(k < 7);
    seen.insert(k);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("shuffle is a permutation") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  Rng r(5);
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 50);
  CHECK(*s.begin() == 0);
  CHECK(*s.rbegin() == 49);
}

TEST_CASE("param blocks and views") {
  ParamSet p;
  const auto a = p.add_block("a", 2, 3);
  const auto b = p.add_block("b", 1, 4);
  CHECK(p.size() == 10);
  CHECK(p.index_of("b") == b);
  CHECK(p.block(b).offset == 6);
  p.values(a)(1, 2) = 7.0;
  CHECK(p.flat_values()[5] == 7.0);
  CHECK_THROWS_AS(p.index_of("zzz"), ValidationError);
  CHECK_THROWS(p.add_block("a", 1, 1));
  ParamSet q = p;
  CHECK(p.same_values(q));
  q.flat_values()[0] = 1e-300;
  CHECK_FALSE(p.same_values(q));
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  // m1 = (1-b1) g, v1 = (1-b2) g^2, bias correction gives mhat = g,
  // vhat = g^2, so the update is lr * g / (|g| + eps).
  ParamSet p;
  p.add_block("w", 1, 3);
  auto v = p.flat_values();
  v[0] = 1.0;
  v[1] = -2.0;
  v[2] = 0.5;
  auto g = p.flat_grads();
  g[0] = 0.3;
  g[1] = -4.0;
  g[2] = 0.0;
  AdamState st(p, AdamOptions{.lr = 0.01});
  adam_step(p, st);
  const double eps = 1e-8;
  CHECK(p.flat_values()[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + eps)).epsilon(1e-12));
  CHECK(p.flat_values()[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + eps)).epsilon(1e-12));
  CHECK(p.flat_values()[2] == 0.5);
  CHECK(p.flat_grads()[1] == 0.0);
}

TEST_CASE("adam skips frozen blocks") {
  ParamSet p;
  p.add_block("frozen", 1, 1);
  p.add_block("live", 1, 1);
  p.set_trainable("frozen", false);
  p.flat_grads()[0] = 1.0;
  p.flat_grads()[1] = 1.0;
  AdamState st(p, {});
  adam_step(p, st);
  CHECK(p.flat_values()[0] == 0.0);
  CHECK(p.flat_values()[1] < 0.0);
}

TEST_CASE("bce loss values, gradients and clamp") {
  auto l = bce_loss(0.8, 1.0);
  CHECK(l.value == doctest::Approx(-std::log(0.8)));
  CHECK(l.grad == doctest::Approx(-1.25));
  l = bce_loss(0.8, 0.0);
  CHECK(l.value == doctest::Approx(-std::log(0.2)));
  CHECK(l.grad == doctest::Approx(5.0));
  l = bce_loss(1.0, 0.0);
  CHECK(std::isfinite(l.value));
  CHECK(l.value == doctest::Approx(-std::log(kBceEps)));
  CHECK(bce_logit_grad(0.3, 1.0) == doctest::Approx(-0.7));
  CHECK(bce_logit_grad(1.0, 1.0) == 0.0);
}

TEST_CASE("sigmoid is stable at the extremes") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(2.0) + sigmoid(-2.0) == doctest::Approx(1.0));
}

TEST_CASE("finite difference check accepts exact and rejects wrong gradients") {
  const ScalarFn f = [](std::span<const double> x) { return x[0] * x[0] * x[1] + std::sin(x[1]); };
  const std::vector<double> x{1.5, -0.7};
  const std::vector<double> good{2 * x[0] * x[1], x[0] * x[0] + std::cos(x[1])};
  CHECK(finite_diff_check(f, x, good) < 1e-8);
  const std::vector<double> bad{good[0], good[1] + 0.1};
  // 0.1 off on a component of size ~3.01.
  CHECK(finite_diff_check(f, x, bad) == doctest::Approx(0.1 / good[1]).epsilon(1e-4));
  const ScalarFn nan_fn = [](std::span<const double>) { return std::nan(""); };
  CHECK_THROWS_AS(finite_diff_check(nan_fn, x, good), NumericError);
}
