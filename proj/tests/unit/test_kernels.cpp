#include <doctest.h>

#include <cmath>
#include <numeric>

#include <omp.h>

#include "pmia/kernels.hpp"
#include "pmia/numerics.hpp"

using namespace pmia;
using namespace pmia::kernels;

namespace {

Plane random_plane(int w, int h, std::uint64_t seed) {
  Plane p(w, h);
  Rng r(seed);
  for (auto& v : p.px) v = 255.0 * r.uniform();
  return p;
}

double max_abs_diff(const Plane& a, const Plane& b) {
  REQUIRE(a.px.size() == b.px.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.px.size(); ++i) m = std::max(m, std::abs(a.px[i] - b.px[i]));
  return m;
}

struct ThreadGuard {
  int saved = omp_get_max_threads();
  ~ThreadGuard() { omp_set_num_threads(saved); }
};

}  // namespace

TEST_CASE("gaussian taps are normalized and symmetric") {
  const auto t = gaussian_taps(1.4);
  CHECK(t.size() == 2 * 5 + 1);
  CHECK(std::accumulate(t.begin(), t.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
  for (std::size_t i = 0; i < t.size() / 2; ++i) CHECK(t[i] == t[t.size() - 1 - i]);
}

TEST_CASE("separable blur matches the direct 2-D convolution") {
  const auto src = random_plane(37, 23, 1);
  CHECK(max_abs_diff(gaussian_blur(src, 1.4), gaussian_blur_reference(src, 1.4)) < 1e-9);
  CHECK(max_abs_diff(gaussian_blur(src, 0.7), gaussian_blur_reference(src, 0.7)) < 1e-9);
}

TEST_CASE("blur of a constant plane is that constant") {
  const Plane c(16, 9, 42.0);
  for (double v : gaussian_blur(c, 2.0).px) CHECK(v == doctest::Approx(42.0));
}

TEST_CASE("sobel and nms match their references") {
  const auto src = random_plane(31, 29, 2);
  const auto g = sobel(src);
  const auto gr = sobel_reference(src);
  CHECK(max_abs_diff(g.gx, gr.gx) == 0.0);
  CHECK(max_abs_diff(g.gy, gr.gy) == 0.0);
  CHECK(max_abs_diff(g.magnitude, gr.magnitude) == 0.0);
  CHECK(max_abs_diff(non_max_suppress(g), non_max_suppress_reference(g)) == 0.0);
}

TEST_CASE("sobel on a vertical step") {
  Plane p(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 4; x < 8; ++x) p.at(x, y) = 1.0;
  const auto g = sobel(p);
  // [-1 0 1; -2 0 2; -1 0 1] across the step gives 4 on both sides of it.
  CHECK(g.gx.at(3, 4) == 4.0);
  CHECK(g.gx.at(4, 4) == 4.0);
  CHECK(g.gy.at(3, 4) == 0.0);
  CHECK(g.gx.at(1, 4) == 0.0);
}

TEST_CASE("hysteresis keeps weak pixels connected to strong ones") {
  Plane nms(6, 3);
  nms.at(0, 1) = 200;  // strong
  nms.at(1, 1) = 80;   // weak, connected
  nms.at(2, 1) = 60;   // weak, connected through (1,1)
  nms.at(4, 1) = 90;   // weak, isolated
  nms.at(5, 0) = 10;   // below low
  const auto e = hysteresis(nms, 50, 150);
  CHECK(e[1 * 6 + 0] == 1);
  CHECK(e[1 * 6 + 1] == 1);
  CHECK(e[1 * 6 + 2] == 1);
  CHECK(e[1 * 6 + 4] == 0);
  CHECK(e[0 * 6 + 5] == 0);
}

TEST_CASE("blocked accumulate equals the reference sum closely and is thread-count invariant") {
  const std::size_t n = 5003, dim = 7;
  std::vector<double> items(n * dim);
  Rng r(3);
  for (auto& v : items) v = r.normal() * std::pow(10.0, static_cast<double>(r.below(8)));
  auto fn = [&](std::size_t i, std::span<double> acc) {
    for (std::size_t d = 0; d < dim; ++d) acc[d] += items[i * dim + d];
  };
  std::vector<double> ref(dim, 0.0);
  accumulate_reference(n, std::span<double>(ref), fn);

  ThreadGuard guard;
  std::vector<std::vector<double>> runs;
  for (int threads : {1, 2, 3, 8}) {
    omp_set_num_threads(threads);
    std::vector<double> out(dim, 0.0);
    blocked_accumulate(n, std::span<double>(out), fn);
    runs.push_back(out);
  }
  for (std::size_t d = 0; d < dim; ++d) {
    CHECK(runs[0][d] == doctest::Approx(ref[d]).epsilon(1e-9));
    for (const auto& run : runs) CHECK(run[d] == runs[0][d]);
  }
}

TEST_CASE("reduction block count depends only on the item count") {
  CHECK(reduction_blocks(1) == 1);
  CHECK(reduction_blocks(127) == 1);
  CHECK(reduction_blocks(128) == 2);
  CHECK(reduction_blocks(1'000'000) == kReductionBlocks);
}

TEST_CASE("parallel filters are thread-count invariant") {
  const auto src = random_plane(64, 48, 4);
  ThreadGuard guard;
  omp_set_num_threads(1);
  const auto a = non_max_suppress(sobel(gaussian_blur(src, 1.4)));
  omp_set_num_threads(4);
  const auto b = non_max_suppress(sobel(gaussian_blur(src, 1.4)));
  CHECK(a.px == b.px);
}

TEST_CASE("parallel map preserves order") {
  std::vector<int> out;
  parallel_map(1000, out, [](std::size_t i) { return static_cast<int>(i * i % 97); });
  for (std::size_t i = 0; i < 1000; ++i) CHECK(out[i] == static_cast<int>(i * i % 97));
}
