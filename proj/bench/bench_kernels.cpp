// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include "pmia/cdm.hpp"
#include "pmia/kernels.hpp"
#include "pmia/radar.hpp"
#include "pmia/unlearn.hpp"

namespace {

using namespace pmia;

kernels::Plane chart_plane() {
  const auto img = render_radar(std::vector<double>{0.3, 0.9, 0.5, 0.7, 0.2, 0.8, 0.6, 0.4});
  kernels::Plane p(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) p.at(x, y) = img.at(x, y).g;
  return p;
}

struct Fixture {
  Dataset dataset;
  SplitPlan plan;
  CdmModel model;
  std::vector<InteractionRecord> records;

  Fixture() {
    SyntheticSpec spec;
    spec.seed = 3;
    dataset = generate_synthetic(spec).dataset;
    plan = partition_students(dataset, 0.05, 3);
    CdmConfig cfg;
    cfg.epochs = 2;
    model = train_cdm(dataset, plan, plan.retain, cfg).model;
    records = plan.records(dataset, plan.retain, SplitPart::Train);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_BlurParallel(benchmark::State& s) {
  const auto p = chart_plane();
  for (auto _ : s) benchmark::DoNotOptimize(kernels::gaussian_blur(p, 1.4));
}
void BM_BlurReference(benchmark::State& s) {
  const auto p = chart_plane();
  for (auto _ : s) benchmark::DoNotOptimize(kernels::gaussian_blur_reference(p, 1.4));
}
void BM_SobelParallel(benchmark::State& s) {
  const auto p = chart_plane();
  for (auto _ : s) benchmark::DoNotOptimize(kernels::sobel(p));
}
void BM_SobelReference(benchmark::State& s) {
  const auto p = chart_plane();
  for (auto _ : s) benchmark::DoNotOptimize(kernels::sobel_reference(p));
}
void BM_NmsParallel(benchmark::State& s) {
  const auto g = kernels::sobel(kernels::gaussian_blur(chart_plane(), 1.4));
  for (auto _ : s) benchmark::DoNotOptimize(kernels::non_max_suppress(g));
}
void BM_NmsReference(benchmark::State& s) {
  const auto g = kernels::sobel(kernels::gaussian_blur(chart_plane(), 1.4));
  for (auto _ : s) benchmark::DoNotOptimize(kernels::non_max_suppress_reference(g));
}
void BM_FisherParallel(benchmark::State& s) {
  const auto& f = fixture();
  for (auto _ : s) benchmark::DoNotOptimize(fisher_diag(f.model, f.records));
}
void BM_FisherReference(benchmark::State& s) {
  const auto& f = fixture();
  for (auto _ : s) benchmark::DoNotOptimize(fisher_diag_reference(f.model, f.records));
}
void BM_GradientBlocked(benchmark::State& s) {
  const auto& f = fixture();
  std::vector<double> g(f.model.params().size());
  for (auto _ : s) benchmark::DoNotOptimize(f.model.mean_gradient(f.records, g));
}
void BM_GradientReference(benchmark::State& s) {
  const auto& f = fixture();
  std::vector<double> g(f.model.params().size());
  const double scale = 1.0 / static_cast<double>(f.records.size());
  for (auto _ : s) {
    std::fill(g.begin(), g.end(), 0.0);
    kernels::accumulate_reference(f.records.size(), g, [&](std::size_t i, std::span<double> acc) {
      f.model.accumulate_gradient(f.records[i], scale, acc);
    });
    benchmark::DoNotOptimize(g.data());
  }
}

}  // namespace

BENCHMARK(BM_BlurParallel);
BENCHMARK(BM_BlurReference);
BENCHMARK(BM_SobelParallel);
BENCHMARK(BM_SobelReference);
BENCHMARK(BM_NmsParallel);
BENCHMARK(BM_NmsReference);
BENCHMARK(BM_FisherParallel);
BENCHMARK(BM_FisherReference);
BENCHMARK(BM_GradientBlocked);
BENCHMARK(BM_GradientReference);

BENCHMARK_MAIN();
