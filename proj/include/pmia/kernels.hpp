#pragma once

// Data-parallel kernels. Every parallel kernel has a serial reference kept
// for tests and for the benchmark target; parallel results never depend on
// the thread count.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <omp.h>

namespace pmia::kernels {

/// Fixed number of partial accumulators for blocked reductions. Block
/// boundaries depend only on the item count, so summing the partials in
/// block order gives bit-identical results for any number of threads.
inline constexpr std::size_t kReductionBlocks = 32;
/// Items per block below which fewer blocks are used.
inline constexpr std::size_t kMinItemsPerBlock = 64;

inline std::size_t reduction_blocks(std::size_t n_items) {
  return std::clamp<std::size_t>(n_items / kMinItemsPerBlock, 1, kReductionBlocks);
}

/// out[d] += sum_i contribution_i[d], where fn(i, acc) adds item i's
/// contribution into acc. Parallel over blocks, serial over the merge.
template <class ItemFn>
void blocked_accumulate(std::size_t n_items, std::span<double> out, ItemFn&& fn) {
  if (n_items == 0) return;
  const std::size_t n_blocks = reduction_blocks(n_items);
  const std::size_t dim = out.size();
  std::vector<std::vector<double>> partial(n_blocks);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(n_blocks); ++b) {
    const std::size_t lo = n_items * static_cast<std::size_t>(b) / n_blocks;
    const std::size_t hi = n_items * (static_cast<std::size_t>(b) + 1) / n_blocks;
    auto& acc = partial[static_cast<std::size_t>(b)];
    acc.assign(dim, 0.0);
    for (std::size_t i = lo; i < hi; ++i) fn(i, std::span<double>(acc));
  }
  for (const auto& acc : partial)
    for (std::size_t d = 0; d < dim; ++d) out[d] += acc[d];
}

/// Serial reference for blocked_accumulate: one accumulator, item order.
template <class ItemFn>
void accumulate_reference(std::size_t n_items, std::span<double> out, ItemFn&& fn) {
  std::vector<double> acc(out.size(), 0.0);
  for (std::size_t i = 0; i < n_items; ++i) fn(i, std::span<double>(acc));
  for (std::size_t d = 0; d < out.size(); ++d) out[d] += acc[d];
}

/// Independent per-item map: out[i] = fn(i).
template <class T, class ItemFn>
void parallel_map(std::size_t n_items, std::vector<T>& out, ItemFn&& fn) {
  out.resize(n_items);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n_items); ++i)
    out[static_cast<std::size_t>(i)] = fn(static_cast<std::size_t>(i));
}

// ---------------------------------------------------------------------------
// Image filters on single-channel planes
// ---------------------------------------------------------------------------

struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> px;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0) : width(w), height(h), px(static_cast<std::size_t>(w) * h, fill) {}
  double& at(int x, int y) { return px[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }
  /// Replicated border.
  double clamped(int x, int y) const {
    return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }
};

/// Normalized 1-D Gaussian taps with radius ceil(3 sigma).
std::vector<double> gaussian_taps(double sigma);

/// Separable Gaussian blur, rows in parallel.
Plane gaussian_blur(const Plane& src, double sigma);
/// Direct 2-D convolution with the outer-product kernel, serial.
Plane gaussian_blur_reference(const Plane& src, double sigma);

struct Gradient {
  Plane gx;
  Plane gy;
  Plane magnitude;  // L2 norm of the 3x3 Sobel responses
};

Gradient sobel(const Plane& src);
Gradient sobel_reference(const Plane& src);

/// Keeps magnitude only at local maxima across the gradient direction
/// (quantized to 0/45/90/135 degrees).
Plane non_max_suppress(const Gradient& g);
Plane non_max_suppress_reference(const Gradient& g);

/// Double-threshold hysteresis: strong pixels seed, weak 8-connected
/// pixels join. Returns a 0/1 edge mask. Serial (flood fill).
std::vector<std::uint8_t> hysteresis(const Plane& nms, double low, double high);

}  // namespace pmia::kernels
