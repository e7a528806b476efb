#include "pmia/kernels.hpp"

#include <cmath>

namespace pmia::kernels {

std::vector<double> gaussian_taps(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += taps[i + radius];
  }
  for (double& t : taps) t /= total;
  return taps;
}

namespace {

void blur_row_horizontal(const Plane& src, Plane& dst, int y, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size() / 2);
  for (int x = 0; x < src.width; ++x) {
    double acc = 0.0;
    for (int k = -r; k <= r; ++k) acc += taps[k + r] * src.clamped(x + k, y);
    dst.at(x, y) = acc;
  }
}

void blur_row_vertical(const Plane& src, Plane& dst, int y, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size() / 2);
  for (int x = 0; x < src.width; ++x) {
    double acc = 0.0;
    for (int k = -r; k <= r; ++k) acc += taps[k + r] * src.clamped(x, y + k);
    dst.at(x, y) = acc;
  }
}

void sobel_row(const Plane& s, Gradient& g, int y) {
  for (int x = 0; x < s.width; ++x) {
    const double gx = -s.clamped(x - 1, y - 1) - 2.0 * s.clamped(x - 1, y) - s.clamped(x - 1, y + 1) +
                      s.clamped(x + 1, y - 1) + 2.0 * s.clamped(x + 1, y) + s.clamped(x + 1, y + 1);
    const double gy = -s.clamped(x - 1, y - 1) - 2.0 * s.clamped(x, y - 1) - s.clamped(x + 1, y - 1) +
                      s.clamped(x - 1, y + 1) + 2.0 * s.clamped(x, y + 1) + s.clamped(x + 1, y + 1);
    g.gx.at(x, y) = gx;
    g.gy.at(x, y) = gy;
    g.magnitude.at(x, y) = std::sqrt(gx * gx + gy * gy);
  }
}

void nms_row(const Gradient& g, Plane& out, int y) {
  const Plane& m = g.magnitude;
  for (int x = 0; x < m.width; ++x) {
    const double mag = m.at(x, y);
    if (mag == 0.0) {
      out.at(x, y) = 0.0;
      continue;
    }
    double angle = std::atan2(g.gy.at(x, y), g.gx.at(x, y)) * 180.0 / M_PI;
    if (angle < 0) angle += 180.0;
    int dx = 0, dy = 0;
    if (angle < 22.5 || angle >= 157.5) {
      dx = 1;
    } else if (angle < 67.5) {
      dx = 1;
      dy = 1;
    } else if (angle < 112.5) {
      dy = 1;
    } else {
      dx = -1;
      dy = 1;
    }
    const double a = m.clamped(x + dx, y + dy);
    const double b = m.clamped(x - dx, y - dy);
    // Ties resolved toward the forward neighbour so plateaus keep one pixel.
    out.at(x, y) = (mag >= a && mag > b) ? mag : 0.0;
  }
}

}  // namespace

Plane gaussian_blur(const Plane& src, double sigma) {
  const auto taps = gaussian_taps(sigma);
  Plane tmp(src.width, src.height);
  Plane dst(src.width, src.height);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < src.height; ++y) blur_row_horizontal(src, tmp, y, taps);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < src.height; ++y) blur_row_vertical(tmp, dst, y, taps);
  return dst;
}

Plane gaussian_blur_reference(const Plane& src, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const int r = static_cast<int>(taps.size() / 2);
  Plane dst(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky)
        for (int kx = -r; kx <= r; ++kx) acc += taps[ky + r] * taps[kx + r] * src.clamped(x + kx, y + ky);
      dst.at(x, y) = acc;
    }
  return dst;
}

Gradient sobel(const Plane& src) {
  Gradient g{Plane(src.width, src.height), Plane(src.width, src.height), Plane(src.width, src.height)};
#pragma omp parallel for schedule(static)
  for (int y = 0; y < src.height; ++y) sobel_row(src, g, y);
  return g;
}

Gradient sobel_reference(const Plane& src) {
  Gradient g{Plane(src.width, src.height), Plane(src.width, src.height), Plane(src.width, src.height)};
  for (int y = 0; y < src.height; ++y) sobel_row(src, g, y);
  return g;
}

Plane non_max_suppress(const Gradient& g) {
  Plane out(g.magnitude.width, g.magnitude.height);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < out.height; ++y) nms_row(g, out, y);
  return out;
}

Plane non_max_suppress_reference(const Gradient& g) {
  Plane out(g.magnitude.width, g.magnitude.height);
  for (int y = 0; y < out.height; ++y) nms_row(g, out, y);
  return out;
}

std::vector<std::uint8_t> hysteresis(const Plane& nms, double low, double high) {
  const int w = nms.width;
  const int h = nms.height;
  std::vector<std::uint8_t> edges(static_cast<std::size_t>(w) * h, 0);
  std::vector<int> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (nms.px[i] >= high && !edges[i]) {
        edges[i] = 1;
        stack.push_back(static_cast<int>(i));
        while (!stack.empty()) {
          const int cur = stack.back();
          stack.pop_back();
          const int cx = cur % w;
          const int cy = cur / w;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int nx = cx + dx;
              const int ny = cy + dy;
              if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
              const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
              if (!edges[j] && nms.px[j] >= low) {
                edges[j] = 1;
                stack.push_back(static_cast<int>(j));
              }
            }
        }
      }
    }
  return edges;
}

}  // namespace pmia::kernels
