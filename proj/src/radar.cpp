#include "pmia/radar.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pmia/error.hpp"
#include "pmia/kernels.hpp"
#include "pmia/numerics.hpp"

namespace pmia {

RadarStyle RadarStyle::for_size(int image_size) {
  RadarStyle s;
  s.image_size = image_size;
  s.max_radius = 0.42 * image_size;
  return s;
}

double RadarStyle::axis_angle(int i, int k) {
  return -0.5 * std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
}

void RadarStyle::validate() const {
  if (image_size < 16) throw ValidationError("radar style: image_size must be at least 16");
  if (ring_levels.empty() || ring_levels.back() != 1.0) throw ValidationError("radar style: rings must end at 1.0");
  for (std::size_t i = 0; i < ring_levels.size(); ++i)
    if (ring_levels[i] <= 0.0 || (i > 0 && ring_levels[i] <= ring_levels[i - 1]))
      throw ValidationError("radar style: ring levels must be positive and strictly increasing");
  if (!(max_radius > 0.0) || max_radius + stroke_width > center())
    throw ValidationError("radar style: max_radius must fit inside the image");
  if (!(stroke_width >= 1.0)) throw ValidationError("radar style: stroke_width must be at least 1 px");
}

namespace {

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

// Pixel (x, y) covers [x, x+1) x [y, y+1); it is painted when its center is
// within half the stroke width of the segment.
void stroke_segment(Image& img, Point a, Point b, double width, Rgb color) {
  const double hw = 0.5 * width;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - hw - 1)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + hw + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - hw - 1)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + hw + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (segment_distance({x + 0.5, y + 0.5}, a, b) <= hw) img.set(x, y, color);
}

std::vector<Point> polygon_vertices(std::span<const double> radii, const RadarStyle& style) {
  const int k = static_cast<int>(radii.size());
  std::vector<Point> v(radii.size());
  for (int i = 0; i < k; ++i) {
    const double a = RadarStyle::axis_angle(i, k);
    const double r = radii[static_cast<std::size_t>(i)] * style.max_radius;
    v[static_cast<std::size_t>(i)] = {style.center() + r * std::cos(a), style.center() + r * std::sin(a)};
  }
  return v;
}

void stroke_closed(Image& img, const std::vector<Point>& v, double width, Rgb color) {
  for (std::size_t i = 0; i < v.size(); ++i) stroke_segment(img, v[i], v[(i + 1) % v.size()], width, color);
}

}  // namespace

Image render_radar(std::span<const double> kstate, const RadarStyle& style) {
  style.validate();
  if (kstate.size() < 3) throw ValidationError("render_radar: K must be at least 3");
  for (double v : kstate)
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("render_radar: kstate entries must lie in [0, 1]");
  Image img(style.image_size, style.image_size, style.background);
  for (double level : style.ring_levels) {
    std::vector<double> ring(kstate.size(), level);
    stroke_closed(img, polygon_vertices(ring, style), style.stroke_width, style.ring_color);
  }
  stroke_closed(img, polygon_vertices(kstate, style), style.stroke_width, style.polygon_color);
  return img;
}

std::string_view to_string(ExtractionMethod m) { return m == ExtractionMethod::Canny ? "canny" : "llm"; }

std::vector<std::uint8_t> polygon_edges(const Image& image, const CannyOptions& options) {
  kernels::Plane mask(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const Rgb c = image.at(x, y);
      const bool green = c.g > c.r + options.green_margin && c.g > c.b + options.green_margin;
      mask.at(x, y) = green ? 255.0 : 0.0;
    }
  const auto blurred = kernels::gaussian_blur(mask, options.sigma);
  const auto grad = kernels::sobel(blurred);
  const auto nms = kernels::non_max_suppress(grad);
  return kernels::hysteresis(nms, options.low_threshold, options.high_threshold);
}

ExtractionResult extract_kstate_canny(const Image& image, int k, const RadarStyle& style, const CannyOptions& options) {
  style.validate();
  if (k < 3) throw ValidationError("extract_kstate_canny: K must be at least 3");
  if (image.width() != style.image_size || image.height() != style.image_size)
    throw ValidationError("extract_kstate_canny: image size does not match the style");
  const auto edges = polygon_edges(image, options);

  const std::size_t kk = static_cast<std::size_t>(k);
  std::vector<double> farthest(kk, -1.0);
  ExtractionResult res;
  res.method = ExtractionMethod::Canny;
  res.per_axis_confidence.assign(kk, 0);
  std::vector<double> cos_a(kk), sin_a(kk);
  for (int i = 0; i < k; ++i) {
    cos_a[static_cast<std::size_t>(i)] = std::cos(RadarStyle::axis_angle(i, k));
    sin_a[static_cast<std::size_t>(i)] = std::sin(RadarStyle::axis_angle(i, k));
  }
  const double cos_tol = std::cos(options.angular_tolerance_deg * std::numbers::pi / 180.0);
  const double c = style.center();
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      if (!edges[static_cast<std::size_t>(y) * image.width() + x]) continue;
      const double dx = x + 0.5 - c, dy = y + 0.5 - c;
      const double dist = std::hypot(dx, dy);
      for (std::size_t i = 0; i < kk; ++i) {
        const double along = dx * cos_a[i] + dy * sin_a[i];
        if (along <= 0.0) continue;
        const double across = std::abs(-dx * sin_a[i] + dy * cos_a[i]);
        if (along < cos_tol * dist && across > options.perpendicular_tolerance_px) continue;
        ++res.per_axis_confidence[i];
        farthest[i] = std::max(farthest[i], dist);
      }
    }

  res.estimates.assign(kk, 0.0);
  res.flagged.assign(kk, 0);
  for (std::size_t i = 0; i < kk; ++i) {
    if (res.per_axis_confidence[i] == 0) {
      res.flagged[i] = 1;
      continue;
    }
    // The farthest edge sits on the outer side of the stroke.
    const double r = farthest[i] - 0.5 * style.stroke_width;
    res.estimates[i] = std::clamp(r / style.max_radius, 0.0, 1.0);
  }
  const auto n_flagged = std::count(res.flagged.begin(), res.flagged.end(), 1);
  if (n_flagged == k) {
    res.error = "no polygon edge found on any axis";
    return res;
  }
  // Flagged axes: linear interpolation between the nearest readable
  // neighbours on either side (circular).
  for (std::size_t i = 0; i < kk; ++i) {
    if (!res.flagged[i]) continue;
    std::size_t back = 1, fwd = 1;
    while (res.flagged[(i + kk - back) % kk]) ++back;
    while (res.flagged[(i + fwd) % kk]) ++fwd;
    const double lo = res.estimates[(i + kk - back) % kk];
    const double hi = res.estimates[(i + fwd) % kk];
    res.estimates[i] = lo + (hi - lo) * static_cast<double>(back) / static_cast<double>(back + fwd);
  }
  return res;
}

double mae(std::span<const double> estimates, std::span<const double> truth) {
  if (estimates.size() != truth.size()) throw ValidationError("mae: length mismatch");
  if (estimates.empty()) throw ValidationError("mae: empty vectors");
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) total += std::abs(estimates[i] - truth[i]);
  return total / static_cast<double>(truth.size());
}

RoundTripResult radar_roundtrip(int n, int k, std::uint64_t seed, double min_value, const RadarStyle& style) {
  if (n < 1) throw ValidationError("radar_roundtrip: n must be >= 1");
  if (k < 3) throw ValidationError("radar_roundtrip: K must be at least 3");
  if (!(min_value >= 0.0 && min_value <= 1.0)) throw ValidationError("radar_roundtrip: min_value must lie in [0, 1]");
  RoundTripResult out;
  const Rng root(seed, fnv1a64("radar-roundtrip"));
  out.truths.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    Rng r = root.derive(static_cast<std::uint64_t>(c));
    auto& t = out.truths[static_cast<std::size_t>(c)];
    for (int i = 0; i < k; ++i) t.push_back(min_value + (1.0 - min_value) * r.uniform());
  }
  kernels::parallel_map(static_cast<std::size_t>(n), out.extractions, [&](std::size_t c) {
    return extract_kstate_canny(render_radar(out.truths[c], style), k, style);
  });
  double total = 0.0;
  for (int c = 0; c < n; ++c) {
    const auto& t = out.truths[static_cast<std::size_t>(c)];
    const auto& e = out.extractions[static_cast<std::size_t>(c)];
    if (!e.ok()) throw ValidationError("radar_roundtrip: chart " + std::to_string(c) + ": " + *e.error);
    total += mae(e.estimates, t);
    for (int i = 0; i < k; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      out.rows.push_back({c, i, t[ii], e.estimates[ii], std::abs(e.estimates[ii] - t[ii])});
    }
  }
  out.mean_mae = total / n;
  return out;
}

std::string roundtrip_to_csv(const RoundTripResult& result) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "chart,axis,ground_truth,estimate,abs_error\n";
  for (const auto& r : result.rows)
    ss << r.chart << ',' << r.axis << ',' << r.truth << ',' << r.estimate << ',' << r.abs_error << '\n';
  return ss.str();
}

}  // namespace pmia
