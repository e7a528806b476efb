#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmia/image.hpp"

namespace pmia {

struct RadarStyle {
  int image_size = 512;
  std::vector<double> ring_levels{0.2, 0.4, 0.6, 0.8, 1.0};
  Rgb polygon_color{0, 128, 0};
  Rgb ring_color{160, 160, 160};
  Rgb background{255, 255, 255};
  double max_radius = 0.42 * 512;
  double stroke_width = 3.0;

  static RadarStyle for_size(int image_size);
  double center() const { return 0.5 * image_size; }
  /// Angle in radians of axis i of k: -90 degrees plus i full turns / k
  /// (image y points down, so increasing angle runs clockwise).
  static double axis_angle(int i, int k);
  void validate() const;
};

/// Rings as regular K-gons, then the knowledge-state polygon on top. Strokes
/// are solid colors with no anti-aliasing.
Image render_radar(std::span<const double> kstate, const RadarStyle& style = {});

enum class ExtractionMethod { Canny, Llm };
std::string_view to_string(ExtractionMethod m);

struct ExtractionResult {
  std::vector<double> estimates;         // clamped to [0,1]
  std::vector<int> per_axis_confidence;  // edge hits along each axis ray
  std::vector<std::uint8_t> flagged;     // 1 where the axis had no hit
  ExtractionMethod method = ExtractionMethod::Canny;
  std::optional<std::string> error;      // set when no axis could be read

  bool ok() const { return !error.has_value(); }
};

struct CannyOptions {
  double sigma = 1.4;
  double low_threshold = 50.0;
  double high_threshold = 150.0;
  double angular_tolerance_deg = 2.0;
  double perpendicular_tolerance_px = 1.0;
  int green_margin = 40;  // green-dominance rule: G > R + m and G > B + m
};

/// 0/1 Canny edge mask of the green-isolated image.
std::vector<std::uint8_t> polygon_edges(const Image& image, const CannyOptions& options = {});

ExtractionResult extract_kstate_canny(const Image& image, int k, const RadarStyle& style = {},
                                      const CannyOptions& options = {});

double mae(std::span<const double> estimates, std::span<const double> truth);

struct RoundTripRow {
  int chart = 0;
  int axis = 0;
  double truth = 0.0;
  double estimate = 0.0;
  double abs_error = 0.0;
};

struct RoundTripResult {
  std::vector<std::vector<double>> truths;
  std::vector<ExtractionResult> extractions;
  std::vector<RoundTripRow> rows;
  double mean_mae = 0.0;  // mean of per-chart MAEs
};

/// n random K-vectors with entries uniform in [min_value, 1], rendered and
/// extracted in parallel.
RoundTripResult radar_roundtrip(int n, int k, std::uint64_t seed, double min_value = 0.05,
                                const RadarStyle& style = {});

std::string roundtrip_to_csv(const RoundTripResult& result);

}  // namespace pmia
