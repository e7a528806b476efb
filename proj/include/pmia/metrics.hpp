#pragma once

#include <span>

namespace pmia {

/// Probability that a uniformly drawn positive outscores a uniformly drawn
/// negative, ties counting one half. Computed from midranks in
/// O(n log n). Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of items whose hard decision [score > threshold] equals the label.
double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct BinaryMetrics {
  double accuracy = 0.0;
  double auc = 0.0;
};

BinaryMetrics binary_metrics(std::span<const double> scores, std::span<const int> labels);

}  // namespace pmia
