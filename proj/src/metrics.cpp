#include "pmia/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "pmia/error.hpp"

namespace pmia {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("auc: labels must be binary");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of positive midranks (1-based), accumulated in doubled units so the
  // tie average stays integral.
  std::size_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::size_t doubled_midrank = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) doubled_rank_sum += doubled_midrank;
    i = j + 1;
  }
  const double u = static_cast<double>(doubled_rank_sum) / 2.0 -
                   static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw ValidationError("accuracy: scores/labels length mismatch");
  if (scores.empty()) throw ValidationError("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if ((scores[i] > threshold ? 1 : 0) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

BinaryMetrics binary_metrics(std::span<const double> scores, std::span<const int> labels) {
  return {accuracy(scores, labels), auc(scores, labels)};
}

}  // namespace pmia
