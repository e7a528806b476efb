#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pmia {

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

/// Counter-based generator: draw i of stream s under seed k is a pure
/// function of (k, s, i). Independent streams are cheap to derive, which is
/// what keeps parallel grid cells reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of mantissa.
  double uniform();
  double normal();
  /// Uniform integer on [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// +1 or -1 with equal probability.
  double rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// New generator on a sub-stream; does not advance this one.
  Rng derive(std::uint64_t stream) const;
  Rng derive(std::string_view stream_name) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

struct ConstMatrixView;

struct MatrixView {
  double* data;
  std::size_t rows;
  std::size_t cols;
  double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::size_t size() const { return rows * cols; }
  operator ConstMatrixView() const;
};

struct ConstMatrixView {
  const double* data;
  std::size_t rows;
  std::size_t cols;
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::size_t size() const { return rows * cols; }
};

inline MatrixView::operator ConstMatrixView() const { return {data, rows, cols}; }

/// Named, row-major block inside a ParamSet. Values and gradients live in
/// the set's flat buffers at [offset, offset + rows*cols).
struct ParamBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  bool trainable = true;
  std::size_t size() const { return rows * cols; }
};

/// Contiguous parameter store. Flat access is what the unlearning code
/// needs; named block views are what the model code needs.
class ParamSet {
 public:
  std::size_t add_block(std::string name, std::size_t rows, std::size_t cols);

  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }
  void set_trainable(std::string_view name, bool trainable);

  MatrixView values(std::size_t block);
  ConstMatrixView values(std::size_t block) const;
  MatrixView grads(std::size_t block);
  ConstMatrixView grads(std::size_t block) const;

  std::span<double> flat_values() { return values_; }
  std::span<const double> flat_values() const { return values_; }
  std::span<double> flat_grads() { return grads_; }
  std::span<const double> flat_grads() const { return grads_; }
  std::size_t size() const { return values_.size(); }

  void zero_grads();
  bool all_finite() const;

  /// Bitwise equality of values and layout (grads ignored).
  bool same_values(const ParamSet& other) const;

 private:
  std::vector<ParamBlock> blocks_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

/// Initializers draw from an Rng stream keyed by the block name, so adding a
/// block never perturbs the values of the others.
void init_xavier_normal(ParamSet& params, std::size_t block, const Rng& base,
                        std::size_t fan_in, std::size_t fan_out);
void init_uniform(ParamSet& params, std::size_t block, const Rng& base, double bound);
void init_constant(ParamSet& params, std::size_t block, double value);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  AdamState() = default;
  AdamState(const ParamSet& params, AdamOptions opts);
};

/// One bias-corrected Adam update over every trainable block, then zeroes
/// all gradients.
void adam_step(ParamSet& params, AdamState& state);

// ---------------------------------------------------------------------------
// Scalar helpers and losses
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kBceEps = 1e-7;

struct LossValue {
  double value;
  double grad;  // d loss / d pred
};

/// Binary cross-entropy with the prediction clamped to [eps, 1 - eps].
LossValue bce_loss(double pred, double label);

/// d loss / d logit for a sigmoid output p = sigma(z) fed to bce_loss.
/// Zero when the clamp is active, which keeps it consistent with the loss.
double bce_logit_grad(double p, double label);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct FiniteDiffOptions {
  double h = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

using ScalarFn = std::function<double(std::span<const double>)>;

/// Max over checked coordinates of |g_analytic - g_fd| / max(1, |g_fd|),
/// with g_fd the central difference. Throws NumericError on a non-finite loss.
double finite_diff_check(const ScalarFn& loss, std::span<const double> params,
                         std::span<const double> analytic_grad, const FiniteDiffOptions& opts = {});

}  // namespace pmia
