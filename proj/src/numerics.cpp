#include "pmia/numerics.hpp"

#include <algorithm>
#include <bit>
#include <numbers>
#include <numeric>

#include "pmia/error.hpp"

namespace pmia {

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(mix64(seed ^ mix64(stream + 0x9e3779b97f4a7c15ULL))) {}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

Rng Rng::derive(std::uint64_t stream) const { return Rng(seed_, mix64(stream_ * 31 + stream + 1)); }

Rng Rng::derive(std::string_view stream_name) const { return derive(fnv1a64(stream_name)); }

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

std::size_t ParamSet::add_block(std::string name, std::size_t rows, std::size_t cols) {
  if (contains(name)) throw ValidationError("duplicate parameter block '" + name + "'");
  ParamBlock b{std::move(name), rows, cols, values_.size(), true};
  values_.resize(values_.size() + b.size(), 0.0);
  grads_.resize(values_.size(), 0.0);
  blocks_.push_back(std::move(b));
  return blocks_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  throw ValidationError("unknown parameter block '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(blocks_.begin(), blocks_.end(), [&](const ParamBlock& b) { return b.name == name; });
}

void ParamSet::set_trainable(std::string_view name, bool trainable) {
  blocks_[index_of(name)].trainable = trainable;
}

MatrixView ParamSet::values(std::size_t i) {
  const auto& b = blocks_.at(i);
  return {values_.data() + b.offset, b.rows, b.cols};
}
ConstMatrixView ParamSet::values(std::size_t i) const {
  const auto& b = blocks_.at(i);
  return {values_.data() + b.offset, b.rows, b.cols};
}
MatrixView ParamSet::grads(std::size_t i) {
  const auto& b = blocks_.at(i);
  return {grads_.data() + b.offset, b.rows, b.cols};
}
ConstMatrixView ParamSet::grads(std::size_t i) const {
  const auto& b = blocks_.at(i);
  return {grads_.data() + b.offset, b.rows, b.cols};
}

void ParamSet::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

bool ParamSet::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

bool ParamSet::same_values(const ParamSet& other) const {
  if (blocks_.size() != other.blocks_.size() || values_.size() != other.values_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  // Bitwise, so -0.0 vs 0.0 and NaN payloads count as differences.
  return std::equal(values_.begin(), values_.end(), other.values_.begin(), [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  });
}

void init_xavier_normal(ParamSet& params, std::size_t block, const Rng& base, std::size_t fan_in,
                        std::size_t fan_out) {
  Rng rng = base.derive(params.block(block).name);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  auto v = params.values(block);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = stddev * rng.normal();
}

void init_uniform(ParamSet& params, std::size_t block, const Rng& base, double bound) {
  Rng rng = base.derive(params.block(block).name);
  auto v = params.values(block);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = bound * (2.0 * rng.uniform() - 1.0);
}

void init_constant(ParamSet& params, std::size_t block, double value) {
  auto v = params.values(block);
  std::fill(v.data, v.data + v.size(), value);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState::AdamState(const ParamSet& params, AdamOptions opts)
    : options(opts), m(params.size(), 0.0), v(params.size(), 0.0) {}

void adam_step(ParamSet& params, AdamState& state) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.t;
  const auto& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  auto values = params.flat_values();
  auto grads = params.flat_grads();
  for (const auto& b : params.blocks()) {
    if (!b.trainable) continue;
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
      const double g = grads[i];
      state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * g;
      state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * g * g;
      const double mhat = state.m[i] / bc1;
      const double vhat = state.v[i] / bc2;
      values[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
  params.zero_grads();
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

LossValue bce_loss(double pred, double label) {
  if (!std::isfinite(pred) || !std::isfinite(label)) throw NumericError("bce_loss: non-finite input");
  const double p = std::clamp(pred, kBceEps, 1.0 - kBceEps);
  const double value = -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
  const double grad = (p - label) / (p * (1.0 - p));
  return {value, grad};
}

double bce_logit_grad(double p, double label) {
  if (p < kBceEps || p > 1.0 - kBceEps) return 0.0;
  return p - label;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double finite_diff_check(const ScalarFn& loss, std::span<const double> params,
                         std::span<const double> analytic_grad, const FiniteDiffOptions& opts) {
  if (params.size() != analytic_grad.size())
    throw ValidationError("finite_diff_check: gradient size mismatch");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opts.max_coords > 0 && opts.max_coords < coords.size()) {
    Rng rng(opts.seed, 0xfd);
    rng.shuffle(coords);
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }
  std::vector<double> work(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double orig = work[i];
    work[i] = orig + opts.h;
    const double up = loss(work);
    work[i] = orig - opts.h;
    const double down = loss(work);
    work[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("finite_diff_check: non-finite loss");
    const double fd = (up - down) / (2.0 * opts.h);
    const double rel = std::abs(analytic_grad[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace pmia
