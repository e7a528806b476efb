#include "pmia/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <set>
#include <utility>

#include <omp.h>

#include "pmia/error.hpp"
#include "pmia/kernels.hpp"

namespace pmia {

std::string_view to_string(DefenseMethod method) {
  switch (method) {
    case DefenseMethod::Amnesiac: return "amnesiac";
    case DefenseMethod::Lcodec: return "lcodec";
    case DefenseMethod::Ssd: return "ssd";
    case DefenseMethod::Retrain: return "retrain";
  }
  return "?";
}

DefenseMethod parse_defense_method(std::string_view name) {
  for (auto m : {DefenseMethod::Amnesiac, DefenseMethod::Lcodec, DefenseMethod::Ssd, DefenseMethod::Retrain})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown defense method '" + std::string(name) + "'");
}

nlohmann::json to_json(const HyperMap& hyper) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : hyper) j[k] = v;
  return j;
}

HyperMap hyper_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("hyperparameters must be an object");
  HyperMap h;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw ParseError("hyperparameter '" + k + "' must be a number");
    h[k] = v.get<double>();
  }
  return h;
}

namespace {

double require(const HyperMap& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw ConfigError("missing hyperparameter '" + key + "'");
  if (!std::isfinite(it->second)) throw ConfigError("hyperparameter '" + key + "' must be finite");
  return it->second;
}

int require_int(const HyperMap& h, const std::string& key, int min_value) {
  const double v = require(h, key);
  if (v != std::floor(v) || v < min_value || v > 1e9)
    throw ConfigError("hyperparameter '" + key + "' must be an integer >= " + std::to_string(min_value));
  return static_cast<int>(v);
}

void allow_only(const HyperMap& h, std::initializer_list<std::string_view> keys, DefenseMethod m) {
  for (const auto& [k, v] : h)
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown hyperparameter '" + k + "' for " + std::string(to_string(m)));
}

}  // namespace

void ForgetRequest::validate() const {
  std::set<std::pair<int, int>> forget_keys;
  for (const auto& r : forget_records) forget_keys.emplace(r.student, r.question);
  for (const auto& r : retain_records)
    if (forget_keys.count({r.student, r.question}))
      throw ValidationError("forget and retain records overlap at (" + std::to_string(r.student) + ", " +
                            std::to_string(r.question) + ")");
  switch (method) {
    case DefenseMethod::Amnesiac:
      allow_only(hyper, {"lr", "steps"}, method);
      if (require(hyper, "lr") < 0.0) throw ConfigError("amnesiac lr must be >= 0");
      require_int(hyper, "steps", 0);
      break;
    case DefenseMethod::Lcodec:
      allow_only(hyper, {"n_probes", "n_batches", "scale"}, method);
      require_int(hyper, "n_probes", 1);
      require_int(hyper, "n_batches", 1);
      if (hyper.count("scale") && require(hyper, "scale") < 0.0) throw ConfigError("lcodec scale must be >= 0");
      break;
    case DefenseMethod::Ssd:
      allow_only(hyper, {"alpha", "lambda"}, method);
      if (require(hyper, "alpha") <= 0.0) throw ConfigError("ssd alpha must be > 0");
      if (require(hyper, "lambda") < 0.0) throw ConfigError("ssd lambda must be >= 0");
      break;
    case DefenseMethod::Retrain:
      allow_only(hyper, {}, method);
      if (!dataset || !plan) throw ConfigError("retrain needs the dataset and split plan");
      break;
  }
}

// ---------------------------------------------------------------------------
// Generic forms
// ---------------------------------------------------------------------------

void gradient_ascent(std::span<double> theta, const GradientFn& grad_fn, double lr, int steps,
                     const std::function<void(std::span<double>)>& project) {
  if (lr == 0.0) return;
  std::vector<double> g(theta.size());
  for (int s = 0; s < steps; ++s) {
    grad_fn(theta, g);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += lr * g[i];
    if (project) project(theta);
  }
}

void hessian_vector_product(std::span<const double> theta, const GradientFn& grad_fn, std::span<const double> z,
                            std::span<double> out, double h) {
  const std::size_t n = theta.size();
  std::vector<double> plus(theta.begin(), theta.end()), minus(theta.begin(), theta.end()), g_minus(n);
  for (std::size_t i = 0; i < n; ++i) {
    plus[i] += h * z[i];
    minus[i] -= h * z[i];
  }
  grad_fn(plus, out);
  grad_fn(minus, g_minus);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = (out[i] - g_minus[i]) / (2.0 * h);
    if (!std::isfinite(out[i])) throw NumericError("non-finite Hessian-vector product");
  }
}

HessianDiag hutchinson_diag(std::span<const double> theta, const GradientFn& grad_fn, int n_probes, Rng rng,
                            double h) {
  if (n_probes < 1) throw ConfigError("hutchinson: n_probes must be >= 1");
  const std::size_t n = theta.size();
  HessianDiag d;
  d.values.assign(n, 0.0);
  d.n_probe_samples = n_probes;
  std::vector<double> z(n), hz(n);
  for (int p = 0; p < n_probes; ++p) {
    for (double& zi : z) zi = rng.rademacher();
    hessian_vector_product(theta, grad_fn, z, hz, h);
    for (std::size_t i = 0; i < n; ++i) d.values[i] += z[i] * hz[i];
  }
  for (double& v : d.values) v /= n_probes;
  return d;
}

void newton_influence_update(std::span<double> theta, std::span<const double> g_forget, std::span<const double> h,
                             double scale, double damping) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (g_forget[i] == 0.0) continue;
    theta[i] += scale * g_forget[i] / (std::abs(h[i]) + damping);
  }
}

FisherDiag empirical_fisher(std::span<const std::vector<double>> per_record_grads) {
  if (per_record_grads.empty()) throw ValidationError("empirical_fisher: no gradients");
  FisherDiag f;
  f.values.assign(per_record_grads.front().size(), 0.0);
  for (const auto& g : per_record_grads) {
    if (g.size() != f.values.size()) throw ValidationError("empirical_fisher: gradient lengths differ");
    for (std::size_t k = 0; k < g.size(); ++k) f.values[k] += g[k] * g[k];
  }
  for (double& v : f.values) v /= static_cast<double>(per_record_grads.size());
  return f;
}

std::size_t ssd_dampen(std::span<double> theta, std::span<const double> fisher_retain,
                       std::span<const double> fisher_forget, double alpha, double lambda) {
  std::size_t selected = 0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!(fisher_forget[i] > alpha * fisher_retain[i])) continue;
    ++selected;
    const double beta = std::min(lambda * fisher_retain[i] / (fisher_forget[i] + kSsdEpsilon), 1.0);
    theta[i] *= beta;
  }
  return selected;
}

// ---------------------------------------------------------------------------
// CDM defenses
// ---------------------------------------------------------------------------

namespace {

GradientFn cdm_gradient_fn(const CdmModel& model, std::span<const InteractionRecord> records) {
  auto scratch = std::make_shared<CdmModel>(model);
  return [scratch, records](std::span<const double> theta, std::span<double> grad) {
    auto v = scratch->params().flat_values();
    std::copy(theta.begin(), theta.end(), v.begin());
    scratch->mean_gradient(records, grad);
  };
}

void project_monotone(CdmModel& scratch, std::span<double> theta) {
  auto v = scratch.params().flat_values();
  std::copy(theta.begin(), theta.end(), v.begin());
  scratch.clamp_monotone();
  std::copy(v.begin(), v.end(), theta.begin());
}

}  // namespace

CdmModel amnesiac_unlearn(const ForgetRequest& req) {
  if (req.forget_records.empty()) throw ValidationError("amnesiac: empty forget set");
  const double lr = require(req.hyper, "lr");
  const int steps = require_int(req.hyper, "steps", 0);
  CdmModel out = req.model;
  if (lr == 0.0 || steps == 0) return out;
  std::vector<double> theta(out.params().flat_values().begin(), out.params().flat_values().end());
  CdmModel scratch = req.model;
  gradient_ascent(theta, cdm_gradient_fn(req.model, req.forget_records), lr, steps,
                  [&](std::span<double> t) { project_monotone(scratch, t); });
  out = req.model.with_values(theta);
  if (!out.params().all_finite()) throw NumericError("amnesiac: parameters diverged");
  return out;
}

HessianDiag hutchinson_hessian_diag(const CdmModel& model, std::span<const InteractionRecord> records, int n_probes,
                                    int n_batches, std::uint64_t seed) {
  if (records.empty()) throw ValidationError("hutchinson: empty record set");
  if (n_probes < 1 || n_batches < 1) throw ConfigError("hutchinson: n_probes and n_batches must be >= 1");
  const Rng root(seed, fnv1a64("hutchinson"));
  std::vector<InteractionRecord> shuffled(records.begin(), records.end());
  Rng shuffle_rng = root.derive("batches");
  shuffle_rng.shuffle(shuffled);
  const std::size_t n_chunks = std::min<std::size_t>(static_cast<std::size_t>(n_batches), shuffled.size());

  const auto theta = model.params().flat_values();
  HessianDiag total;
  total.values.assign(theta.size(), 0.0);
  for (std::size_t b = 0; b < n_chunks; ++b) {
    const std::size_t lo = shuffled.size() * b / n_chunks;
    const std::size_t hi = shuffled.size() * (b + 1) / n_chunks;
    std::span<const InteractionRecord> chunk(shuffled.data() + lo, hi - lo);
    const auto d = hutchinson_diag(theta, cdm_gradient_fn(model, chunk), n_probes, root.derive(b));
    for (std::size_t i = 0; i < theta.size(); ++i) total.values[i] += d.values[i];
    total.n_probe_samples += d.n_probe_samples;
  }
  for (double& v : total.values) v /= static_cast<double>(n_chunks);
  return total;
}

CdmModel lcodec_unlearn(const ForgetRequest& req) {
  if (req.retain_records.empty()) throw ValidationError("lcodec: empty retain set");
  if (req.forget_records.empty()) throw ValidationError("lcodec: empty forget set");
  const int n_probes = require_int(req.hyper, "n_probes", 1);
  const int n_batches = require_int(req.hyper, "n_batches", 1);
  const double scale = req.hyper.count("scale")
                           ? require(req.hyper, "scale")
                           : static_cast<double>(req.forget_records.size()) /
                                 static_cast<double>(req.retain_records.size());

  std::vector<double> g_forget(req.model.params().size());
  req.model.mean_gradient(req.forget_records, g_forget);
  if (std::all_of(g_forget.begin(), g_forget.end(), [](double g) { return g == 0.0; })) return req.model;

  const auto h = hutchinson_hessian_diag(req.model, req.retain_records, n_probes, n_batches, req.seed);
  std::vector<double> theta(req.model.params().flat_values().begin(), req.model.params().flat_values().end());
  newton_influence_update(theta, g_forget, h.values, scale);
  CdmModel out = req.model.with_values(theta);
  out.clamp_monotone();
  if (!out.params().all_finite()) throw NumericError("lcodec: parameters diverged");
  return out;
}

namespace {

void require_nonempty(std::span<const InteractionRecord> records) {
  if (records.empty()) throw ValidationError("fisher_diag: empty record set");
}

}  // namespace

FisherDiag fisher_diag(const CdmModel& model, std::span<const InteractionRecord> records) {
  require_nonempty(records);
  const std::size_t n = model.params().size();
  FisherDiag f;
  f.values.assign(n, 0.0);
  // Static scheduling keeps each block on one thread, so a per-thread
  // scratch gradient is never shared. Only touched ranges are read and reset.
  std::vector<std::vector<double>> scratch(static_cast<std::size_t>(omp_get_max_threads()));
  kernels::blocked_accumulate(records.size(), f.values, [&](std::size_t i, std::span<double> acc) {
    auto& g = scratch[static_cast<std::size_t>(omp_get_thread_num())];
    if (g.size() != n) g.assign(n, 0.0);
    model.accumulate_gradient(records[i], 1.0, g);
    model.for_each_touched_range(records[i], [&](std::size_t lo, std::size_t len) {
      for (std::size_t k = lo; k < lo + len; ++k) {
        acc[k] += g[k] * g[k];
        g[k] = 0.0;
      }
    });
  });
  const double inv = 1.0 / static_cast<double>(records.size());
  for (double& v : f.values) v *= inv;
  return f;
}

FisherDiag fisher_diag_reference(const CdmModel& model, std::span<const InteractionRecord> records) {
  require_nonempty(records);
  std::vector<std::vector<double>> grads;
  grads.reserve(records.size());
  for (const auto& r : records) {
    grads.emplace_back(model.params().size(), 0.0);
    model.accumulate_gradient(r, 1.0, grads.back());
  }
  return empirical_fisher(grads);
}

CdmModel ssd_unlearn(const ForgetRequest& req) {
  if (req.forget_records.empty()) throw ValidationError("ssd: empty forget set");
  if (req.retain_records.empty()) throw ValidationError("ssd: empty retain set");
  const double alpha = require(req.hyper, "alpha");
  const double lambda = require(req.hyper, "lambda");
  const auto f_retain = fisher_diag(req.model, req.retain_records);
  const auto f_forget = fisher_diag(req.model, req.forget_records);
  CdmModel out = req.model;
  if (ssd_dampen(out.params().flat_values(), f_retain.values, f_forget.values, alpha, lambda) == 0) return out;
  out.clamp_monotone();
  return out;
}

CdmModel retrain_unlearn(const ForgetRequest& req) {
  if (!req.dataset || !req.plan) throw ConfigError("retrain needs the dataset and split plan");
  return train_cdm(*req.dataset, *req.plan, req.plan->retain, req.model.config()).model;
}

CdmModel run_defense(const ForgetRequest& req) {
  req.validate();
  switch (req.method) {
    case DefenseMethod::Amnesiac: return amnesiac_unlearn(req);
    case DefenseMethod::Lcodec: return lcodec_unlearn(req);
    case DefenseMethod::Ssd: return ssd_unlearn(req);
    case DefenseMethod::Retrain: return retrain_unlearn(req);
  }
  throw ConfigError("unknown defense method");
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

std::vector<HyperMap> default_grid(DefenseMethod method) {
  std::vector<HyperMap> grid;
  switch (method) {
    case DefenseMethod::Amnesiac:
      for (double lr : {1e-5, 5e-5, 1e-4})
        for (double steps : {1.0, 3.0, 5.0}) grid.push_back({{"lr", lr}, {"steps", steps}});
      break;
    case DefenseMethod::Lcodec:
      for (double p : {10.0, 20.0, 40.0})
        for (double b : {1.0, 2.0}) grid.push_back({{"n_probes", p}, {"n_batches", b}});
      break;
    case DefenseMethod::Ssd:
      for (double a : {1.3, 2.0, 2.5, 5.0})
        for (double l : {0.1, 0.3, 0.5, 0.8}) grid.push_back({{"alpha", a}, {"lambda", l}});
      break;
    case DefenseMethod::Retrain: grid.push_back({}); break;
  }
  return grid;
}

double defense_score(const BinaryMetrics& m) { return std::abs(m.auc - 0.5) + std::abs(m.accuracy - 0.5); }

TuneResult tune_defense(const ForgetRequest& base, std::span<const HyperMap> grid, const DefenseEvaluator& evaluate) {
  if (grid.empty()) throw ConfigError("tune_defense: empty grid");
  const std::size_t n = grid.size();
  std::vector<std::optional<CdmModel>> models(n);
  std::vector<TuneCell> cells(n);
  std::vector<std::exception_ptr> errors(n);
  const Rng root(base.seed, fnv1a64("tune-defense"));
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n); ++c) {
    const auto i = static_cast<std::size_t>(c);
    try {
      ForgetRequest req = base;
      req.hyper = grid[i];
      req.seed = root.derive(i).next_u64();
      models[i] = run_defense(req);
      cells[i].hyper = grid[i];
      cells[i].metrics = evaluate(*models[i]);
      cells[i].score = defense_score(cells[i].metrics);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (cells[i].score < cells[best].score) best = i;
  return TuneResult{best, grid[best], std::move(*models[best]), std::move(cells)};
}

}  // namespace pmia
