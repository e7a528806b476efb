#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pmia/cdm.hpp"
#include "pmia/metrics.hpp"

namespace pmia {

enum class DefenseMethod { Amnesiac, Lcodec, Ssd, Retrain };

std::string_view to_string(DefenseMethod method);
DefenseMethod parse_defense_method(std::string_view name);

/// Method-specific hyperparameters:
///   amnesiac: lr, steps
///   lcodec:   n_probes, n_batches [, scale]
///   ssd:      alpha, lambda
///   retrain:  (none)
using HyperMap = std::map<std::string, double>;

nlohmann::json to_json(const HyperMap& hyper);
HyperMap hyper_from_json(const nlohmann::json& j);

struct ForgetRequest {
  CdmModel model;
  std::vector<InteractionRecord> forget_records;  // S_f train split
  std::vector<InteractionRecord> retain_records;  // S_r train split
  DefenseMethod method = DefenseMethod::Amnesiac;
  HyperMap hyper;
  std::uint64_t seed = 0;

  // Retrain only: the data and plan the gold standard is trained from.
  const Dataset* dataset = nullptr;
  const SplitPlan* plan = nullptr;

  /// Disjoint record sets and the method's required keys.
  void validate() const;
};

struct FisherDiag {
  std::vector<double> values;  // flat parameter layout, entries >= 0
};

struct HessianDiag {
  std::vector<double> values;  // flat parameter layout, may be negative
  int n_probe_samples = 0;
};

// ---------------------------------------------------------------------------
// Generic vector forms. The CDM defenses are built on these; tests drive
// them with closed-form losses.
// ---------------------------------------------------------------------------

/// grad_fn(theta, grad) overwrites grad with the loss gradient at theta.
using GradientFn = std::function<void(std::span<const double>, std::span<double>)>;

/// `steps` updates theta <- theta + lr * grad(theta). `project` runs after
/// each step when given.
void gradient_ascent(std::span<double> theta, const GradientFn& grad_fn, double lr, int steps,
                     const std::function<void(std::span<double>)>& project = {});

inline constexpr double kHvpStep = 1e-4;

/// z . H z with the Hessian-vector product taken as a central difference
/// of the gradient: [g(theta + h z) - g(theta - h z)] / (2h).
void hessian_vector_product(std::span<const double> theta, const GradientFn& grad_fn, std::span<const double> z,
                            std::span<double> out, double h = kHvpStep);

/// Mean over n_probes Rademacher probes z of z * HVP(z).
HessianDiag hutchinson_diag(std::span<const double> theta, const GradientFn& grad_fn, int n_probes, Rng rng,
                            double h = kHvpStep);

inline constexpr double kNewtonDamping = 1e-3;

/// theta += scale * g_f / (|h| + damping)
void newton_influence_update(std::span<double> theta, std::span<const double> g_forget, std::span<const double> h,
                             double scale, double damping = kNewtonDamping);

/// Mean of squared per-record gradients.
FisherDiag empirical_fisher(std::span<const std::vector<double>> per_record_grads);

inline constexpr double kSsdEpsilon = 1e-12;

/// Scales theta_i by min(lambda F_r / (F_f + eps), 1) where F_f > alpha F_r.
/// Returns the number of selected entries.
std::size_t ssd_dampen(std::span<double> theta, std::span<const double> fisher_retain,
                       std::span<const double> fisher_forget, double alpha, double lambda);

// ---------------------------------------------------------------------------
// CDM defenses
// ---------------------------------------------------------------------------

/// Gradient ascent on the mean forget-set BCE, full forget set per step.
CdmModel amnesiac_unlearn(const ForgetRequest& req);

/// Hutchinson estimate on `records` split into n_batches shuffled chunks,
/// n_probes probes per chunk; the estimate averages all probe samples.
HessianDiag hutchinson_hessian_diag(const CdmModel& model, std::span<const InteractionRecord> records, int n_probes,
                                    int n_batches, std::uint64_t seed);

/// One damped diagonal Newton step that subtracts the forget set's influence.
CdmModel lcodec_unlearn(const ForgetRequest& req);

/// Per-parameter mean of squared per-record gradients (blocked parallel).
FisherDiag fisher_diag(const CdmModel& model, std::span<const InteractionRecord> records);
/// Serial reference for fisher_diag.
FisherDiag fisher_diag_reference(const CdmModel& model, std::span<const InteractionRecord> records);

CdmModel ssd_unlearn(const ForgetRequest& req);

/// Gold standard: train_cdm scoped to S_r with the model's own config.
CdmModel retrain_unlearn(const ForgetRequest& req);

/// Dispatches on req.method.
CdmModel run_defense(const ForgetRequest& req);

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

std::vector<HyperMap> default_grid(DefenseMethod method);

struct TuneCell {
  HyperMap hyper;
  BinaryMetrics metrics;
  double score = 0.0;  // |AUC - 0.5| + |ACC - 0.5|
};

struct TuneResult {
  std::size_t best_index = 0;
  HyperMap best_hyper;
  CdmModel best_model;
  std::vector<TuneCell> cells;  // grid order
};

/// Attack metrics of a defended model (supplied by the audit).
using DefenseEvaluator = std::function<BinaryMetrics(const CdmModel&)>;

double defense_score(const BinaryMetrics& m);

/// Runs the defense at every grid point (cells in parallel, each with its
/// own seed stream) and keeps the lowest score; ties go to the lower index.
TuneResult tune_defense(const ForgetRequest& base, std::span<const HyperMap> grid, const DefenseEvaluator& evaluate);

}  // namespace pmia
