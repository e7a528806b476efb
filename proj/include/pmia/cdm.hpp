#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pmia/data.hpp"
#include "pmia/numerics.hpp"

namespace pmia {

enum class CdmArch { NeuralCD, Kscd, Kancd };

std::string_view to_string(CdmArch arch);
CdmArch parse_cdm_arch(std::string_view name);

struct CdmConfig {
  CdmArch arch = CdmArch::NeuralCD;
  int latent_dim = 16;  // student/KC embedding width for kscd and kancd
  int hidden1 = 64;
  int hidden2 = 32;
  int epochs = 50;
  int batch_size = 32;
  double lr = 2e-3;
  int patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const CdmConfig& c);
CdmConfig cdm_config_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> valid_auc;
  double valid_acc = 0.0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;  // 0 means the initialized model was kept
  std::size_t n_train_records = 0;
  std::size_t n_valid_records = 0;
};

/// A target cognitive diagnosis model. Every architecture shares the
/// interaction function
///
///   x = q_j * (kstate_s - sigmoid(diff_j)) * sigmoid(disc_j)
///   p = sigmoid(W3 sigmoid(W2 sigmoid(W1 x + b1) + b2) + b3)
///
/// with W1, W2, W3 kept nonnegative, and differs only in how kstate_s is
/// produced from the student's parameters.
class CdmModel {
 public:
  /// Freshly initialized model with embeddings for all `n_students`.
  static CdmModel create(const CdmConfig& config, const QMatrix& q_matrix, int n_students);

  CdmArch arch() const { return config_.arch; }
  const CdmConfig& config() const { return config_; }
  const QMatrix& q_matrix() const { return q_; }
  int n_students() const { return n_students_; }
  int n_questions() const { return static_cast<int>(q_.n_questions()); }
  int n_kcs() const { return static_cast<int>(q_.n_kcs()); }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  std::vector<double> kstate(int student) const;
  double predict_proba(int student, int question) const;
  /// The interaction function evaluated on an explicit knowledge state.
  double predict_from_kstate(std::span<const double> kstate, int question) const;

  double record_loss(const InteractionRecord& r) const;
  double mean_loss(std::span<const InteractionRecord> records) const;

  /// grad += scale * d loss(r) / d theta in the flat parameter layout.
  /// Returns loss(r).
  double accumulate_gradient(const InteractionRecord& r, double scale, std::span<double> grad) const;
  /// Flat [offset, offset+len) ranges that accumulate_gradient may touch.
  void for_each_touched_range(const InteractionRecord& r,
                              const std::function<void(std::size_t, std::size_t)>& fn) const;

  /// out = mean over records of the per-record gradient (blocked parallel
  /// reduction; independent of thread count). Returns the mean loss.
  double mean_gradient(std::span<const InteractionRecord> records, std::span<double> out) const;

  /// Projects interaction-MLP weights onto the nonnegative orthant.
  void clamp_monotone();
  bool is_monotone() const;

  /// Copy with flat parameter values replaced.
  CdmModel with_values(std::span<const double> values) const;

  void check_ids(int student, int question) const;

 private:
  struct Layout {
    std::size_t student, kc, fusion, fusion_bias, diff, disc, w1, b1, w2, b2, w3, b3;
  };
  struct Trace;

  void forward(int student, int question, Trace& t) const;
  void compute_kstate(int student, std::span<double> out) const;

  CdmConfig config_;
  QMatrix q_;
  int n_students_ = 0;
  ParamSet params_;
  Layout ix_{};
};

struct TrainResult {
  CdmModel model;
  TrainingLog log;
};

/// Trains on the train split of `scope` students, early-stopping on their
/// validation AUC. Parameters of students outside the scope never receive
/// gradient and stay at initialization.
TrainResult train_cdm(const Dataset& dataset, const SplitPlan& plan, std::span<const int> scope,
                      const CdmConfig& config);

struct CdmEvaluation {
  double accuracy = 0.0;
  std::optional<double> auc;  // empty when the records hold a single class
};

CdmEvaluation evaluate_cdm(const CdmModel& model, std::span<const InteractionRecord> records);

nlohmann::json cdm_to_json(const CdmModel& model, const TrainingLog* log = nullptr);
CdmModel cdm_from_json(const nlohmann::json& j);

nlohmann::json params_to_json(const ParamSet& params);
void params_from_json(const nlohmann::json& j, ParamSet& params);

}  // namespace pmia
