#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pmia/cdm.hpp"
#include "pmia/numerics.hpp"

namespace pmia {

enum class FeatureMode { Black, Grey };

std::string_view to_string(FeatureMode mode);

/// Attack input. Layout is fixed: black = [proba, response],
/// grey = [proba, response, kstate_0, ..., kstate_{K-1}].
struct AttackFeature {
  FeatureMode mode = FeatureMode::Black;
  std::vector<double> values;
};

AttackFeature extract_features(const CdmModel& model, const InteractionRecord& record, FeatureMode mode);
std::vector<AttackFeature> extract_features_batch(const CdmModel& model, std::span<const InteractionRecord> records,
                                                  FeatureMode mode);

/// Per-dimension z-scoring fitted on attack-training features. Dimensions
/// whose spread is below the floor are marked inactive and dropped from the
/// network input (their standardized value would be identically zero).
struct Standardizer {
  static constexpr double kStdFloor = 1e-8;

  std::vector<double> mean;
  std::vector<double> stddev;  // floored
  std::vector<std::uint8_t> active;

  static Standardizer fit(std::span<const AttackFeature> features);
  std::size_t input_dim() const { return mean.size(); }
  std::size_t active_dim() const;
  /// Standardized values of the active dimensions, in order.
  std::vector<double> apply(std::span<const double> x) const;
};

struct NeuralTrainOptions {
  double lr = 1e-3;
  int batch_size = 256;
  int max_epochs = 500;
  int patience = 20;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
  /// MIAttacker only: keep the membership embedding at its initial value.
  bool freeze_membership_embedding = false;
  /// MIAttacker only: initial value of every membership-embedding entry.
  double membership_embedding_init = 1.0;
};

struct NeuralTrainSummary {
  int epochs_run = 0;
  int best_epoch = 0;
  std::optional<double> holdout_auc;
  std::size_t n_train = 0;
  std::size_t n_holdout = 0;
};

/// Direct classification attacker: sigma(MLP(N(f))) with hidden widths 64
/// and 32 and ReLU activations.
struct DcaModel {
  static constexpr std::size_t kHidden1 = 64;
  static constexpr std::size_t kHidden2 = 32;

  FeatureMode mode = FeatureMode::Black;
  Standardizer standardizer;
  ParamSet params;
  NeuralTrainSummary summary;

  static DcaModel create(FeatureMode mode, Standardizer standardizer, std::uint64_t seed);
  double predict(std::span<const double> features) const;
  /// Mean BCE over (features, labels) and its gradient into params' grads.
  double loss_and_grad(std::span<const std::vector<double>> standardized, std::span<const int> labels);
  double loss(std::span<const std::vector<double>> standardized, std::span<const int> labels) const;
  double predict_standardized(std::span<const double> z) const;
};

/// Membership interaction attacker:
///   e_attack = ReLU(W_enc N(f) + b_enc)           (dim 32)
///   h_int    = e_attack * e_mem                   (element-wise)
///   p_mem    = sigma(W_2 ReLU(W_1 h_int + b_1) + b_2)   (32 -> 16 -> 1)
struct MiAttackerModel {
  static constexpr std::size_t kEmbed = 32;
  static constexpr std::size_t kHead = 16;

  FeatureMode mode = FeatureMode::Black;
  Standardizer standardizer;
  ParamSet params;
  NeuralTrainSummary summary;

  static MiAttackerModel create(FeatureMode mode, Standardizer standardizer, std::uint64_t seed,
                                double membership_embedding_init = 1.0);
  double predict(std::span<const double> features) const;
  double loss_and_grad(std::span<const std::vector<double>> standardized, std::span<const int> labels);
  double loss(std::span<const std::vector<double>> standardized, std::span<const int> labels) const;
  double predict_standardized(std::span<const double> z) const;
};

struct GbdtOptions {
  int n_trees = 50;
  int max_depth = 3;
  double learning_rate = 0.1;
  double l2 = 1.0;
  double min_child_weight = 1.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] < threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output (already scaled by the learning rate)
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double evaluate(std::span<const double> x) const;
};

/// Gradient-boosted depth-limited trees on the logistic loss with exact
/// greedy splits and Newton leaf values.
struct GbdtModel {
  std::vector<RegressionTree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;  // log-odds of the positive rate
  std::size_t n_features = 2;

  double margin(std::span<const double> x) const;
  double predict(std::span<const double> x) const { return sigmoid(margin(x)); }
};

DcaModel train_dca(std::span<const AttackFeature> features, std::span<const int> labels,
                   const NeuralTrainOptions& options = {});
MiAttackerModel train_miattacker(std::span<const AttackFeature> features, std::span<const int> labels,
                                 const NeuralTrainOptions& options = {});
GbdtModel train_gbdt(std::span<const AttackFeature> features, std::span<const int> labels,
                     const GbdtOptions& options = {});

// ---------------------------------------------------------------------------
// Attacker wrapper
// ---------------------------------------------------------------------------

enum class AttackerKind { GbdtBlack, DcaGrey, MiaGrey, DcaBlack, MiaBlack };

std::string_view to_string(AttackerKind kind);
AttackerKind parse_attacker_kind(std::string_view name);
FeatureMode feature_mode(AttackerKind kind);

struct AttackTrainOptions {
  NeuralTrainOptions neural;
  GbdtOptions gbdt;
};

struct Attacker {
  AttackerKind kind = AttackerKind::GbdtBlack;
  std::variant<GbdtModel, DcaModel, MiAttackerModel> model;

  FeatureMode mode() const { return feature_mode(kind); }
};

Attacker train_attacker(AttackerKind kind, std::span<const AttackFeature> features, std::span<const int> labels,
                        const AttackTrainOptions& options = {});

/// Membership probability. Throws ValidationError on a mode or length
/// mismatch with the attacker's training features.
double predict_membership(const Attacker& attacker, const AttackFeature& feature);
std::vector<double> predict_membership_batch(const Attacker& attacker, std::span<const AttackFeature> features);

/// Hard decision with the strict threshold: member iff p > 0.5.
inline int membership_decision(double p_mem) { return p_mem > 0.5 ? 1 : 0; }

nlohmann::json attacker_to_json(const Attacker& attacker);
Attacker attacker_from_json(const nlohmann::json& j);

}  // namespace pmia
