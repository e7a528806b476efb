#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmia/attack.hpp"
#include "pmia/cdm.hpp"
#include "pmia/data.hpp"
#include "pmia/metrics.hpp"
#include "pmia/unlearn.hpp"

namespace pmia {

/// Defense names accepted in a plan: "none", "retrain", "amnesiac", "lcodec", "ssd".
bool is_audit_defense(std::string_view name);

inline constexpr double kAuditRatios[] = {0.01, 0.05, 0.10};

struct AuditPlan {
  std::vector<CdmArch> archs{CdmArch::NeuralCD};
  std::vector<std::string> defenses{"none"};
  std::vector<double> ratios{0.05};
  std::vector<AttackerKind> attackers{AttackerKind::DcaGrey};
  std::vector<std::uint64_t> seeds{0};
  /// Per-method grids; a tuned method without an entry uses default_grid.
  std::map<DefenseMethod, std::vector<HyperMap>> grids;
  CdmConfig cdm;  // arch and seed are set per cell
  AttackTrainOptions attack;

  void validate() const;
};

nlohmann::json to_json(const AuditPlan& plan);

struct AttackTrainingSet {
  std::vector<AttackFeature> features;
  std::vector<int> labels;
  std::vector<int> students;  // source student of each row
};

/// Step 3: positives from the forget students' test records, negatives from
/// the non-member-train students' test records, featured against m_orig.
AttackTrainingSet build_attack_training_set(const CdmModel& m_orig, const SplitPlan& plan, const Dataset& dataset,
                                            FeatureMode mode);

/// Step 4: D_f test (label 1) against D_nm_eval test (label 0), featured
/// against the defended model.
BinaryMetrics evaluate_defense(const CdmModel& m_defended, const Attacker& attacker, const SplitPlan& plan,
                               const Dataset& dataset);

struct AuditCell {
  CdmArch arch = CdmArch::NeuralCD;
  std::string defense;
  double ratio = 0.0;
  AttackerKind attacker = AttackerKind::DcaGrey;
  std::uint64_t seed = 0;
  std::optional<double> acc_mia;
  std::optional<double> auc_mia;
  HyperMap defense_hyper;
  std::optional<double> utility_acc;  // defended model on retain test records
  std::optional<double> utility_auc;
  std::vector<TuneCell> tuning;  // grid search log, empty for none/retrain
  double wall_time = 0.0;        // seconds
  std::optional<std::string> error;
};

struct AuditReport {
  std::vector<AuditCell> cells;
  std::string config_hash;
  std::string version;
};

/// Steps 1-4 for every (arch, ratio, seed) block and every defense x
/// attacker cell. Failures become error records; the run continues.
AuditReport run_audit(const AuditPlan& plan, const Dataset& dataset);

/// wall_time is omitted when include_wall_time is false, so two runs of the
/// same plan serialize identically.
nlohmann::json audit_to_json(const AuditReport& report, bool include_wall_time = true);
std::string audit_to_csv(const AuditReport& report, bool include_wall_time = true);

}  // namespace pmia
