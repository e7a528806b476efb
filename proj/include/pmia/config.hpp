#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pmia/attack.hpp"
#include "pmia/audit.hpp"
#include "pmia/cdm.hpp"
#include "pmia/data.hpp"
#include "pmia/unlearn.hpp"

namespace pmia {

struct DataConfig {
  std::optional<std::filesystem::path> records;  // both or neither
  std::optional<std::filesystem::path> qmatrix;
  SyntheticSpec synthetic;                       // used when no files are given

  bool from_files() const { return records.has_value(); }
};

struct RadarConfig {
  int k = 8;
  int n = 100;
  double min_value = 0.05;
  int image_size = 512;
  int save_charts = 0;  // PNGs of the first charts written to charts/
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "pmia-out";
  DataConfig data;
  double ratio = 0.05;
  CdmConfig cdm;
  std::vector<AttackerKind> attackers{AttackerKind::DcaGrey};
  AttackTrainOptions attack;
  // audit sweep
  std::vector<CdmArch> archs{CdmArch::NeuralCD};
  std::vector<std::string> defenses{"none"};
  std::vector<double> ratios{0.05};
  std::vector<std::uint64_t> seeds{0};
  std::map<DefenseMethod, std::vector<HyperMap>> grids;
  // single defense run
  DefenseMethod defense = DefenseMethod::Amnesiac;
  HyperMap defense_hyper{{"lr", 1e-5}, {"steps", 1}};
  RadarConfig radar;

  /// Cross-field checks; run before any compute.
  void validate() const;
};

/// Parses TOML text. Unknown tables or keys and mistyped values raise
/// ConfigError naming the offending key path.
RunConfig parse_run_config(std::string_view toml_text, std::string_view source = "config");
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& config);

AuditPlan make_audit_plan(const RunConfig& config);

/// Cartesian product of per-key value lists, keys in lexicographic order
/// and the last key varying fastest.
std::vector<HyperMap> expand_grid(const std::map<std::string, std::vector<double>>& axes);

}  // namespace pmia
