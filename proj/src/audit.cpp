#include "pmia/audit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>

#include "pmia/error.hpp"
#include "pmia/io.hpp"

namespace pmia {

namespace {

constexpr const char* kDefenseNames[] = {"none", "retrain", "amnesiac", "lcodec", "ssd"};

std::string error_message(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    return std::string(to_string(err.kind())) + ": " + err.what();
  } catch (const std::exception& err) {
    return err.what();
  } catch (...) {
    return "unknown error";
  }
}

std::uint64_t derived_seed(std::uint64_t seed, std::string_view name) { return Rng(seed).derive(name).next_u64(); }

}  // namespace

bool is_audit_defense(std::string_view name) {
  return std::find(std::begin(kDefenseNames), std::end(kDefenseNames), name) != std::end(kDefenseNames);
}

void AuditPlan::validate() const {
  if (archs.empty() || defenses.empty() || ratios.empty() || attackers.empty() || seeds.empty())
    throw ConfigError("audit plan: archs, defenses, ratios, attackers and seeds must be nonempty");
  for (const auto& d : defenses)
    if (!is_audit_defense(d)) throw ConfigError("audit plan: unknown defense '" + d + "'");
  for (double r : ratios)
    if (std::none_of(std::begin(kAuditRatios), std::end(kAuditRatios),
                     [&](double a) { return std::abs(a - r) < 1e-12; }))
      throw ConfigError("audit plan: ratio " + std::to_string(r) + " is not one of 0.01, 0.05, 0.10");
  for (const auto& [method, grid] : grids) {
    if (grid.empty()) throw ConfigError("audit plan: empty grid for " + std::string(to_string(method)));
    for (const auto& h : grid) {
      ForgetRequest probe{CdmModel{}, {}, {}, method, h};
      if (method == DefenseMethod::Retrain) continue;
      probe.validate();
    }
  }
  cdm.validate();
}

nlohmann::json to_json(const AuditPlan& plan) {
  nlohmann::json j;
  j["archs"] = nlohmann::json::array();
  for (auto a : plan.archs) j["archs"].push_back(to_string(a));
  j["defenses"] = plan.defenses;
  j["ratios"] = plan.ratios;
  j["attackers"] = nlohmann::json::array();
  for (auto a : plan.attackers) j["attackers"].push_back(to_string(a));
  j["seeds"] = plan.seeds;
  j["grids"] = nlohmann::json::object();
  for (const auto& [method, grid] : plan.grids) {
    auto& g = j["grids"][std::string(to_string(method))] = nlohmann::json::array();
    for (const auto& h : grid) g.push_back(to_json(h));
  }
  j["cdm"] = to_json(plan.cdm);
  const auto& n = plan.attack.neural;
  j["attack"] = {{"lr", n.lr},
                 {"batch_size", n.batch_size},
                 {"max_epochs", n.max_epochs},
                 {"patience", n.patience},
                 {"holdout_fraction", n.holdout_fraction},
                 {"gbdt",
                  {{"n_trees", plan.attack.gbdt.n_trees},
                   {"max_depth", plan.attack.gbdt.max_depth},
                   {"learning_rate", plan.attack.gbdt.learning_rate},
                   {"l2", plan.attack.gbdt.l2},
                   {"min_child_weight", plan.attack.gbdt.min_child_weight}}}};
  return j;
}

AttackTrainingSet build_attack_training_set(const CdmModel& m_orig, const SplitPlan& plan, const Dataset& dataset,
                                            FeatureMode mode) {
  const auto pos = plan.records(dataset, plan.forget, SplitPart::Test);
  const auto neg = plan.records(dataset, plan.nonmember_train, SplitPart::Test);
  if (pos.empty() || neg.empty()) throw ValidationError("attack training set: empty forget or non-member test split");
  AttackTrainingSet set;
  auto f_pos = extract_features_batch(m_orig, pos, mode);
  auto f_neg = extract_features_batch(m_orig, neg, mode);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    set.features.push_back(std::move(f_pos[i]));
    set.labels.push_back(1);
    set.students.push_back(pos[i].student);
  }
  for (std::size_t i = 0; i < neg.size(); ++i) {
    set.features.push_back(std::move(f_neg[i]));
    set.labels.push_back(0);
    set.students.push_back(neg[i].student);
  }
  return set;
}

BinaryMetrics evaluate_defense(const CdmModel& m_defended, const Attacker& attacker, const SplitPlan& plan,
                               const Dataset& dataset) {
  const auto pos = plan.records(dataset, plan.forget, SplitPart::Test);
  const auto neg = plan.records(dataset, plan.nonmember_eval, SplitPart::Test);
  if (pos.empty() || neg.empty()) throw ValidationError("evaluate_defense: empty forget or non-member test split");
  std::vector<AttackFeature> features = extract_features_batch(m_defended, pos, attacker.mode());
  auto f_neg = extract_features_batch(m_defended, neg, attacker.mode());
  features.insert(features.end(), std::make_move_iterator(f_neg.begin()), std::make_move_iterator(f_neg.end()));
  std::vector<int> labels(pos.size(), 1);
  labels.resize(pos.size() + neg.size(), 0);
  return binary_metrics(predict_membership_batch(attacker, features), labels);
}

namespace {

struct Block {
  CdmArch arch;
  double ratio;
  std::uint64_t seed;
};

void run_block(const AuditPlan& plan, const Dataset& dataset, const Block& block, std::vector<AuditCell>& out) {
  const std::size_t n_def = plan.defenses.size();
  const std::size_t n_att = plan.attackers.size();
  std::vector<AuditCell> cells(n_def * n_att);
  for (std::size_t d = 0; d < n_def; ++d)
    for (std::size_t a = 0; a < n_att; ++a) {
      auto& c = cells[d * n_att + a];
      c.arch = block.arch;
      c.defense = plan.defenses[d];
      c.ratio = block.ratio;
      c.attacker = plan.attackers[a];
      c.seed = block.seed;
    }

  const auto block_start = std::chrono::steady_clock::now();
  SplitPlan split;
  std::optional<CdmModel> m_orig, m_retrain;
  std::vector<std::optional<Attacker>> attackers(n_att);
  std::vector<std::optional<std::string>> attacker_errors(n_att);
  try {
    // Step 1: partition. Step 2: M_orig and (if requested) M_retrain.
    split = partition_students(dataset, block.ratio, block.seed);
    CdmConfig cfg = plan.cdm;
    cfg.arch = block.arch;
    cfg.seed = block.seed;
    m_orig = train_cdm(dataset, split, merge_students(split.retain, split.forget), cfg).model;
    if (std::find(plan.defenses.begin(), plan.defenses.end(), "retrain") != plan.defenses.end())
      m_retrain = train_cdm(dataset, split, split.retain, cfg).model;

    // Step 3: one attacker per kind, trained on M_orig outputs.
    for (std::size_t a = 0; a < n_att; ++a) {
      try {
        const auto kind = plan.attackers[a];
        const auto set = build_attack_training_set(*m_orig, split, dataset, feature_mode(kind));
        AttackTrainOptions opts = plan.attack;
        opts.neural.seed = derived_seed(block.seed, "attacker:" + std::string(to_string(kind)));
        attackers[a] = train_attacker(kind, set.features, set.labels, opts);
      } catch (...) {
        attacker_errors[a] = error_message(std::current_exception());
      }
    }
  } catch (...) {
    const auto msg = error_message(std::current_exception());
    for (auto& c : cells) c.error = msg;
    out.insert(out.end(), cells.begin(), cells.end());
    return;
  }
  const double shared_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - block_start).count();

  const auto retain_test = split.records(dataset, split.retain, SplitPart::Test);
  const auto forget_train = split.records(dataset, split.forget, SplitPart::Train);
  const auto retain_train = split.records(dataset, split.retain, SplitPart::Train);

  // Step 4: every defense x attacker cell.
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(cells.size()); ++ci) {
    auto& cell = cells[static_cast<std::size_t>(ci)];
    const std::size_t a = static_cast<std::size_t>(ci) % n_att;
    const auto start = std::chrono::steady_clock::now();
    try {
      if (attacker_errors[a]) throw Error(ErrorKind::Validation, "attacker training failed: " + *attacker_errors[a]);
      const Attacker& attacker = *attackers[a];
      auto evaluate = [&](const CdmModel& m) { return evaluate_defense(m, attacker, split, dataset); };
      std::optional<CdmModel> defended;
      if (cell.defense == "none") {
        defended = *m_orig;
      } else if (cell.defense == "retrain") {
        defended = *m_retrain;
      } else {
        const auto method = parse_defense_method(cell.defense);
        ForgetRequest req{*m_orig, forget_train, retain_train, method, {}};
        req.seed = derived_seed(block.seed, "defense:" + cell.defense + ":" + std::string(to_string(cell.attacker)));
        auto it = plan.grids.find(method);
        const auto grid = it != plan.grids.end() ? it->second : default_grid(method);
        auto tuned = tune_defense(req, grid, evaluate);
        cell.defense_hyper = tuned.best_hyper;
        cell.tuning = std::move(tuned.cells);
        defended = std::move(tuned.best_model);
      }
      const auto m = evaluate(*defended);
      cell.acc_mia = m.accuracy;
      cell.auc_mia = m.auc;
      const auto utility = evaluate_cdm(*defended, retain_test);
      cell.utility_acc = utility.accuracy;
      cell.utility_auc = utility.auc;
    } catch (...) {
      cell.error = error_message(std::current_exception());
    }
    cell.wall_time = shared_time + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  out.insert(out.end(), cells.begin(), cells.end());
}

std::string dataset_fingerprint(const Dataset& dataset) {
  std::ostringstream ss;
  write_records_csv(ss, dataset.records);
  write_qmatrix_csv(ss, dataset.q_matrix);
  return sha256_hex(ss.str());
}

}  // namespace

AuditReport run_audit(const AuditPlan& plan, const Dataset& dataset) {
  plan.validate();
  dataset.validate();
  AuditReport report;
  report.version = PMIA_VERSION;
  nlohmann::json provenance = {{"plan", to_json(plan)}, {"dataset_sha256", dataset_fingerprint(dataset)}};
  report.config_hash = sha256_hex(provenance.dump());
  for (auto arch : plan.archs)
    for (double ratio : plan.ratios)
      for (auto seed : plan.seeds) run_block(plan, dataset, Block{arch, ratio, seed}, report.cells);
  return report;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json audit_to_json(const AuditReport& report, bool include_wall_time) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    nlohmann::json tuning = nlohmann::json::array();
    for (const auto& t : c.tuning)
      tuning.push_back({{"hyper", to_json(t.hyper)},
                        {"acc_mia", t.metrics.accuracy},
                        {"auc_mia", t.metrics.auc},
                        {"score", t.score}});
    nlohmann::json j = {{"arch", to_string(c.arch)},
                        {"defense", c.defense},
                        {"ratio", c.ratio},
                        {"attacker", to_string(c.attacker)},
                        {"seed", c.seed},
                        {"acc_mia", optional_json(c.acc_mia)},
                        {"auc_mia", optional_json(c.auc_mia)},
                        {"defense_hyper", to_json(c.defense_hyper)},
                        {"utility", {{"acc", optional_json(c.utility_acc)}, {"auc", optional_json(c.utility_auc)}}},
                        {"tuning", tuning},
                        {"error", c.error ? nlohmann::json(*c.error) : nlohmann::json(nullptr)}};
    if (include_wall_time) j["wall_time"] = c.wall_time;
    cells.push_back(std::move(j));
  }
  return {{"format", "audit/1"},
          {"provenance", {{"config_hash", report.config_hash}, {"version", report.version}}},
          {"cells", cells}};
}

namespace {

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << *v;
  return ss.str();
}

}  // namespace

std::string audit_to_csv(const AuditReport& report, bool include_wall_time) {
  std::ostringstream out;
  out << "arch,defense,ratio,attacker,seed,acc_mia,auc_mia,defense_hyper,utility_acc,utility_auc";
  if (include_wall_time) out << ",wall_time";
  out << ",error\n";
  for (const auto& c : report.cells) {
    out << to_string(c.arch) << ',' << c.defense << ',' << csv_number(c.ratio) << ',' << to_string(c.attacker) << ','
        << c.seed << ',' << csv_number(c.acc_mia) << ',' << csv_number(c.auc_mia) << ','
        << csv_quote(to_json(c.defense_hyper).dump()) << ',' << csv_number(c.utility_acc) << ','
        << csv_number(c.utility_auc);
    if (include_wall_time) out << ',' << csv_number(c.wall_time);
    out << ',' << csv_quote(c.error.value_or("")) << '\n';
  }
  return out.str();
}

}  // namespace pmia
