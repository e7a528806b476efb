#include <doctest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "pmia/audit.hpp"
#include "pmia/error.hpp"

using namespace pmia;
using namespace pmia::testing;

namespace {

AuditPlan quick_plan() {
  AuditPlan p;
  p.ratios = {0.10};
  p.cdm = small_cdm(CdmArch::NeuralCD, 0, 4);
  p.attack.neural.max_epochs = 15;
  p.attack.neural.batch_size = 32;
  p.attack.gbdt.n_trees = 10;
  return p;
}

}  // namespace

TEST_CASE("attack training set at frcsub shape") {
  const auto syn = generate_synthetic({.seed = 1});
  const auto plan = partition_students(syn.dataset, 0.05, 1);
  const auto m = CdmModel::create(small_cdm(CdmArch::NeuralCD), syn.dataset.q_matrix, syn.dataset.n_students);
  const auto set = build_attack_training_set(m, plan, syn.dataset, FeatureMode::Black);
  REQUIRE(set.labels.size() == 216);
  CHECK(std::count(set.labels.begin(), set.labels.end(), 1) == 108);
  CHECK(std::count(set.labels.begin(), set.labels.end(), 0) == 108);
  for (const auto& f : set.features) CHECK(f.values.size() == 2);
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    const int s = set.students[i];
    const auto& members = set.labels[i] == 1 ? plan.forget : plan.nonmember_train;
    CHECK(std::binary_search(members.begin(), members.end(), s));
    CHECK_FALSE(std::binary_search(plan.nonmember_eval.begin(), plan.nonmember_eval.end(), s));
  }
  const auto grey = build_attack_training_set(m, plan, syn.dataset, FeatureMode::Grey);
  CHECK(grey.features.front().values.size() == 10);
}

TEST_CASE("a constant attacker scores chance") {
  const auto syn = small_synthetic(2, 100, 10, 4);
  const auto plan = partition_students(syn.dataset, 0.1, 2);
  const auto m = CdmModel::create(small_cdm(CdmArch::NeuralCD), syn.dataset.q_matrix, syn.dataset.n_students);
  Attacker constant{AttackerKind::GbdtBlack, GbdtModel{}};
  const auto metrics = evaluate_defense(m, constant, plan, syn.dataset);
  CHECK(metrics.auc == 0.5);
  CHECK(metrics.accuracy == 0.5);  // p = 0.5 is not a member under the strict threshold
}

TEST_CASE("plan validation") {
  auto p = quick_plan();
  CHECK_NOTHROW(p.validate());
  p.ratios = {0.2};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = quick_plan();
  p.defenses = {"sisa"};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = quick_plan();
  p.grids[DefenseMethod::Ssd] = {{{"alpha", 2.0}}};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = quick_plan();
  p.seeds.clear();
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK(is_audit_defense("none"));
  CHECK(is_audit_defense("retrain"));
  CHECK_FALSE(is_audit_defense("Retrain"));
}

TEST_CASE("single-cell audit") {
  const auto syn = small_synthetic(3, 150, 10, 4);
  const auto report = run_audit(quick_plan(), syn.dataset);
  REQUIRE(report.cells.size() == 1);
  const auto& c = report.cells.front();
  CHECK_FALSE(c.error.has_value());
  REQUIRE(c.auc_mia.has_value());
  CHECK((*c.auc_mia >= 0.0 && *c.auc_mia <= 1.0));
  CHECK(c.defense == "none");
  CHECK(c.tuning.empty());
  CHECK(c.utility_acc.has_value());
  CHECK(report.config_hash.size() == 64);
  const auto csv = audit_to_csv(report, false);
  CHECK(csv.starts_with("arch,defense,ratio,attacker,seed,acc_mia,auc_mia,defense_hyper,utility_acc,utility_auc,error\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("audit grid is deterministic and records tuning") {
  const auto syn = small_synthetic(4, 150, 10, 4);
  auto p = quick_plan();
  p.defenses = {"none", "retrain", "amnesiac", "ssd"};
  p.attackers = {AttackerKind::GbdtBlack, AttackerKind::DcaGrey};
  p.grids[DefenseMethod::Amnesiac] = {{{"lr", 0.0}, {"steps", 1}}, {{"lr", 1e-3}, {"steps", 1}}};
  p.grids[DefenseMethod::Ssd] = {{{"alpha", 2.0}, {"lambda", 0.5}}};
  const auto a = run_audit(p, syn.dataset);
  const auto b = run_audit(p, syn.dataset);
  REQUIRE(a.cells.size() == 8);
  for (const auto& c : a.cells) {
    CAPTURE(c.defense);
    CHECK_FALSE(c.error.has_value());
  }
  CHECK(audit_to_json(a, false) == audit_to_json(b, false));
  CHECK(audit_to_csv(a, false) == audit_to_csv(b, false));
  CHECK(a.config_hash == b.config_hash);
  // Order: defenses outer, attackers inner.
  CHECK(a.cells[2].defense == "retrain");
  CHECK(a.cells[3].attacker == AttackerKind::DcaGrey);
  CHECK(a.cells[4].tuning.size() == 2);
  CHECK(a.cells[6].tuning.size() == 1);
  CHECK(a.cells[6].defense_hyper == HyperMap{{"alpha", 2.0}, {"lambda", 0.5}});
  const auto j = audit_to_json(a);
  CHECK(j.at("cells").at(0).contains("wall_time"));
  CHECK_FALSE(audit_to_json(a, false).at("cells").at(0).contains("wall_time"));

  auto p2 = p;
  p2.seeds = {1};
  CHECK(run_audit(p2, syn.dataset).config_hash != a.config_hash);
}

TEST_CASE("infeasible blocks become error rows") {
  const auto syn = small_synthetic(5, 20, 6, 3);
  auto p = quick_plan();
  p.ratios = {0.01};
  p.attackers = {AttackerKind::GbdtBlack, AttackerKind::DcaBlack};
  const auto report = run_audit(p, syn.dataset);
  REQUIRE(report.cells.size() == 2);
  for (const auto& c : report.cells) {
    REQUIRE(c.error.has_value());
    CHECK(c.error->find("too small") != std::string::npos);
    CHECK_FALSE(c.auc_mia.has_value());
  }
  const auto csv = audit_to_csv(report);
  CHECK(csv.find("too small") != std::string::npos);
}
