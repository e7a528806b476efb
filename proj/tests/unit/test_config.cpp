#include <doctest.h>

#include <filesystem>

#include "pmia/config.hpp"
#include "pmia/error.hpp"

using namespace pmia;

namespace {

std::string config_error(std::string_view text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path config_dir() { return PMIA_CONFIG_DIR; }

}  // namespace

TEST_CASE("defaults") {
  const auto c = parse_run_config("");
  CHECK(c.seed == 0);
  CHECK(c.cdm.epochs == 50);
  CHECK(c.cdm.batch_size == 32);
  CHECK(c.data.synthetic.n_students == 536);
  CHECK(c.attackers == std::vector<AttackerKind>{AttackerKind::DcaGrey});
  CHECK(c.defense == DefenseMethod::Amnesiac);
}

TEST_CASE("full document") {
  const auto c = parse_run_config(R"(
seed = 3
out = "o"
[data.synthetic]
students = 100
kcs = 4
[split]
ratio = 0.1
[cdm]
arch = "kancd"
latent_dim = 8
lr = 0.01
[attack]
kinds = ["gbdt-black", "mia-grey"]
max_epochs = 7
[attack.gbdt]
n_trees = 5
[audit]
archs = ["kscd", "neuralcd"]
defenses = ["none", "ssd"]
ratios = [0.01, 0.1]
seeds = [1, 2]
[grids.ssd]
alpha = [1.5, 2.0]
lambda = [0.5]
[defense]
method = "ssd"
hyper = { alpha = 2.0, lambda = 0.3 }
[radar]
k = 5
n = 10
)");
  CHECK(c.seed == 3);
  CHECK(c.out == "o");
  CHECK(c.data.synthetic.n_students == 100);
  CHECK(c.data.synthetic.n_kcs == 4);
  CHECK(c.ratio == 0.1);
  CHECK(c.cdm.arch == CdmArch::Kancd);
  CHECK(c.cdm.latent_dim == 8);
  CHECK(c.attackers.size() == 2);
  CHECK(c.attack.neural.max_epochs == 7);
  CHECK(c.attack.gbdt.n_trees == 5);
  CHECK(c.archs == std::vector<CdmArch>{CdmArch::Kscd, CdmArch::NeuralCD});
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
  REQUIRE(c.grids.count(DefenseMethod::Ssd));
  CHECK(c.grids.at(DefenseMethod::Ssd).size() == 2);
  CHECK(c.defense == DefenseMethod::Ssd);
  CHECK(c.defense_hyper == HyperMap{{"alpha", 2.0}, {"lambda", 0.3}});
  CHECK(c.radar.k == 5);
  const auto plan = make_audit_plan(c);
  CHECK(plan.ratios == std::vector<double>{0.01, 0.1});
  CHECK(to_json(c).at("cdm").at("arch") == "kancd");
}

TEST_CASE("unknown keys and type errors name the key path") {
  CHECK(config_error("sed = 1").find("'sed'") != std::string::npos);
  CHECK(config_error("[cdm]\nepoch = 3").find("'cdm.epoch'") != std::string::npos);
  CHECK(config_error("[data.synthetic]\nstudent = 3").find("'data.synthetic.student'") != std::string::npos);
  CHECK(config_error("[cdm]\nepochs = \"ten\"").find("'cdm.epochs'") != std::string::npos);
  CHECK(config_error("[cdm]\nlr = true").find("'cdm.lr'") != std::string::npos);
  CHECK(config_error("[audit]\nratios = [\"a\"]").find("'audit.ratios'") != std::string::npos);
  CHECK(config_error("seed = -1").find("'seed'") != std::string::npos);
  CHECK_FALSE(config_error("[cdm\n").empty());
  CHECK_FALSE(config_error("[audit]\nratios = [0.2]").empty());
  CHECK_FALSE(config_error("[cdm]\narch = \"rcd\"").empty());
  CHECK_FALSE(config_error("[defense]\nmethod = \"ssd\"\nhyper = { alpha = 2.0 }").empty());
  CHECK_FALSE(config_error("[defense]\nmethod = \"amnesiac\"\nhyper = { lr = 0.1, steps = 1, beta = 1 }").empty());
  CHECK_FALSE(config_error("[grids.ssd]\nalpha = []\nlambda = [0.5]").empty());
  CHECK_FALSE(config_error("[data]\nrecords = \"r.csv\"").empty());
  CHECK_FALSE(config_error("[split]\nratio = 0.5").empty());
}

TEST_CASE("grid expansion order") {
  const auto g = expand_grid({{"b", {1, 2}}, {"a", {10, 20, 30}}});
  REQUIRE(g.size() == 6);
  CHECK(g[0] == HyperMap{{"a", 10}, {"b", 1}});
  CHECK(g[1] == HyperMap{{"a", 10}, {"b", 2}});
  CHECK(g[2] == HyperMap{{"a", 20}, {"b", 1}});
  CHECK(g[5] == HyperMap{{"a", 30}, {"b", 2}});
  CHECK(expand_grid({}).size() == 1);
  CHECK_THROWS_AS(expand_grid({{"a", {}}}), ConfigError);
}

TEST_CASE("shipped configs parse") {
  for (const auto& name : {"audit_frcsub.toml", "audit_defenses.toml"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_run_config(config_dir() / name));
  }
  const auto c = load_run_config(config_dir() / "audit_defenses.toml");
  CHECK(c.defenses.size() == 5);
  CHECK(c.archs.size() == 3);
}
