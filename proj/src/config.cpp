#include "pmia/config.hpp"

#include <set>
#include <sstream>

#include <toml.hpp>

#include "pmia/error.hpp"
#include "pmia/io.hpp"

namespace pmia {

namespace {

// A TOML table whose keys must all be consumed; finish() rejects leftovers.
class Section {
 public:
  Section(const toml::table& table, std::string path) : table_(table), path_(std::move(path)) {}

  std::string key_path(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  const toml::node* node(std::string_view key) {
    used_.insert(std::string(key));
    return table_.get(key);
  }

  [[noreturn]] void type_error(std::string_view key, std::string_view expected) const {
    throw ConfigError("config key '" + key_path(key) + "': expected " + std::string(expected));
  }

  void read(std::string_view key, double& out) {
    if (auto* n = node(key)) {
      if (auto v = n->value<double>(); v && (n->is_integer() || n->is_floating_point()))
        out = *v;
      else
        type_error(key, "a number");
    }
  }

  void read(std::string_view key, int& out) {
    if (auto* n = node(key)) {
      auto v = n->as_integer();
      if (!v || v->get() < std::numeric_limits<int>::min() || v->get() > std::numeric_limits<int>::max())
        type_error(key, "an integer");
      out = static_cast<int>(v->get());
    }
  }

  void read(std::string_view key, std::uint64_t& out) {
    if (auto* n = node(key)) {
      auto v = n->as_integer();
      if (!v || v->get() < 0) type_error(key, "a nonnegative integer");
      out = static_cast<std::uint64_t>(v->get());
    }
  }

  void read(std::string_view key, std::string& out) {
    if (auto* n = node(key)) {
      auto v = n->value<std::string>();
      if (!v || !n->is_string()) type_error(key, "a string");
      out = *v;
    }
  }

  std::optional<std::string> string(std::string_view key) {
    if (!table_.contains(key)) {
      used_.insert(std::string(key));
      return std::nullopt;
    }
    std::string s;
    read(key, s);
    return s;
  }

  template <class T>
  std::optional<std::vector<T>> list(std::string_view key) {
    auto* n = node(key);
    if (!n) return std::nullopt;
    auto* arr = n->as_array();
    if (!arr) type_error(key, "an array");
    std::vector<T> out;
    for (const auto& el : *arr) {
      if constexpr (std::is_same_v<T, std::string>) {
        if (!el.is_string()) type_error(key, "an array of strings");
        out.push_back(*el.value<std::string>());
      } else if constexpr (std::is_same_v<T, double>) {
        if (!el.is_number()) type_error(key, "an array of numbers");
        out.push_back(*el.value<double>());
      } else {
        if (!el.is_integer() || el.as_integer()->get() < 0) type_error(key, "an array of nonnegative integers");
        out.push_back(static_cast<T>(el.as_integer()->get()));
      }
    }
    return out;
  }

  std::optional<Section> table(std::string_view key) {
    auto* n = node(key);
    if (!n) return std::nullopt;
    auto* t = n->as_table();
    if (!t) type_error(key, "a table");
    return Section(*t, key_path(key));
  }

  /// Keys of this table not yet consumed.
  std::vector<std::string> remaining() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : table_)
      if (!used_.count(std::string(k.str()))) out.emplace_back(k.str());
    return out;
  }

  void finish() const {
    const auto left = remaining();
    if (!left.empty()) throw ConfigError("unknown config key '" + key_path(left.front()) + "'");
  }

  const toml::table& raw() const { return table_; }

 private:
  const toml::table& table_;
  std::string path_;
  std::set<std::string> used_;
};

void read_data(Section s, DataConfig& d) {
  if (auto r = s.string("records")) d.records = *r;
  if (auto q = s.string("qmatrix")) d.qmatrix = *q;
  if (auto syn = s.table("synthetic")) {
    syn->read("students", d.synthetic.n_students);
    syn->read("questions", d.synthetic.n_questions);
    syn->read("kcs", d.synthetic.n_kcs);
    syn->read("slip", d.synthetic.slip);
    syn->read("guess", d.synthetic.guess);
    syn->read("density", d.synthetic.density);
    syn->finish();
  }
  s.finish();
}

void read_cdm(Section s, CdmConfig& c) {
  if (auto a = s.string("arch")) c.arch = parse_cdm_arch(*a);
  s.read("latent_dim", c.latent_dim);
  s.read("hidden1", c.hidden1);
  s.read("hidden2", c.hidden2);
  s.read("epochs", c.epochs);
  s.read("batch_size", c.batch_size);
  s.read("lr", c.lr);
  s.read("patience", c.patience);
  s.finish();
}

void read_attack(Section s, RunConfig& cfg) {
  if (auto kinds = s.list<std::string>("kinds")) {
    cfg.attackers.clear();
    for (const auto& k : *kinds) cfg.attackers.push_back(parse_attacker_kind(k));
  }
  auto& n = cfg.attack.neural;
  s.read("lr", n.lr);
  s.read("batch_size", n.batch_size);
  s.read("max_epochs", n.max_epochs);
  s.read("patience", n.patience);
  s.read("holdout_fraction", n.holdout_fraction);
  if (auto g = s.table("gbdt")) {
    auto& o = cfg.attack.gbdt;
    g->read("n_trees", o.n_trees);
    g->read("max_depth", o.max_depth);
    g->read("learning_rate", o.learning_rate);
    g->read("l2", o.l2);
    g->read("min_child_weight", o.min_child_weight);
    g->finish();
  }
  s.finish();
}

void read_audit(Section s, RunConfig& cfg) {
  if (auto archs = s.list<std::string>("archs")) {
    cfg.archs.clear();
    for (const auto& a : *archs) cfg.archs.push_back(parse_cdm_arch(a));
  }
  if (auto d = s.list<std::string>("defenses")) cfg.defenses = *d;
  if (auto r = s.list<double>("ratios")) cfg.ratios = *r;
  if (auto sd = s.list<std::uint64_t>("seeds")) cfg.seeds = *sd;
  s.finish();
}

HyperMap read_hyper(Section s) {
  HyperMap h;
  for (const auto& [k, v] : s.raw()) {
    double x = 0.0;
    s.read(k.str(), x);
    h[std::string(k.str())] = x;
  }
  s.finish();
  return h;
}

void read_grids(Section s, RunConfig& cfg) {
  for (const auto& [k, v] : s.raw()) {
    const auto method = parse_defense_method(k.str());
    auto t = s.table(k.str());
    std::map<std::string, std::vector<double>> axes;
    for (const auto& [hk, hv] : t->raw()) axes[std::string(hk.str())] = *t->list<double>(hk.str());
    t->finish();
    cfg.grids[method] = expand_grid(axes);
  }
  s.finish();
}

void read_defense(Section s, RunConfig& cfg) {
  if (auto m = s.string("method")) {
    cfg.defense = parse_defense_method(*m);
    cfg.defense_hyper.clear();
  }
  if (auto h = s.table("hyper")) cfg.defense_hyper = read_hyper(*h);
  s.finish();
}

void read_radar(Section s, RadarConfig& r) {
  s.read("k", r.k);
  s.read("n", r.n);
  s.read("min_value", r.min_value);
  s.read("image_size", r.image_size);
  s.read("save_charts", r.save_charts);
  s.finish();
}

}  // namespace

std::vector<HyperMap> expand_grid(const std::map<std::string, std::vector<double>>& axes) {
  std::vector<HyperMap> grid{HyperMap{}};
  for (const auto& [key, values] : axes) {
    if (values.empty()) throw ConfigError("grid axis '" + key + "' is empty");
    std::vector<HyperMap> next;
    for (const auto& partial : grid)
      for (double v : values) {
        auto h = partial;
        h[key] = v;
        next.push_back(std::move(h));
      }
    grid = std::move(next);
  }
  return grid;
}

void RunConfig::validate() const {
  if (data.records.has_value() != data.qmatrix.has_value())
    throw ConfigError("data.records and data.qmatrix must be given together");
  if (!data.from_files()) data.synthetic.validate();
  if (!(ratio > 0.0 && ratio < 1.0 / 3.0)) throw ConfigError("split ratio must lie in (0, 1/3)");
  cdm.validate();
  if (attackers.empty()) throw ConfigError("attack.kinds must be nonempty");
  const auto& n = attack.neural;
  if (!(n.lr > 0.0) || n.batch_size < 1 || n.max_epochs < 0 || n.patience < 1 ||
      !(n.holdout_fraction >= 0.0 && n.holdout_fraction < 1.0))
    throw ConfigError("attack: lr > 0, batch_size >= 1, max_epochs >= 0, patience >= 1, holdout in [0, 1)");
  const auto& g = attack.gbdt;
  if (g.n_trees < 0 || g.max_depth < 1 || !(g.learning_rate > 0.0) || g.l2 < 0.0 || g.min_child_weight < 0.0)
    throw ConfigError("attack.gbdt: invalid settings");
  make_audit_plan(*this).validate();
  if (defense != DefenseMethod::Retrain) {
    ForgetRequest probe{CdmModel{}, {}, {}, defense, defense_hyper};
    probe.validate();
  } else if (!defense_hyper.empty()) {
    throw ConfigError("retrain takes no hyperparameters");
  }
  if (radar.k < 3 || radar.n < 1 || !(radar.min_value >= 0.0 && radar.min_value <= 1.0) || radar.image_size < 16 ||
      radar.save_charts < 0)
    throw ConfigError("radar: k >= 3, n >= 1, min_value in [0, 1], image_size >= 16, save_charts >= 0");
}

RunConfig parse_run_config(std::string_view toml_text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(ss.str());
  }
  RunConfig cfg;
  Section s(root, "");
  s.read("seed", cfg.seed);
  if (auto out = s.string("out")) cfg.out = *out;
  if (auto d = s.table("data")) read_data(*d, cfg.data);
  if (auto sp = s.table("split")) {
    sp->read("ratio", cfg.ratio);
    sp->finish();
  }
  if (auto c = s.table("cdm")) read_cdm(*c, cfg.cdm);
  if (auto a = s.table("attack")) read_attack(*a, cfg);
  if (auto a = s.table("audit")) read_audit(*a, cfg);
  if (auto g = s.table("grids")) read_grids(*g, cfg);
  if (auto d = s.table("defense")) read_defense(*d, cfg);
  if (auto r = s.table("radar")) read_radar(*r, cfg.radar);
  s.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.string());
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json data;
  if (c.data.from_files()) {
    data = {{"records", c.data.records->string()}, {"qmatrix", c.data.qmatrix->string()}};
  } else {
    const auto& s = c.data.synthetic;
    data = {{"synthetic",
             {{"students", s.n_students},
              {"questions", s.n_questions},
              {"kcs", s.n_kcs},
              {"slip", s.slip},
              {"guess", s.guess},
              {"density", s.density}}}};
  }
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : c.attackers) kinds.push_back(to_string(k));
  const auto plan = to_json(make_audit_plan(c));
  return {{"seed", c.seed},
          {"out", c.out.string()},
          {"data", data},
          {"split", {{"ratio", c.ratio}}},
          {"cdm", to_json(c.cdm)},
          {"attack", {{"kinds", kinds}, {"options", plan.at("attack")}}},
          {"audit",
           {{"archs", plan.at("archs")},
            {"defenses", c.defenses},
            {"ratios", c.ratios},
            {"seeds", c.seeds}}},
          {"grids", plan.at("grids")},
          {"defense", {{"method", to_string(c.defense)}, {"hyper", to_json(c.defense_hyper)}}},
          {"radar",
           {{"k", c.radar.k},
            {"n", c.radar.n},
            {"min_value", c.radar.min_value},
            {"image_size", c.radar.image_size},
            {"save_charts", c.radar.save_charts}}}};
}

AuditPlan make_audit_plan(const RunConfig& c) {
  AuditPlan p;
  p.archs = c.archs;
  p.defenses = c.defenses;
  p.ratios = c.ratios;
  p.attackers = c.attackers;
  p.seeds = c.seeds;
  p.grids = c.grids;
  p.cdm = c.cdm;
  p.attack = c.attack;
  return p;
}

}  // namespace pmia
