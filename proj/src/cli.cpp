#include "pmia/cli.hpp"

#include <chrono>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmia/attack.hpp"
#include "pmia/audit.hpp"
#include "pmia/config.hpp"
#include "pmia/error.hpp"
#include "pmia/io.hpp"
#include "pmia/llm_client.hpp"
#include "pmia/radar.hpp"
#include "pmia/unlearn.hpp"

namespace pmia {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flag values; unset optionals leave the config untouched.
struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  // data
  std::optional<std::string> records, qmatrix;
  std::optional<int> students, questions, kcs;
  std::optional<double> slip, guess, density;
  // training
  std::optional<std::string> arch;
  std::optional<double> ratio;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr;
  std::string scope = "both";
  std::optional<std::string> split;
  // unlearn / attack
  std::optional<std::string> model, target, method;
  std::vector<std::string> hyper;
  std::vector<std::string> kinds;
  // audit
  std::vector<std::string> archs, defenses;
  std::vector<double> ratios;
  std::vector<std::uint64_t> seeds;
  // radar
  bool roundtrip = false;
  std::optional<int> k, n, save_charts;
  std::optional<double> min_value;
  std::optional<std::string> image;
  std::string extractor = "canny";
  std::string prompt = "general";
  std::optional<std::string> llm_compare;
};

class Run {
 public:
  Run(std::string command, RunConfig cfg, std::ostream& out) : command_(std::move(command)), cfg_(std::move(cfg)), out_(out) {}

  const RunConfig& cfg() const { return cfg_; }
  fs::path path(const std::string& sub, const std::string& name) const { return cfg_.out / sub / name; }

  void input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}}); }
  void input_note(const std::string& what, const std::string& digest) {
    inputs_.push_back({{"path", what}, {"sha256", digest}});
  }

  void write(const fs::path& p, const std::string& contents) {
    atomic_write(p, contents);
    outputs_.push_back({{"path", fs::relative(p, cfg_.out).string()}, {"sha256", sha256_hex(contents)}});
  }
  void write_json(const fs::path& p, const json& j) { write(p, j.dump(2) + "\n"); }

  void finish(const json& summary) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    json manifest = {{"format", "manifest/1"},
                     {"command", command_},
                     {"version", PMIA_VERSION},
                     {"seed", cfg_.seed},
                     {"config", to_json(cfg_)},
                     {"inputs", inputs_},
                     {"outputs", outputs_},
                     {"created_at", ts.str()}};
    atomic_write(cfg_.out / "manifest.json", manifest.dump(2) + "\n");
    json line = {{"command", command_}, {"status", "ok"}, {"summary", summary}};
    out_ << line.dump() << "\n";
  }

 private:
  std::string command_;
  RunConfig cfg_;
  std::ostream& out_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

RunConfig effective_config(const Flags& f) {
  RunConfig c = f.config ? load_run_config(*f.config) : RunConfig{};
  if (f.out) c.out = *f.out;
  if (f.seed) c.seed = *f.seed;
  if (f.records) c.data.records = *f.records;
  if (f.qmatrix) c.data.qmatrix = *f.qmatrix;
  auto& s = c.data.synthetic;
  if (f.students) s.n_students = *f.students;
  if (f.questions) s.n_questions = *f.questions;
  if (f.kcs) s.n_kcs = *f.kcs;
  if (f.slip) s.slip = *f.slip;
  if (f.guess) s.guess = *f.guess;
  if (f.density) s.density = *f.density;
  if (f.arch) c.cdm.arch = parse_cdm_arch(*f.arch);
  if (f.ratio) c.ratio = *f.ratio;
  if (f.epochs) c.cdm.epochs = *f.epochs;
  if (f.batch_size) c.cdm.batch_size = *f.batch_size;
  if (f.lr) c.cdm.lr = *f.lr;
  if (f.method) {
    c.defense = parse_defense_method(*f.method);
    c.defense_hyper.clear();
  }
  for (const auto& kv : f.hyper) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--hyper expects key=value, got '" + kv + "'");
    try {
      std::size_t used = 0;
      const double v = std::stod(kv.substr(eq + 1), &used);
      if (used != kv.size() - eq - 1) throw std::invalid_argument("trailing");
      c.defense_hyper[kv.substr(0, eq)] = v;
    } catch (const std::logic_error&) {
      throw ConfigError("--hyper value is not a number in '" + kv + "'");
    }
  }
  if (!f.kinds.empty()) {
    c.attackers.clear();
    for (const auto& k : f.kinds) c.attackers.push_back(parse_attacker_kind(k));
  }
  if (!f.archs.empty()) {
    c.archs.clear();
    for (const auto& a : f.archs) c.archs.push_back(parse_cdm_arch(a));
  }
  if (!f.defenses.empty()) c.defenses = f.defenses;
  if (!f.ratios.empty()) c.ratios = f.ratios;
  if (!f.seeds.empty()) c.seeds = f.seeds;
  if (f.k) c.radar.k = *f.k;
  if (f.n) c.radar.n = *f.n;
  if (f.save_charts) c.radar.save_charts = *f.save_charts;
  if (f.min_value) c.radar.min_value = *f.min_value;
  c.validate();
  return c;
}

SyntheticData synthetic_for(const RunConfig& c) {
  SyntheticSpec spec = c.data.synthetic;
  spec.seed = c.seed;
  return generate_synthetic(spec);
}

Dataset load_data(Run& run) {
  const auto& c = run.cfg();
  if (c.data.from_files()) {
    run.input(*c.data.records);
    run.input(*c.data.qmatrix);
    return load_dataset(*c.data.records, *c.data.qmatrix);
  }
  auto syn = synthetic_for(c);
  std::ostringstream ss;
  write_records_csv(ss, syn.dataset.records);
  run.input_note("synthetic:records", sha256_hex(ss.str()));
  return std::move(syn.dataset);
}

json read_json(Run& run, const fs::path& p) {
  run.input(p);
  const auto j = json::parse(read_file(p), nullptr, false);
  if (j.is_discarded()) throw ParseError("'" + p.string() + "' is not valid JSON");
  return j;
}

SplitPlan load_split(Run& run, const fs::path& p, const Dataset& ds) {
  auto plan = splitplan_from_json(read_json(run, p));
  for (const auto& [s, parts] : plan.per_student)
    for (const auto* v : {&parts.train, &parts.valid, &parts.test})
      for (auto i : *v)
        if (i >= ds.records.size() || ds.records[i].student != s)
          throw ValidationError("split plan '" + p.string() + "' does not match the dataset");
  return plan;
}

CdmModel load_model(Run& run, const fs::path& p, const Dataset& ds) {
  auto m = cdm_from_json(read_json(run, p));
  if (m.n_students() != ds.n_students || m.n_questions() != ds.n_questions || m.n_kcs() != ds.n_kcs)
    throw ValidationError("checkpoint '" + p.string() + "' does not match the dataset shape");
  return m;
}

json eval_json(const CdmEvaluation& e) {
  return {{"acc", e.accuracy}, {"auc", e.auc ? json(*e.auc) : json(nullptr)}};
}

json training_log_json(const TrainingLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"valid_auc", e.valid_auc ? json(*e.valid_auc) : json(nullptr)},
                      {"valid_acc", e.valid_acc}});
  return {{"best_epoch", log.best_epoch},
          {"n_train_records", log.n_train_records},
          {"n_valid_records", log.n_valid_records},
          {"epochs", epochs}};
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_gen_data(Run& run) {
  const auto syn = synthetic_for(run.cfg());
  const auto& ds = syn.dataset;
  std::ostringstream rec, q, mastery;
  write_records_csv(rec, ds.records);
  write_qmatrix_csv(q, ds.q_matrix);
  mastery << "student_id";
  for (int k = 0; k < ds.n_kcs; ++k) mastery << ",kc_" << k;
  mastery << "\n";
  for (int s = 0; s < ds.n_students; ++s) {
    mastery << s;
    for (int k = 0; k < ds.n_kcs; ++k) mastery << ',' << (syn.masters(s, k) ? 1 : 0);
    mastery << "\n";
  }
  run.write(run.path("data", "records.csv"), rec.str());
  run.write(run.path("data", "qmatrix.csv"), q.str());
  run.write(run.path("data", "mastery.csv"), mastery.str());
  const double correct = static_cast<double>(std::count_if(ds.records.begin(), ds.records.end(),
                                                           [](const auto& r) { return r.response == 1; }));
  const json stats = {{"students", ds.n_students},
                      {"questions", ds.n_questions},
                      {"kcs", ds.n_kcs},
                      {"records", ds.records.size()},
                      {"correct_rate", correct / static_cast<double>(ds.records.size())},
                      {"q_density", ds.q_matrix.density()}};
  run.write_json(run.path("reports", "dataset.json"), stats);
  run.finish(stats);
}

void cmd_train(Run& run, const Flags& f) {
  if (f.scope != "orig" && f.scope != "retrain" && f.scope != "both")
    throw ConfigError("--scope must be orig, retrain or both");
  const auto ds = load_data(run);
  const auto& c = run.cfg();
  SplitPlan plan;
  if (f.split) {
    plan = load_split(run, *f.split, ds);
  } else {
    plan = partition_students(ds, c.ratio, c.seed);
    run.write_json(run.path("checkpoints", "split.json"), splitplan_to_json(plan));
  }
  CdmConfig cfg = c.cdm;
  cfg.seed = c.seed;
  const auto retain_test = plan.records(ds, plan.retain, SplitPart::Test);
  const auto forget_test = plan.records(ds, plan.forget, SplitPart::Test);
  json summary = {{"arch", to_string(cfg.arch)},
                  {"students", {{"retain", plan.retain.size()}, {"forget", plan.forget.size()},
                                {"nonmember_train", plan.nonmember_train.size()},
                                {"nonmember_eval", plan.nonmember_eval.size()}}}};
  auto train_one = [&](const std::string& name, std::span<const int> scope) {
    const auto result = train_cdm(ds, plan, scope, cfg);
    run.write_json(run.path("checkpoints", "cdm_" + name + ".json"), cdm_to_json(result.model, &result.log));
    json report = {{"log", training_log_json(result.log)},
                   {"retain_test", eval_json(evaluate_cdm(result.model, retain_test))},
                   {"forget_test", eval_json(evaluate_cdm(result.model, forget_test))}};
    run.write_json(run.path("reports", "train_" + name + ".json"), report);
    summary[name] = {{"best_epoch", result.log.best_epoch}, {"retain_test", report["retain_test"]}};
  };
  if (f.scope != "retrain") train_one("orig", merge_students(plan.retain, plan.forget));
  if (f.scope != "orig") train_one("retrain", plan.retain);
  run.finish(summary);
}

void cmd_unlearn(Run& run, const Flags& f) {
  const auto ds = load_data(run);
  const auto& c = run.cfg();
  const auto plan = load_split(run, f.split.value_or((c.out / "checkpoints" / "split.json").string()), ds);
  const auto model = load_model(run, f.model.value_or((c.out / "checkpoints" / "cdm_orig.json").string()), ds);
  ForgetRequest req{model, plan.records(ds, plan.forget, SplitPart::Train),
                    plan.records(ds, plan.retain, SplitPart::Train), c.defense, c.defense_hyper};
  req.seed = c.seed;
  req.dataset = &ds;
  req.plan = &plan;
  const auto start = std::chrono::steady_clock::now();
  const auto out = run_defense(req);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto name = std::string(to_string(c.defense));
  run.write_json(run.path("checkpoints", "cdm_" + name + ".json"), cdm_to_json(out));
  const auto retain_test = plan.records(ds, plan.retain, SplitPart::Test);
  const json report = {{"method", name},
                       {"hyper", to_json(c.defense_hyper)},
                       {"forget_train_loss", {{"before", model.mean_loss(req.forget_records)},
                                              {"after", out.mean_loss(req.forget_records)}}},
                       {"retain_test", {{"before", eval_json(evaluate_cdm(model, retain_test))},
                                        {"after", eval_json(evaluate_cdm(out, retain_test))}}},
                       {"seconds", seconds}};
  run.write_json(run.path("reports", "unlearn_" + name + ".json"), report);
  json summary = report;
  summary.erase("seconds");
  run.finish(summary);
}

void cmd_attack(Run& run, const Flags& f) {
  const auto ds = load_data(run);
  const auto& c = run.cfg();
  const auto plan = load_split(run, f.split.value_or((c.out / "checkpoints" / "split.json").string()), ds);
  const auto m_orig = load_model(run, f.model.value_or((c.out / "checkpoints" / "cdm_orig.json").string()), ds);
  const auto target = f.target ? load_model(run, *f.target, ds) : m_orig;
  json report = json::object();
  for (auto kind : c.attackers) {
    const auto set = build_attack_training_set(m_orig, plan, ds, feature_mode(kind));
    AttackTrainOptions opts = c.attack;
    opts.neural.seed = Rng(c.seed).derive("attacker:" + std::string(to_string(kind))).next_u64();
    const auto attacker = train_attacker(kind, set.features, set.labels, opts);
    const auto name = std::string(to_string(kind));
    run.write_json(run.path("checkpoints", "attacker_" + name + ".json"), attacker_to_json(attacker));
    const auto m = evaluate_defense(target, attacker, plan, ds);
    const auto positives = std::count(set.labels.begin(), set.labels.end(), 1);
    report[name] = {{"n_positive", positives},
                    {"n_negative", static_cast<long>(set.labels.size()) - positives},
                    {"acc_mia", m.accuracy},
                    {"auc_mia", m.auc}};
  }
  run.write_json(run.path("reports", "attack.json"), report);
  run.finish(report);
}

void cmd_audit(Run& run) {
  const auto ds = load_data(run);
  const auto report = run_audit(make_audit_plan(run.cfg()), ds);
  run.write_json(run.path("reports", "audit.json"), audit_to_json(report));
  run.write(run.path("reports", "audit.csv"), audit_to_csv(report));
  std::size_t failed = 0;
  for (const auto& cell : report.cells) failed += cell.error.has_value();
  run.finish({{"cells", report.cells.size()}, {"failed_cells", failed}, {"config_hash", report.config_hash}});
}

void cmd_radar(Run& run, const Flags& f) {
  const auto& c = run.cfg();
  const auto style = RadarStyle::for_size(c.radar.image_size);
  if (f.image) {
    run.input(*f.image);
    const auto img = read_png(*f.image);
    ExtractionResult r;
    if (f.extractor == "canny") {
      r = extract_kstate_canny(img, c.radar.k, style);
    } else if (f.extractor == "llm") {
      r = extract_kstate_llm(img, c.radar.k, parse_prompt_kind(f.prompt), LlmEndpoint::from_env());
    } else {
      throw ConfigError("--method must be canny or llm");
    }
    const json j = {{"method", to_string(r.method)},
                    {"estimates", r.estimates},
                    {"per_axis_confidence", r.per_axis_confidence},
                    {"flagged", r.flagged},
                    {"error", r.error ? json(*r.error) : json(nullptr)}};
    run.write_json(run.path("reports", "radar_extract.json"), j);
    run.finish(j);
    return;
  }
  if (!f.roundtrip) throw ConfigError("radar needs --roundtrip or --image");
  const auto result = radar_roundtrip(c.radar.n, c.radar.k, c.seed, c.radar.min_value, style);
  for (int i = 0; i < std::min(c.radar.save_charts, c.radar.n); ++i) {
    std::ostringstream name;
    name << "chart_" << std::setw(4) << std::setfill('0') << i << ".png";
    run.write(run.path("charts", name.str()), encode_png(render_radar(result.truths[static_cast<std::size_t>(i)], style)));
  }
  run.write(run.path("reports", "radar_roundtrip.csv"), roundtrip_to_csv(result));
  double max_err = 0.0;
  for (const auto& r : result.rows) max_err = std::max(max_err, r.abs_error);
  json summary = {{"k", c.radar.k}, {"n", c.radar.n}, {"rows", result.rows.size()}, {"canny_mae", result.mean_mae},
                  {"max_abs_error", max_err}};
  if (f.llm_compare) {
    const auto kind = parse_prompt_kind(*f.llm_compare);
    const auto endpoint = LlmEndpoint::from_env();
    std::ostringstream csv;
    csv << "chart,canny_mae,llm_mae\n";
    double llm_total = 0.0;
    for (std::size_t i = 0; i < result.truths.size(); ++i) {
      const auto& t = result.truths[i];
      const auto llm = extract_kstate_llm(render_radar(t, style), c.radar.k, kind, endpoint);
      const double llm_mae = mae(llm.estimates, t);
      llm_total += llm_mae;
      csv << i << ',' << mae(result.extractions[i].estimates, t) << ',' << llm_mae << '\n';
    }
    run.write(run.path("reports", "radar_compare.csv"), csv.str());
    summary["llm_mae"] = llm_total / static_cast<double>(result.truths.size());
    summary["prompt"] = to_string(kind);
  }
  run.write_json(run.path("reports", "radar_summary.json"), summary);
  run.finish(summary);
}

void print_error(std::ostream& err, std::string_view kind, std::string_view message) {
  err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Privacy audit toolkit for cognitive diagnosis models", "pmia"};
  app.set_version_flag("--version", PMIA_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "TOML run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--seed", f.seed, "Global seed");

  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--records", f.records, "Records CSV")->check(CLI::ExistingFile);
    sub->add_option("--qmatrix", f.qmatrix, "Q-matrix CSV")->check(CLI::ExistingFile);
    sub->add_option("--students", f.students);
    sub->add_option("--questions", f.questions);
    sub->add_option("--kcs", f.kcs);
    sub->add_option("--slip", f.slip);
    sub->add_option("--guess", f.guess);
    sub->add_option("--density", f.density);
  };
  auto add_cdm = [&](CLI::App* sub) {
    sub->add_option("--arch", f.arch, "neuralcd, kscd or kancd");
    sub->add_option("--ratio", f.ratio, "Forgetting ratio");
    sub->add_option("--epochs", f.epochs);
    sub->add_option("--batch-size", f.batch_size);
    sub->add_option("--lr", f.lr);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_data(gen);

  auto* train = app.add_subcommand("train", "Train M_orig and/or M_retrain");
  add_data(train);
  add_cdm(train);
  train->add_option("--scope", f.scope, "orig, retrain or both");
  train->add_option("--split", f.split, "Reuse a split plan")->check(CLI::ExistingFile);

  auto* unlearn = app.add_subcommand("unlearn", "Apply one unlearning defense to a checkpoint");
  add_data(unlearn);
  unlearn->add_option("--model", f.model, "CDM checkpoint (default <out>/checkpoints/cdm_orig.json)");
  unlearn->add_option("--split", f.split, "Split plan (default <out>/checkpoints/split.json)");
  unlearn->add_option("--method", f.method, "amnesiac, lcodec, ssd or retrain");
  unlearn->add_option("--hyper", f.hyper, "Hyperparameter key=value (repeatable)");

  auto* attack = app.add_subcommand("attack", "Train attackers on M_orig and evaluate a target model");
  add_data(attack);
  attack->add_option("--model", f.model, "M_orig checkpoint (default <out>/checkpoints/cdm_orig.json)");
  attack->add_option("--target", f.target, "Model to evaluate (default: M_orig)");
  attack->add_option("--split", f.split, "Split plan (default <out>/checkpoints/split.json)");
  attack->add_option("--kind", f.kinds, "Attacker kind (repeatable)");

  auto* audit = app.add_subcommand("audit", "Run the full audit sweep");
  add_data(audit);
  audit->add_option("--arch", f.archs, "Architecture (repeatable)");
  audit->add_option("--defense", f.defenses, "Defense (repeatable)");
  audit->add_option("--ratio", f.ratios, "Forgetting ratio (repeatable)");
  audit->add_option("--kind", f.kinds, "Attacker kind (repeatable)");
  audit->add_option("--seeds", f.seeds, "Seeds (repeatable)");
  audit->add_option("--epochs", f.epochs);

  auto* radar = app.add_subcommand("radar", "Render and extract knowledge-state radar charts");
  radar->add_flag("--roundtrip", f.roundtrip, "Render random vectors and extract them again");
  radar->add_option("--k", f.k, "Number of axes");
  radar->add_option("--n", f.n, "Number of charts");
  radar->add_option("--min-value", f.min_value);
  radar->add_option("--save-charts", f.save_charts, "Write the first N charts as PNG");
  radar->add_option("--image", f.image, "Extract from one PNG instead")->check(CLI::ExistingFile);
  radar->add_option("--method", f.extractor, "canny or llm (with --image)");
  radar->add_option("--prompt", f.prompt, "general or in_context (llm only)");
  radar->add_option("--llm-compare", f.llm_compare, "Also query the LLM endpoint with this prompt kind");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << PMIA_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return 2;
  }

  try {
    const auto cfg = effective_config(f);
    if (gen->parsed()) {
      Run run("gen-data", cfg, out);
      cmd_gen_data(run);
    } else if (train->parsed()) {
      Run run("train", cfg, out);
      cmd_train(run, f);
    } else if (unlearn->parsed()) {
      Run run("unlearn", cfg, out);
      cmd_unlearn(run, f);
    } else if (attack->parsed()) {
      Run run("attack", cfg, out);
      cmd_attack(run, f);
    } else if (audit->parsed()) {
      Run run("audit", cfg, out);
      cmd_audit(run);
    } else if (radar->parsed()) {
      Run run("radar", cfg, out);
      cmd_radar(run, f);
    }
    return 0;
  } catch (const Error& e) {
    print_error(err, to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
  }
  return 1;
}

}  // namespace pmia
