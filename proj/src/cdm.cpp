#include "pmia/cdm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pmia/error.hpp"
#include "pmia/kernels.hpp"
#include "pmia/metrics.hpp"

namespace pmia {

std::string_view to_string(CdmArch arch) {
  switch (arch) {
    case CdmArch::NeuralCD: return "neuralcd";
    case CdmArch::Kscd: return "kscd";
    case CdmArch::Kancd: return "kancd";
  }
  return "?";
}

CdmArch parse_cdm_arch(std::string_view name) {
  if (name == "neuralcd") return CdmArch::NeuralCD;
  if (name == "kscd") return CdmArch::Kscd;
  if (name == "kancd") return CdmArch::Kancd;
  throw ConfigError("unknown CDM architecture '" + std::string(name) + "'");
}

void CdmConfig::validate() const {
  if (hidden1 < 1 || hidden2 < 1) throw ConfigError("cdm: hidden widths must be >= 1");
  if (arch != CdmArch::NeuralCD && latent_dim < 1) throw ConfigError("cdm: latent_dim must be >= 1");
  if (epochs < 0) throw ConfigError("cdm: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("cdm: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("cdm: lr must be finite and >= 0");
  if (patience < 1) throw ConfigError("cdm: patience must be >= 1");
}

nlohmann::json to_json(const CdmConfig& c) {
  return {{"arch", to_string(c.arch)}, {"latent_dim", c.latent_dim}, {"hidden", {c.hidden1, c.hidden2}},
          {"epochs", c.epochs},        {"batch_size", c.batch_size}, {"lr", c.lr},
          {"patience", c.patience},    {"seed", c.seed}};
}

CdmConfig cdm_config_from_json(const nlohmann::json& j) {
  CdmConfig c;
  c.arch = parse_cdm_arch(j.at("arch").get<std::string>());
  c.latent_dim = j.at("latent_dim").get<int>();
  c.hidden1 = j.at("hidden").at(0).get<int>();
  c.hidden2 = j.at("hidden").at(1).get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace {
constexpr std::size_t kNone = static_cast<std::size_t>(-1);
}

struct CdmModel::Trace {
  std::vector<double> ks, sig_diff, x, h1, h2;
  double sig_disc = 0.0;
  double p = 0.0;
};

CdmModel CdmModel::create(const CdmConfig& config, const QMatrix& q_matrix, int n_students) {
  config.validate();
  q_matrix.validate();
  if (n_students < 1) throw ConfigError("cdm: n_students must be >= 1");
  CdmModel m;
  m.config_ = config;
  m.q_ = q_matrix;
  m.n_students_ = n_students;
  const std::size_t S = n_students, J = q_matrix.n_questions(), K = q_matrix.n_kcs();
  const std::size_t D = config.latent_dim, H1 = config.hidden1, H2 = config.hidden2;
  auto& p = m.params_;
  auto& ix = m.ix_;
  ix.kc = ix.fusion = ix.fusion_bias = kNone;
  if (config.arch == CdmArch::NeuralCD) {
    ix.student = p.add_block("student", S, K);
  } else {
    ix.student = p.add_block("student", S, D);
    ix.kc = p.add_block("kc", K, D);
    if (config.arch == CdmArch::Kscd) {
      ix.fusion = p.add_block("fusion", 1, D);
      ix.fusion_bias = p.add_block("fusion_bias", 1, 1);
    }
  }
  ix.diff = p.add_block("exer_diff", J, K);
  ix.disc = p.add_block("exer_disc", J, 1);
  ix.w1 = p.add_block("mlp_w1", H1, K);
  ix.b1 = p.add_block("mlp_b1", H1, 1);
  ix.w2 = p.add_block("mlp_w2", H2, H1);
  ix.b2 = p.add_block("mlp_b2", H2, 1);
  ix.w3 = p.add_block("mlp_w3", 1, H2);
  ix.b3 = p.add_block("mlp_b3", 1, 1);

  const Rng init(config.seed, fnv1a64("cdm-init"));
  for (std::size_t b = 0; b < p.blocks().size(); ++b) {
    const auto& blk = p.block(b);
    if (blk.name.starts_with("mlp_b") || blk.name == "fusion_bias") continue;  // zero bias
    if (blk.name == "fusion") {
      init_constant(p, b, 1.0);  // starts as a plain dot product
      continue;
    }
    init_xavier_normal(p, b, init, blk.cols, blk.rows);
  }
  m.clamp_monotone();
  return m;
}

void CdmModel::check_ids(int student, int question) const {
  if (student < 0 || student >= n_students_)
    throw ValidationError("student id " + std::to_string(student) + " out of range");
  if (question < 0 || question >= n_questions())
    throw ValidationError("question id " + std::to_string(question) + " out of range");
}

void CdmModel::compute_kstate(int s, std::span<double> out) const {
  const std::size_t K = q_.n_kcs();
  const auto student = params_.values(ix_.student);
  if (config_.arch == CdmArch::NeuralCD) {
    for (std::size_t k = 0; k < K; ++k) out[k] = sigmoid(student(s, k));
    return;
  }
  const auto kc = params_.values(ix_.kc);
  const std::size_t D = kc.cols;
  const auto e = student.row(s);
  if (config_.arch == CdmArch::Kancd) {
    for (std::size_t k = 0; k < K; ++k) {
      double z = 0.0;
      for (std::size_t d = 0; d < D; ++d) z += e[d] * kc(k, d);
      out[k] = sigmoid(z);
    }
  } else {
    const auto f = params_.values(ix_.fusion);
    const double bias = params_.values(ix_.fusion_bias)(0, 0);
    for (std::size_t k = 0; k < K; ++k) {
      double z = bias;
      for (std::size_t d = 0; d < D; ++d) z += f(0, d) * e[d] * kc(k, d);
      out[k] = sigmoid(z);
    }
  }
}

std::vector<double> CdmModel::kstate(int student) const {
  if (student < 0 || student >= n_students_)
    throw ValidationError("student id " + std::to_string(student) + " out of range");
  std::vector<double> ks(q_.n_kcs());
  compute_kstate(student, ks);
  return ks;
}

namespace {

// Shared interaction MLP forward pass; fills trace buffers.
template <class TraceT, class Params>
void interaction_forward(const Params& p, std::size_t w1, std::size_t b1, std::size_t w2, std::size_t b2,
                         std::size_t w3, std::size_t b3, TraceT& t) {
  const auto W1 = p.values(w1), B1 = p.values(b1), W2 = p.values(w2), B2 = p.values(b2), W3 = p.values(w3);
  const double B3 = p.values(b3)(0, 0);
  t.h1.resize(W1.rows);
  t.h2.resize(W2.rows);
  for (std::size_t i = 0; i < W1.rows; ++i) {
    double z = B1(i, 0);
    for (std::size_t k = 0; k < W1.cols; ++k) z += W1(i, k) * t.x[k];
    t.h1[i] = sigmoid(z);
  }
  for (std::size_t i = 0; i < W2.rows; ++i) {
    double z = B2(i, 0);
    for (std::size_t k = 0; k < W2.cols; ++k) z += W2(i, k) * t.h1[k];
    t.h2[i] = sigmoid(z);
  }
  double z = B3;
  for (std::size_t k = 0; k < W3.cols; ++k) z += W3(0, k) * t.h2[k];
  t.p = sigmoid(z);
}

}  // namespace

void CdmModel::forward(int s, int j, Trace& t) const {
  const std::size_t K = q_.n_kcs();
  t.ks.resize(K);
  t.sig_diff.resize(K);
  t.x.resize(K);
  compute_kstate(s, t.ks);
  const auto diff = params_.values(ix_.diff);
  t.sig_disc = sigmoid(params_.values(ix_.disc)(j, 0));
  const auto qrow = q_.row(j);
  for (std::size_t k = 0; k < K; ++k) {
    t.sig_diff[k] = sigmoid(diff(j, k));
    t.x[k] = qrow[k] ? (t.ks[k] - t.sig_diff[k]) * t.sig_disc : 0.0;
  }
  interaction_forward(params_, ix_.w1, ix_.b1, ix_.w2, ix_.b2, ix_.w3, ix_.b3, t);
}

double CdmModel::predict_proba(int student, int question) const {
  check_ids(student, question);
  Trace t;
  forward(student, question, t);
  return t.p;
}

double CdmModel::predict_from_kstate(std::span<const double> kstate, int question) const {
  if (question < 0 || question >= n_questions()) throw ValidationError("question id out of range");
  if (kstate.size() != q_.n_kcs()) throw ValidationError("kstate length must equal K");
  Trace t;
  const std::size_t K = q_.n_kcs();
  t.x.resize(K);
  const auto diff = params_.values(ix_.diff);
  const double sd = sigmoid(params_.values(ix_.disc)(question, 0));
  const auto qrow = q_.row(question);
  for (std::size_t k = 0; k < K; ++k) t.x[k] = qrow[k] ? (kstate[k] - sigmoid(diff(question, k))) * sd : 0.0;
  interaction_forward(params_, ix_.w1, ix_.b1, ix_.w2, ix_.b2, ix_.w3, ix_.b3, t);
  return t.p;
}

double CdmModel::record_loss(const InteractionRecord& r) const {
  return bce_loss(predict_proba(r.student, r.question), r.response).value;
}

double CdmModel::mean_loss(std::span<const InteractionRecord> records) const {
  if (records.empty()) throw ValidationError("mean_loss: empty record set");
  double total = 0.0;
  for (const auto& r : records) total += record_loss(r);
  return total / static_cast<double>(records.size());
}

double CdmModel::accumulate_gradient(const InteractionRecord& r, double scale, std::span<double> grad) const {
  check_ids(r.student, r.question);
  Trace t;
  forward(r.student, r.question, t);
  const double loss = bce_loss(t.p, r.response).value;

  const auto off = [&](std::size_t block) { return params_.block(block).offset; };
  const auto W1 = params_.values(ix_.w1), W2 = params_.values(ix_.w2), W3 = params_.values(ix_.w3);
  const std::size_t K = W1.cols, H1 = W1.rows, H2 = W2.rows;

  const double dz3 = scale * bce_logit_grad(t.p, r.response);
  grad[off(ix_.b3)] += dz3;
  std::vector<double> dz2(H2), dz1(H1, 0.0), dx(K, 0.0);
  for (std::size_t i = 0; i < H2; ++i) {
    grad[off(ix_.w3) + i] += dz3 * t.h2[i];
    dz2[i] = dz3 * W3(0, i) * t.h2[i] * (1.0 - t.h2[i]);
  }
  for (std::size_t i = 0; i < H2; ++i) {
    grad[off(ix_.b2) + i] += dz2[i];
    const std::size_t row = off(ix_.w2) + i * H1;
    for (std::size_t k = 0; k < H1; ++k) {
      grad[row + k] += dz2[i] * t.h1[k];
      dz1[k] += dz2[i] * W2(i, k);
    }
  }
  for (std::size_t i = 0; i < H1; ++i) {
    dz1[i] *= t.h1[i] * (1.0 - t.h1[i]);
    grad[off(ix_.b1) + i] += dz1[i];
    const std::size_t row = off(ix_.w1) + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      grad[row + k] += dz1[i] * t.x[k];
      dx[k] += dz1[i] * W1(i, k);
    }
  }

  // Exercise parameters and d loss / d kstate.
  const auto qrow = q_.row(r.question);
  std::vector<double> dks(K, 0.0);
  double ddisc = 0.0;
  const std::size_t diff_row = off(ix_.diff) + static_cast<std::size_t>(r.question) * K;
  for (std::size_t k = 0; k < K; ++k) {
    if (!qrow[k]) continue;
    dks[k] = dx[k] * t.sig_disc;
    grad[diff_row + k] += -dx[k] * t.sig_disc * t.sig_diff[k] * (1.0 - t.sig_diff[k]);
    ddisc += dx[k] * (t.ks[k] - t.sig_diff[k]);
  }
  grad[off(ix_.disc) + static_cast<std::size_t>(r.question)] += ddisc * t.sig_disc * (1.0 - t.sig_disc);

  // Student-side parameters.
  const auto student = params_.values(ix_.student);
  const std::size_t srow = off(ix_.student) + static_cast<std::size_t>(r.student) * student.cols;
  if (config_.arch == CdmArch::NeuralCD) {
    for (std::size_t k = 0; k < K; ++k) grad[srow + k] += dks[k] * t.ks[k] * (1.0 - t.ks[k]);
  } else {
    const auto kc = params_.values(ix_.kc);
    const std::size_t D = kc.cols;
    const auto e = student.row(r.student);
    const bool kscd = config_.arch == CdmArch::Kscd;
    const std::size_t kc_off = off(ix_.kc);
    for (std::size_t k = 0; k < K; ++k) {
      if (dks[k] == 0.0) continue;
      const double u = dks[k] * t.ks[k] * (1.0 - t.ks[k]);
      if (kscd) {
        const auto f = params_.values(ix_.fusion);
        const std::size_t f_off = off(ix_.fusion);
        grad[off(ix_.fusion_bias)] += u;
        for (std::size_t d = 0; d < D; ++d) {
          grad[f_off + d] += u * e[d] * kc(k, d);
          grad[srow + d] += u * f(0, d) * kc(k, d);
          grad[kc_off + k * D + d] += u * f(0, d) * e[d];
        }
      } else {
        for (std::size_t d = 0; d < D; ++d) {
          grad[srow + d] += u * kc(k, d);
          grad[kc_off + k * D + d] += u * e[d];
        }
      }
    }
  }
  return loss;
}

void CdmModel::for_each_touched_range(const InteractionRecord& r,
                                      const std::function<void(std::size_t, std::size_t)>& fn) const {
  const auto& st = params_.block(ix_.student);
  fn(st.offset + static_cast<std::size_t>(r.student) * st.cols, st.cols);
  for (std::size_t b : {ix_.kc, ix_.fusion, ix_.fusion_bias, ix_.w1, ix_.b1, ix_.w2, ix_.b2, ix_.w3, ix_.b3}) {
    if (b == kNone) continue;
    fn(params_.block(b).offset, params_.block(b).size());
  }
  const auto& diff = params_.block(ix_.diff);
  fn(diff.offset + static_cast<std::size_t>(r.question) * diff.cols, diff.cols);
  fn(params_.block(ix_.disc).offset + static_cast<std::size_t>(r.question), 1);
}

double CdmModel::mean_gradient(std::span<const InteractionRecord> records, std::span<double> out) const {
  if (records.empty()) throw ValidationError("mean_gradient: empty record set");
  if (out.size() != params_.size()) throw ValidationError("mean_gradient: output size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  const double scale = 1.0 / static_cast<double>(records.size());
  std::vector<double> losses(records.size());
  kernels::blocked_accumulate(records.size(), out, [&](std::size_t i, std::span<double> acc) {
    losses[i] = accumulate_gradient(records[i], scale, acc);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total * scale;
}

void CdmModel::clamp_monotone() {
  for (std::size_t b : {ix_.w1, ix_.w2, ix_.w3}) {
    auto v = params_.values(b);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v.data[i] < 0.0) v.data[i] = 0.0;
  }
}

bool CdmModel::is_monotone() const {
  for (std::size_t b : {ix_.w1, ix_.w2, ix_.w3}) {
    auto v = params_.values(b);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v.data[i] < 0.0) return false;
  }
  return true;
}

CdmModel CdmModel::with_values(std::span<const double> values) const {
  if (values.size() != params_.size()) throw ValidationError("with_values: size mismatch");
  CdmModel copy = *this;
  std::copy(values.begin(), values.end(), copy.params_.flat_values().begin());
  return copy;
}

// ---------------------------------------------------------------------------
// Training / evaluation
// ---------------------------------------------------------------------------

CdmEvaluation evaluate_cdm(const CdmModel& model, std::span<const InteractionRecord> records) {
  if (records.empty()) throw ValidationError("evaluate_cdm: empty record set");
  std::vector<double> scores;
  kernels::parallel_map(records.size(), scores,
                        [&](std::size_t i) { return model.predict_proba(records[i].student, records[i].question); });
  std::vector<int> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) labels[i] = records[i].response;
  CdmEvaluation ev;
  ev.accuracy = accuracy(scores, labels);
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (has_pos && has_neg) ev.auc = auc(scores, labels);
  return ev;
}

TrainResult train_cdm(const Dataset& dataset, const SplitPlan& plan, std::span<const int> scope,
                      const CdmConfig& config) {
  config.validate();
  if (scope.empty()) throw ConfigError("train_cdm: empty student scope");
  std::vector<int> sorted_scope(scope.begin(), scope.end());
  std::sort(sorted_scope.begin(), sorted_scope.end());
  const auto train = plan.records(dataset, sorted_scope, SplitPart::Train);
  const auto valid = plan.records(dataset, sorted_scope, SplitPart::Valid);
  if (train.empty()) throw ConfigError("train_cdm: scoped training set is empty");

  CdmModel model = CdmModel::create(config, dataset.q_matrix, dataset.n_students);
  TrainingLog log;
  log.n_train_records = train.size();
  log.n_valid_records = valid.size();

  CdmModel best = model;
  // Key: validation AUC when defined, otherwise negative training loss.
  double best_key = -std::numeric_limits<double>::infinity();
  if (!valid.empty()) {
    const auto ev = evaluate_cdm(model, valid);
    if (ev.auc) best_key = *ev.auc;
  }
  AdamState adam(model.params(), AdamOptions{config.lr});
  const Rng shuffle_root(config.seed, fnv1a64("cdm-shuffle"));
  std::vector<std::size_t> order(train.size());
  std::vector<InteractionRecord> batch;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = shuffle_root.derive(static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      loss_sum += model.mean_gradient(batch, model.params().flat_grads()) * static_cast<double>(batch.size());
      adam_step(model.params(), adam);
      model.clamp_monotone();
    }
    if (!model.params().all_finite()) throw NumericError("train_cdm: parameters diverged");

    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(train.size());
    double key = -e.train_loss;
    if (!valid.empty()) {
      const auto ev = evaluate_cdm(model, valid);
      e.valid_auc = ev.auc;
      e.valid_acc = ev.accuracy;
      if (ev.auc) key = *ev.auc;
    }
    log.epochs.push_back(e);
    if (key > best_key) {  // strict: ties keep the earlier checkpoint
      best_key = key;
      best = model;
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return {std::move(best), std::move(log)};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json blocks = nlohmann::json::object();
  for (std::size_t b = 0; b < params.blocks().size(); ++b) {
    const auto v = params.values(b);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < v.rows; ++r) {
      const auto row = v.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    blocks[params.block(b).name] = std::move(rows);
  }
  return blocks;
}

void params_from_json(const nlohmann::json& j, ParamSet& params) {
  for (std::size_t b = 0; b < params.blocks().size(); ++b) {
    const auto& blk = params.block(b);
    if (!j.contains(blk.name)) throw ParseError("checkpoint missing parameter block '" + blk.name + "'");
    const auto& rows = j.at(blk.name);
    if (rows.size() != blk.rows) throw ParseError("checkpoint block '" + blk.name + "' has wrong row count");
    auto v = params.values(b);
    for (std::size_t r = 0; r < blk.rows; ++r) {
      const auto& row = rows.at(r);
      if (row.size() != blk.cols) throw ParseError("checkpoint block '" + blk.name + "' has wrong column count");
      for (std::size_t c = 0; c < blk.cols; ++c) v(r, c) = row.at(c).get<double>();
    }
  }
  if (j.size() != params.blocks().size()) throw ParseError("checkpoint has unexpected parameter blocks");
}

nlohmann::json cdm_to_json(const CdmModel& model, const TrainingLog* log) {
  const auto& q = model.q_matrix();
  nlohmann::json qrows = nlohmann::json::array();
  for (std::size_t j = 0; j < q.n_questions(); ++j) {
    const auto r = q.row(j);
    qrows.push_back(std::vector<int>(r.begin(), r.end()));
  }
  nlohmann::json out = {{"format", "cdm-ckpt/1"},
                        {"arch", to_string(model.arch())},
                        {"config", to_json(model.config())},
                        {"n_students", model.n_students()},
                        {"q_matrix", qrows},
                        {"params", params_to_json(model.params())}};
  if (log) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : log->epochs) {
      nlohmann::json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_acc", e.valid_acc}};
      row["valid_auc"] = e.valid_auc ? nlohmann::json(*e.valid_auc) : nlohmann::json(nullptr);
      epochs.push_back(std::move(row));
    }
    out["training_log"] = {{"best_epoch", log->best_epoch},
                           {"n_train_records", log->n_train_records},
                           {"n_valid_records", log->n_valid_records},
                           {"epochs", epochs}};
  }
  return out;
}

CdmModel cdm_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "cdm-ckpt/1") throw ParseError("unsupported checkpoint format");
    const auto config = cdm_config_from_json(j.at("config"));
    if (j.at("arch").get<std::string>() != to_string(config.arch)) throw ParseError("checkpoint arch mismatch");
    const auto& qrows = j.at("q_matrix");
    if (qrows.empty()) throw ParseError("checkpoint Q-matrix is empty");
    QMatrix q(qrows.size(), qrows.at(0).size());
    for (std::size_t r = 0; r < qrows.size(); ++r)
      for (std::size_t c = 0; c < q.n_kcs(); ++c) q.set(r, c, qrows.at(r).at(c).get<int>() != 0);
    CdmModel m = CdmModel::create(config, q, j.at("n_students").get<int>());
    params_from_json(j.at("params"), m.params());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("cdm checkpoint: ") + e.what());
  }
}

}  // namespace pmia
