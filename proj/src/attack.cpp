#include "pmia/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pmia/error.hpp"
#include "pmia/kernels.hpp"
#include "pmia/metrics.hpp"

namespace pmia {

std::string_view to_string(FeatureMode mode) { return mode == FeatureMode::Black ? "black" : "grey"; }

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

AttackFeature extract_features(const CdmModel& model, const InteractionRecord& record, FeatureMode mode) {
  model.check_ids(record.student, record.question);
  AttackFeature f;
  f.mode = mode;
  f.values.reserve(2 + (mode == FeatureMode::Grey ? model.n_kcs() : 0));
  f.values.push_back(model.predict_proba(record.student, record.question));
  f.values.push_back(static_cast<double>(record.response));
  if (mode == FeatureMode::Grey) {
    const auto ks = model.kstate(record.student);
    f.values.insert(f.values.end(), ks.begin(), ks.end());
  }
  return f;
}

std::vector<AttackFeature> extract_features_batch(const CdmModel& model, std::span<const InteractionRecord> records,
                                                  FeatureMode mode) {
  std::vector<AttackFeature> out;
  kernels::parallel_map(records.size(), out, [&](std::size_t i) { return extract_features(model, records[i], mode); });
  return out;
}

// ---------------------------------------------------------------------------
// Standardizer
// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(std::span<const AttackFeature> features) {
  if (features.empty()) throw ValidationError("standardizer: no features");
  const std::size_t d = features.front().values.size();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  s.active.assign(d, 0);
  const double n = static_cast<double>(features.size());
  for (const auto& f : features) {
    if (f.values.size() != d) throw ValidationError("standardizer: inconsistent feature lengths");
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += f.values[i];
  }
  for (double& m : s.mean) m /= n;
  for (const auto& f : features)
    for (std::size_t i = 0; i < d; ++i) s.stddev[i] += (f.values[i] - s.mean[i]) * (f.values[i] - s.mean[i]);
  for (std::size_t i = 0; i < d; ++i) {
    const double sd = std::sqrt(s.stddev[i] / n);
    s.active[i] = sd > kStdFloor ? 1 : 0;
    s.stddev[i] = std::max(sd, kStdFloor);
  }
  return s;
}

std::size_t Standardizer::active_dim() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), 1));
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  if (x.size() != mean.size()) throw ValidationError("standardizer: feature length mismatch");
  std::vector<double> z;
  z.reserve(active_dim());
  for (std::size_t i = 0; i < x.size(); ++i)
    if (active[i]) z.push_back((x[i] - mean[i]) / stddev[i]);
  return z;
}

// ---------------------------------------------------------------------------
// Dense helpers
// ---------------------------------------------------------------------------

namespace {

void init_linear(ParamSet& p, std::size_t w, std::size_t b, const Rng& rng) {
  const std::size_t fan_in = p.block(w).cols;
  const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 1.0;
  init_uniform(p, w, rng, bound);
  init_uniform(p, b, rng, bound);
}

// out = W x + b
void affine(ConstMatrixView W, ConstMatrixView b, std::span<const double> x, std::vector<double>& out) {
  out.resize(W.rows);
  for (std::size_t i = 0; i < W.rows; ++i) {
    double z = b(i, 0);
    for (std::size_t k = 0; k < W.cols; ++k) z += W(i, k) * x[k];
    out[i] = z;
  }
}

// dW += d x^T, db += d, dx = W^T d (dx optional)
void affine_backward(ConstMatrixView W, MatrixView dW, MatrixView db, std::span<const double> x,
                     std::span<const double> d, std::vector<double>* dx) {
  if (dx) dx->assign(W.cols, 0.0);
  for (std::size_t i = 0; i < W.rows; ++i) {
    if (d[i] == 0.0) continue;
    db(i, 0) += d[i];
    for (std::size_t k = 0; k < W.cols; ++k) {
      dW(i, k) += d[i] * x[k];
      if (dx) (*dx)[k] += d[i] * W(i, k);
    }
  }
}

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) x = std::max(0.0, x);
}

}  // namespace

// ---------------------------------------------------------------------------
// DCA
// ---------------------------------------------------------------------------

DcaModel DcaModel::create(FeatureMode mode, Standardizer standardizer, std::uint64_t seed) {
  DcaModel m;
  m.mode = mode;
  m.standardizer = std::move(standardizer);
  const std::size_t d = m.standardizer.active_dim();
  auto& p = m.params;
  p.add_block("w1", kHidden1, d);
  p.add_block("b1", kHidden1, 1);
  p.add_block("w2", kHidden2, kHidden1);
  p.add_block("b2", kHidden2, 1);
  p.add_block("w3", 1, kHidden2);
  p.add_block("b3", 1, 1);
  const Rng rng(seed, fnv1a64("dca-init"));
  init_linear(p, 0, 1, rng);
  init_linear(p, 2, 3, rng);
  init_linear(p, 4, 5, rng);
  return m;
}

double DcaModel::predict_standardized(std::span<const double> z) const {
  std::vector<double> a1, a2, a3;
  affine(params.values(0), params.values(1), z, a1);
  relu_inplace(a1);
  affine(params.values(2), params.values(3), a1, a2);
  relu_inplace(a2);
  affine(params.values(4), params.values(5), a2, a3);
  return sigmoid(a3[0]);
}

double DcaModel::predict(std::span<const double> features) const {
  return predict_standardized(standardizer.apply(features));
}

double DcaModel::loss(std::span<const std::vector<double>> z, std::span<const int> labels) const {
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += bce_loss(predict_standardized(z[i]), labels[i]).value;
  return total / static_cast<double>(z.size());
}

double DcaModel::loss_and_grad(std::span<const std::vector<double>> z, std::span<const int> labels) {
  params.zero_grads();
  const double scale = 1.0 / static_cast<double>(z.size());
  double total = 0.0;
  std::vector<double> a1, h1, a2, h2, a3, d2, d1;
  for (std::size_t n = 0; n < z.size(); ++n) {
    affine(params.values(0), params.values(1), z[n], a1);
    h1 = a1;
    relu_inplace(h1);
    affine(params.values(2), params.values(3), h1, a2);
    h2 = a2;
    relu_inplace(h2);
    affine(params.values(4), params.values(5), h2, a3);
    const double p = sigmoid(a3[0]);
    total += bce_loss(p, labels[n]).value;

    const std::vector<double> d3{scale * bce_logit_grad(p, labels[n])};
    affine_backward(params.values(4), params.grads(4), params.grads(5), h2, d3, &d2);
    for (std::size_t i = 0; i < d2.size(); ++i)
      if (a2[i] <= 0.0) d2[i] = 0.0;
    affine_backward(params.values(2), params.grads(2), params.grads(3), h1, d2, &d1);
    for (std::size_t i = 0; i < d1.size(); ++i)
      if (a1[i] <= 0.0) d1[i] = 0.0;
    affine_backward(params.values(0), params.grads(0), params.grads(1), z[n], d1, nullptr);
  }
  return total * scale;
}

// ---------------------------------------------------------------------------
// MIAttacker
// ---------------------------------------------------------------------------

MiAttackerModel MiAttackerModel::create(FeatureMode mode, Standardizer standardizer, std::uint64_t seed,
                                        double membership_embedding_init) {
  MiAttackerModel m;
  m.mode = mode;
  m.standardizer = std::move(standardizer);
  const std::size_t d = m.standardizer.active_dim();
  auto& p = m.params;
  p.add_block("enc_w", kEmbed, d);
  p.add_block("enc_b", kEmbed, 1);
  p.add_block("e_mem", 1, kEmbed);
  p.add_block("head_w1", kHead, kEmbed);
  p.add_block("head_b1", kHead, 1);
  p.add_block("head_w2", 1, kHead);
  p.add_block("head_b2", 1, 1);
  const Rng rng(seed, fnv1a64("mia-init"));
  init_linear(p, 0, 1, rng);
  init_constant(p, 2, membership_embedding_init);
  init_linear(p, 3, 4, rng);
  init_linear(p, 5, 6, rng);
  return m;
}

double MiAttackerModel::predict_standardized(std::span<const double> z) const {
  std::vector<double> e, a1, a2;
  affine(params.values(0), params.values(1), z, e);
  relu_inplace(e);
  const auto mem = params.values(2);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] *= mem(0, i);
  affine(params.values(3), params.values(4), e, a1);
  relu_inplace(a1);
  affine(params.values(5), params.values(6), a1, a2);
  return sigmoid(a2[0]);
}

double MiAttackerModel::predict(std::span<const double> features) const {
  return predict_standardized(standardizer.apply(features));
}

double MiAttackerModel::loss(std::span<const std::vector<double>> z, std::span<const int> labels) const {
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += bce_loss(predict_standardized(z[i]), labels[i]).value;
  return total / static_cast<double>(z.size());
}

double MiAttackerModel::loss_and_grad(std::span<const std::vector<double>> z, std::span<const int> labels) {
  params.zero_grads();
  const double scale = 1.0 / static_cast<double>(z.size());
  double total = 0.0;
  const auto mem = params.values(2);
  auto dmem = params.grads(2);
  std::vector<double> ae, e, h, a1, g, a2, dg, dh, de;
  for (std::size_t n = 0; n < z.size(); ++n) {
    affine(params.values(0), params.values(1), z[n], ae);
    e = ae;
    relu_inplace(e);
    h.resize(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) h[i] = e[i] * mem(0, i);
    affine(params.values(3), params.values(4), h, a1);
    g = a1;
    relu_inplace(g);
    affine(params.values(5), params.values(6), g, a2);
    const double p = sigmoid(a2[0]);
    total += bce_loss(p, labels[n]).value;

    const std::vector<double> d2{scale * bce_logit_grad(p, labels[n])};
    affine_backward(params.values(5), params.grads(5), params.grads(6), g, d2, &dg);
    for (std::size_t i = 0; i < dg.size(); ++i)
      if (a1[i] <= 0.0) dg[i] = 0.0;
    affine_backward(params.values(3), params.grads(3), params.grads(4), h, dg, &dh);
    de.resize(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
      dmem(0, i) += dh[i] * e[i];
      de[i] = ae[i] > 0.0 ? dh[i] * mem(0, i) : 0.0;
    }
    affine_backward(params.values(0), params.grads(0), params.grads(1), z[n], de, nullptr);
  }
  return total * scale;
}

// ---------------------------------------------------------------------------
// Neural training loop
// ---------------------------------------------------------------------------

namespace {

void check_training_set(std::span<const AttackFeature> features, std::span<const int> labels) {
  if (features.size() != labels.size()) throw ValidationError("attack training: features/labels length mismatch");
  if (features.empty()) throw ValidationError("attack training: empty training set");
  const auto mode = features.front().mode;
  const auto len = features.front().values.size();
  for (const auto& f : features)
    if (f.mode != mode || f.values.size() != len)
      throw ValidationError("attack training: features must share one mode and length");
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("attack training: labels must be binary");
    pos = pos || y == 1;
    neg = neg || y == 0;
  }
  if (!pos || !neg) throw ValidationError("attack training: both classes must be present");
}

// Stratified hold-out: ceil(fraction * n_c) items of each class with at
// least two members, drawn by a seeded shuffle.
void stratified_split(std::span<const int> labels, double fraction, const Rng& root,
                      std::vector<std::size_t>& train, std::vector<std::size_t>& holdout) {
  train.clear();
  holdout.clear();
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    Rng r = root.derive(static_cast<std::uint64_t>(cls) + 101);
    r.shuffle(idx);
    std::size_t n_hold = 0;
    if (fraction > 0.0 && idx.size() >= 2)
      n_hold = std::min(idx.size() - 1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(idx.size()))));
    holdout.insert(holdout.end(), idx.begin(), idx.begin() + static_cast<long>(n_hold));
    train.insert(train.end(), idx.begin() + static_cast<long>(n_hold), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(holdout.begin(), holdout.end());
}

template <class Model, class Create>
Model fit_neural(std::span<const AttackFeature> features, std::span<const int> labels, const NeuralTrainOptions& opt,
                 Create&& create) {
  check_training_set(features, labels);
  if (opt.batch_size < 1 || opt.max_epochs < 0 || opt.patience < 1)
    throw ConfigError("attack training: invalid batch_size/max_epochs/patience");
  const Rng root(opt.seed, fnv1a64("attack-train"));
  std::vector<std::size_t> train_idx, hold_idx;
  stratified_split(labels, opt.holdout_fraction, root.derive("holdout"), train_idx, hold_idx);

  std::vector<AttackFeature> train_features;
  for (std::size_t i : train_idx) train_features.push_back(features[i]);
  Model model = create(features.front().mode, Standardizer::fit(train_features));

  auto standardize = [&](const std::vector<std::size_t>& idx, std::vector<std::vector<double>>& z, std::vector<int>& y) {
    for (std::size_t i : idx) {
      z.push_back(model.standardizer.apply(features[i].values));
      y.push_back(labels[i]);
    }
  };
  std::vector<std::vector<double>> z_train, z_hold;
  std::vector<int> y_train, y_hold;
  standardize(train_idx, z_train, y_train);
  standardize(hold_idx, z_hold, y_hold);
  const bool hold_has_both = std::count(y_hold.begin(), y_hold.end(), 1) > 0 &&
                             std::count(y_hold.begin(), y_hold.end(), 0) > 0;

  // Lexicographic early-stopping key: (hold-out AUC, -hold-out loss), or
  // -training loss when the hold-out cannot define an AUC.
  auto key = [&](Model& m) -> std::pair<double, double> {
    if (hold_has_both) {
      std::vector<double> s(z_hold.size());
      for (std::size_t i = 0; i < z_hold.size(); ++i) s[i] = m.predict_standardized(z_hold[i]);
      return {auc(s, y_hold), -m.loss(z_hold, y_hold)};
    }
    return {-m.loss(z_train, y_train), 0.0};
  };

  AdamState adam(model.params, AdamOptions{opt.lr});
  Model best = model;
  auto best_key = key(model);
  int since_best = 0;
  int epochs_run = 0;
  std::vector<std::size_t> order(z_train.size());
  std::vector<std::vector<double>> bz;
  std::vector<int> by;
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng r = root.derive(static_cast<std::uint64_t>(epoch) + 1000);
    r.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      bz.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bz.push_back(z_train[order[i]]);
        by.push_back(y_train[order[i]]);
      }
      model.loss_and_grad(bz, by);
      adam_step(model.params, adam);
    }
    epochs_run = epoch;
    if (!model.params.all_finite()) throw NumericError("attack training diverged");
    const auto k = key(model);
    if (k > best_key) {
      best_key = k;
      best = model;
      best.summary.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }
  best.summary.epochs_run = epochs_run;
  best.summary.n_train = z_train.size();
  best.summary.n_holdout = z_hold.size();
  if (hold_has_both) best.summary.holdout_auc = best_key.first;
  return best;
}

}  // namespace

DcaModel train_dca(std::span<const AttackFeature> features, std::span<const int> labels,
                   const NeuralTrainOptions& options) {
  return fit_neural<DcaModel>(features, labels, options, [&](FeatureMode mode, Standardizer s) {
    return DcaModel::create(mode, std::move(s), options.seed);
  });
}

MiAttackerModel train_miattacker(std::span<const AttackFeature> features, std::span<const int> labels,
                                 const NeuralTrainOptions& options) {
  return fit_neural<MiAttackerModel>(features, labels, options, [&](FeatureMode mode, Standardizer s) {
    auto m = MiAttackerModel::create(mode, std::move(s), options.seed, options.membership_embedding_init);
    if (options.freeze_membership_embedding) m.params.set_trainable("e_mem", false);
    return m;
  });
}

// ---------------------------------------------------------------------------
// GBDT
// ---------------------------------------------------------------------------

double RegressionTree::evaluate(std::span<const double> x) const {
  int i = 0;
  while (nodes[i].feature >= 0) i = x[nodes[i].feature] < nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].value;
}

double GbdtModel::margin(std::span<const double> x) const {
  if (x.size() != n_features) throw ValidationError("gbdt: feature length mismatch");
  double m = base_score;
  for (const auto& t : trees) m += t.evaluate(x);
  return m;
}

namespace {

struct TreeBuilder {
  const std::vector<std::vector<double>>& x;
  const std::vector<double>& g;
  const std::vector<double>& h;
  const GbdtOptions& opt;
  RegressionTree tree;

  int build(std::vector<std::size_t> idx, int depth) {
    double G = 0.0, H = 0.0;
    for (std::size_t i : idx) {
      G += g[i];
      H += h[i];
    }
    const int node = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes[node].value = -G / (H + opt.l2) * opt.learning_rate;
    if (depth >= opt.max_depth || idx.size() < 2) return node;

    const double parent = G * G / (H + opt.l2);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    const std::size_t n_features = x.front().size();
    for (std::size_t f = 0; f < n_features; ++f) {
      std::vector<std::size_t> sorted = idx;
      std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
      double GL = 0.0, HL = 0.0;
      for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
        GL += g[sorted[k]];
        HL += h[sorted[k]];
        const double lo = x[sorted[k]][f];
        const double hi = x[sorted[k + 1]][f];
        if (!(lo < hi)) continue;
        const double GR = G - GL, HR = H - HL;
        if (HL < opt.min_child_weight || HR < opt.min_child_weight) continue;
        const double gain = GL * GL / (HL + opt.l2) + GR * GR / (HR + opt.l2) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = lo + 0.5 * (hi - lo);
        }
      }
    }
    if (best_feature < 0) return node;
    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) (x[i][best_feature] < best_threshold ? left : right).push_back(i);
    tree.nodes[node].feature = best_feature;
    tree.nodes[node].threshold = best_threshold;
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    tree.nodes[node].left = l;
    tree.nodes[node].right = r;
    return node;
  }
};

}  // namespace

GbdtModel train_gbdt(std::span<const AttackFeature> features, std::span<const int> labels, const GbdtOptions& options) {
  check_training_set(features, labels);
  if (features.front().mode != FeatureMode::Black) throw ValidationError("gbdt: black-mode features only");
  if (options.n_trees < 0 || options.max_depth < 1) throw ConfigError("gbdt: invalid n_trees/max_depth");
  const std::size_t n = features.size();
  std::vector<std::vector<double>> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = features[i].values;

  GbdtModel model;
  model.learning_rate = options.learning_rate;
  model.n_features = x.front().size();
  const double pos_rate =
      static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / static_cast<double>(n);
  model.base_score = std::log(pos_rate / (1.0 - pos_rate));

  std::vector<double> margin(n, model.base_score), g(n), h(n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (int t = 0; t < options.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(margin[i]);
      g[i] = p - labels[i];
      h[i] = std::max(p * (1.0 - p), 1e-16);
    }
    TreeBuilder builder{x, g, h, options, {}};
    builder.build(all, 0);
    for (std::size_t i = 0; i < n; ++i) margin[i] += builder.tree.evaluate(x[i]);
    model.trees.push_back(std::move(builder.tree));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Attacker wrapper
// ---------------------------------------------------------------------------

std::string_view to_string(AttackerKind kind) {
  switch (kind) {
    case AttackerKind::GbdtBlack: return "gbdt-black";
    case AttackerKind::DcaGrey: return "dca-grey";
    case AttackerKind::MiaGrey: return "mia-grey";
    case AttackerKind::DcaBlack: return "dca-black";
    case AttackerKind::MiaBlack: return "mia-black";
  }
  return "?";
}

AttackerKind parse_attacker_kind(std::string_view name) {
  for (auto k : {AttackerKind::GbdtBlack, AttackerKind::DcaGrey, AttackerKind::MiaGrey, AttackerKind::DcaBlack,
                 AttackerKind::MiaBlack})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown attacker kind '" + std::string(name) + "'");
}

FeatureMode feature_mode(AttackerKind kind) {
  return (kind == AttackerKind::DcaGrey || kind == AttackerKind::MiaGrey) ? FeatureMode::Grey : FeatureMode::Black;
}

Attacker train_attacker(AttackerKind kind, std::span<const AttackFeature> features, std::span<const int> labels,
                        const AttackTrainOptions& options) {
  for (const auto& f : features)
    if (f.mode != feature_mode(kind))
      throw ValidationError("attacker " + std::string(to_string(kind)) + " needs " +
                            std::string(to_string(feature_mode(kind))) + "-mode features");
  Attacker a;
  a.kind = kind;
  switch (kind) {
    case AttackerKind::GbdtBlack: a.model = train_gbdt(features, labels, options.gbdt); break;
    case AttackerKind::DcaGrey:
    case AttackerKind::DcaBlack: a.model = train_dca(features, labels, options.neural); break;
    case AttackerKind::MiaGrey:
    case AttackerKind::MiaBlack: a.model = train_miattacker(features, labels, options.neural); break;
  }
  return a;
}

double predict_membership(const Attacker& attacker, const AttackFeature& feature) {
  if (feature.mode != attacker.mode())
    throw ValidationError("feature mode '" + std::string(to_string(feature.mode)) + "' does not match attacker mode '" +
                          std::string(to_string(attacker.mode())) + "'");
  return std::visit(
      [&](const auto& m) -> double {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, GbdtModel>) {
          return m.predict(feature.values);
        } else {
          if (feature.values.size() != m.standardizer.input_dim())
            throw ValidationError("feature length does not match attacker input");
          return m.predict(feature.values);
        }
      },
      attacker.model);
}

std::vector<double> predict_membership_batch(const Attacker& attacker, std::span<const AttackFeature> features) {
  for (const auto& f : features)
    if (f.mode != attacker.mode()) throw ValidationError("feature mode does not match attacker mode");
  std::vector<double> out;
  kernels::parallel_map(features.size(), out, [&](std::size_t i) { return predict_membership(attacker, features[i]); });
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json standardizer_to_json(const Standardizer& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"active", s.active}};
}

Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
  s.active = j.at("active").get<std::vector<std::uint8_t>>();
  if (s.stddev.size() != s.mean.size() || s.active.size() != s.mean.size())
    throw ParseError("standardizer vectors differ in length");
  return s;
}

nlohmann::json summary_to_json(const NeuralTrainSummary& s) {
  nlohmann::json j = {{"epochs_run", s.epochs_run},
                      {"best_epoch", s.best_epoch},
                      {"n_train", s.n_train},
                      {"n_holdout", s.n_holdout}};
  j["holdout_auc"] = s.holdout_auc ? nlohmann::json(*s.holdout_auc) : nlohmann::json(nullptr);
  return j;
}

NeuralTrainSummary summary_from_json(const nlohmann::json& j) {
  NeuralTrainSummary s;
  s.epochs_run = j.at("epochs_run").get<int>();
  s.best_epoch = j.at("best_epoch").get<int>();
  s.n_train = j.at("n_train").get<std::size_t>();
  s.n_holdout = j.at("n_holdout").get<std::size_t>();
  if (!j.at("holdout_auc").is_null()) s.holdout_auc = j.at("holdout_auc").get<double>();
  return s;
}

}  // namespace

nlohmann::json attacker_to_json(const Attacker& attacker) {
  nlohmann::json j = {{"format", "attacker/1"}, {"kind", to_string(attacker.kind)}, {"mode", to_string(attacker.mode())}};
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, GbdtModel>) {
          nlohmann::json trees = nlohmann::json::array();
          for (const auto& t : m.trees) {
            nlohmann::json nodes = nlohmann::json::array();
            for (const auto& n : t.nodes)
              nodes.push_back({{"feature", n.feature},
                               {"threshold", n.threshold},
                               {"left", n.left},
                               {"right", n.right},
                               {"value", n.value}});
            trees.push_back(std::move(nodes));
          }
          j["gbdt"] = {{"base_score", m.base_score},
                       {"learning_rate", m.learning_rate},
                       {"n_features", m.n_features},
                       {"trees", trees}};
        } else {
          j["standardizer"] = standardizer_to_json(m.standardizer);
          j["params"] = params_to_json(m.params);
          j["summary"] = summary_to_json(m.summary);
          nlohmann::json frozen = nlohmann::json::array();
          for (const auto& b : m.params.blocks())
            if (!b.trainable) frozen.push_back(b.name);
          j["frozen_blocks"] = frozen;
        }
      },
      attacker.model);
  return j;
}

Attacker attacker_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "attacker/1") throw ParseError("unsupported attacker format");
    Attacker a;
    a.kind = parse_attacker_kind(j.at("kind").get<std::string>());
    if (j.at("mode").get<std::string>() != to_string(a.mode())) throw ParseError("attacker mode/kind mismatch");
    if (a.kind == AttackerKind::GbdtBlack) {
      const auto& g = j.at("gbdt");
      GbdtModel m;
      m.base_score = g.at("base_score").get<double>();
      m.learning_rate = g.at("learning_rate").get<double>();
      m.n_features = g.at("n_features").get<std::size_t>();
      for (const auto& tj : g.at("trees")) {
        RegressionTree t;
        for (const auto& nj : tj)
          t.nodes.push_back({nj.at("feature").get<int>(), nj.at("threshold").get<double>(), nj.at("left").get<int>(),
                             nj.at("right").get<int>(), nj.at("value").get<double>()});
        if (t.nodes.empty()) throw ParseError("gbdt tree without nodes");
        m.trees.push_back(std::move(t));
      }
      a.model = std::move(m);
      return a;
    }
    auto load = [&](auto model) {
      params_from_json(j.at("params"), model.params);
      model.summary = summary_from_json(j.at("summary"));
      for (const auto& name : j.at("frozen_blocks")) model.params.set_trainable(name.get<std::string>(), false);
      return model;
    };
    auto standardizer = standardizer_from_json(j.at("standardizer"));
    const auto mode = a.mode();
    if (a.kind == AttackerKind::DcaGrey || a.kind == AttackerKind::DcaBlack)
      a.model = load(DcaModel::create(mode, std::move(standardizer), 0));
    else
      a.model = load(MiAttackerModel::create(mode, std::move(standardizer), 0));
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attacker checkpoint: ") + e.what());
  }
}

}  // namespace pmia
