#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "pmia/attack.hpp"
#include "pmia/error.hpp"
#include "pmia/metrics.hpp"

using namespace pmia;
using namespace pmia::testing;

namespace {

std::vector<AttackFeature> random_features(std::size_t n, std::size_t dim, FeatureMode mode, std::uint64_t seed) {
  Rng r(seed);
  std::vector<AttackFeature> out(n);
  for (auto& f : out) {
    f.mode = mode;
    for (std::size_t d = 0; d < dim; ++d) f.values.push_back(r.normal() * (1.0 + static_cast<double>(d)));
  }
  return out;
}

std::vector<int> alternating_labels(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
  return y;
}

template <class Model>
double attacker_gradient_error(Model m, const std::vector<AttackFeature>& feats, const std::vector<int>& y,
                               std::uint64_t seed) {
  std::vector<std::vector<double>> z;
  for (const auto& f : feats) z.push_back(m.standardizer.apply(f.values));
  m.loss_and_grad(z, y);
  const std::vector<double> g(m.params.flat_grads().begin(), m.params.flat_grads().end());
  const std::vector<double> theta(m.params.flat_values().begin(), m.params.flat_values().end());
  const ScalarFn f = [&](std::span<const double> t) {
    Model c = m;
    std::copy(t.begin(), t.end(), c.params.flat_values().begin());
    return c.loss(z, y);
  };
  return finite_diff_check(f, theta, g, {.max_coords = 400, .seed = seed});
}

}  // namespace

TEST_CASE("feature layout") {
  const auto syn = small_synthetic(1, 10, 6, 3);
  const auto m = jittered_model(CdmArch::NeuralCD, syn.dataset.q_matrix, syn.dataset.n_students, 1);
  const InteractionRecord r{2, 4, 1};
  const auto black = extract_features(m, r, FeatureMode::Black);
  CHECK(black.values.size() == 2);
  CHECK(black.values[0] == m.predict_proba(2, 4));
  CHECK(black.values[1] == 1.0);
  const auto grey = extract_features(m, r, FeatureMode::Grey);
  REQUIRE(grey.values.size() == 5);
  const auto ks = m.kstate(2);
  CHECK(std::equal(ks.begin(), ks.end(), grey.values.begin() + 2));
  const std::vector<InteractionRecord> recs{r, {3, 1, 0}};
  const auto batch = extract_features_batch(m, recs, FeatureMode::Grey);
  CHECK(batch[0].values == grey.values);
}

TEST_CASE("standardizer drops constant dimensions") {
  std::vector<AttackFeature> f(4);
  const double col0[] = {1, 2, 3, 4};
  for (int i = 0; i < 4; ++i) f[i] = {FeatureMode::Black, {col0[i], 7.0}};
  const auto s = Standardizer::fit(f);
  CHECK(s.input_dim() == 2);
  CHECK(s.active_dim() == 1);
  CHECK(s.mean[0] == 2.5);
  CHECK(s.stddev[0] == doctest::Approx(std::sqrt(1.25)));
  const auto z = s.apply(std::vector<double>{4.0, 100.0});
  REQUIRE(z.size() == 1);
  CHECK(z[0] == doctest::Approx(1.5 / std::sqrt(1.25)));
  CHECK_THROWS_AS(s.apply(std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("dca and miattacker gradients agree with finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    const auto feats = random_features(24, 6, FeatureMode::Grey, seed);
    const auto y = alternating_labels(24);
    const auto st = Standardizer::fit(feats);
    CHECK(attacker_gradient_error(DcaModel::create(FeatureMode::Grey, st, seed), feats, y, seed) < 1e-4);
    auto mia = MiAttackerModel::create(FeatureMode::Grey, st, seed);
    Rng r(seed, 5);
    for (double& v : mia.params.values(mia.params.index_of("e_mem")).row(0)) v = 0.5 + r.uniform();
    CHECK(attacker_gradient_error(mia, feats, y, seed) < 1e-4);
  }
}

TEST_CASE("neural attackers learn a separable problem") {
  auto feats = random_features(400, 3, FeatureMode::Grey, 7);
  std::vector<int> y(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) y[i] = feats[i].values[2] > 0.0 ? 1 : 0;
  NeuralTrainOptions o;
  o.max_epochs = 60;
  o.batch_size = 32;
  o.lr = 3e-3;
  const auto dca = train_dca(feats, y, o);
  const auto mia = train_miattacker(feats, y, o);
  std::vector<double> sd, sm;
  for (const auto& f : feats) {
    sd.push_back(dca.predict(f.values));
    sm.push_back(mia.predict(f.values));
  }
  CHECK(auc(sd, y) > 0.98);
  CHECK(auc(sm, y) > 0.98);
  const auto n_pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  CHECK(dca.summary.n_holdout == static_cast<std::size_t>(std::ceil(0.1 * n_pos) + std::ceil(0.1 * (400 - n_pos))));
  CHECK(dca.summary.holdout_auc.has_value());
  // Deterministic for a fixed seed.
  CHECK(train_dca(feats, y, o).params.same_values(dca.params));
}

TEST_CASE("frozen membership embedding keeps its initial value") {
  const auto feats = random_features(60, 3, FeatureMode::Grey, 3);
  const auto y = alternating_labels(60);
  NeuralTrainOptions o;
  o.max_epochs = 5;
  o.freeze_membership_embedding = true;
  o.membership_embedding_init = 0.75;
  const auto m = train_miattacker(feats, y, o);
  for (double v : m.params.values(m.params.index_of("e_mem")).row(0)) CHECK(v == 0.75);
}

TEST_CASE("gbdt splits on the response in one tree") {
  // 10 members answered correctly, 10 non-members incorrectly; proba is noise.
  std::vector<AttackFeature> f;
  std::vector<int> y;
  Rng r(4);
  for (int i = 0; i < 20; ++i) {
    const int label = i < 10 ? 1 : 0;
    f.push_back({FeatureMode::Black, {r.uniform(), static_cast<double>(label)}});
    y.push_back(label);
  }
  GbdtOptions o;
  o.n_trees = 1;
  o.max_depth = 1;
  const auto m = train_gbdt(f, y, o);
  CHECK(m.base_score == 0.0);
  REQUIRE(m.trees.size() == 1);
  const auto& root = m.trees[0].nodes[0];
  CHECK(root.feature == 1);
  CHECK(root.threshold == 0.5);
  // Leaf = -G / (H + l2) * lr with g = p - y = -/+0.5 and h = 0.25 per row.
  const double leaf = 0.5 * 10 / (0.25 * 10 + 1.0) * 0.1;
  CHECK(m.trees[0].nodes[root.left].value == doctest::Approx(-leaf).epsilon(1e-12));
  CHECK(m.trees[0].nodes[root.right].value == doctest::Approx(leaf).epsilon(1e-12));
  std::vector<double> s;
  for (const auto& x : f) s.push_back(m.predict(x.values));
  CHECK(accuracy(s, y) == 1.0);
}

TEST_CASE("gbdt base score is the log-odds of the positive rate") {
  std::vector<AttackFeature> f;
  std::vector<int> y;
  for (int i = 0; i < 8; ++i) {
    f.push_back({FeatureMode::Black, {0.5, 1.0}});
    y.push_back(i < 2 ? 1 : 0);
  }
  GbdtOptions o;
  o.n_trees = 3;
  const auto m = train_gbdt(f, y, o);
  CHECK(m.base_score == doctest::Approx(std::log(0.25 / 0.75)));
  // Constant features admit no split: every tree is a single leaf.
  for (const auto& t : m.trees) CHECK(t.nodes.size() == 1);
  CHECK_THROWS_AS(train_gbdt(random_features(4, 5, FeatureMode::Grey, 1), alternating_labels(4)), ValidationError);
}

TEST_CASE("attacker wrapper json round-trip and mode checks") {
  const auto grey = random_features(80, 5, FeatureMode::Grey, 2);
  std::vector<AttackFeature> black;
  for (const auto& g : grey) black.push_back({FeatureMode::Black, {g.values[0], g.values[1] > 0 ? 1.0 : 0.0}});
  const auto y = alternating_labels(80);
  AttackTrainOptions o;
  o.neural.max_epochs = 3;
  o.gbdt.n_trees = 4;
  for (auto kind : {AttackerKind::GbdtBlack, AttackerKind::DcaGrey, AttackerKind::MiaGrey, AttackerKind::DcaBlack,
                    AttackerKind::MiaBlack}) {
    CAPTURE(to_string(kind));
    CHECK(parse_attacker_kind(to_string(kind)) == kind);
    const auto& feats = feature_mode(kind) == FeatureMode::Grey ? grey : black;
    const auto& other = feature_mode(kind) == FeatureMode::Grey ? black : grey;
    const auto a = train_attacker(kind, feats, y, o);
    const auto back = attacker_from_json(nlohmann::json::parse(attacker_to_json(a).dump()));
    CHECK(back.kind == kind);
    const auto p1 = predict_membership_batch(a, feats);
    const auto p2 = predict_membership_batch(back, feats);
    CHECK(p1 == p2);
    for (double p : p1) CHECK((p >= 0.0 && p <= 1.0));
    CHECK_THROWS_AS(predict_membership(a, other.front()), ValidationError);
  }
  CHECK_THROWS_AS(parse_attacker_kind("svm"), ConfigError);
  CHECK(membership_decision(0.5) == 0);
  CHECK(membership_decision(0.5000001) == 1);
}

TEST_CASE("training set checks") {
  const auto f = random_features(4, 2, FeatureMode::Black, 1);
  CHECK_THROWS_AS(train_dca(f, std::vector<int>{1, 1, 1, 1}), ValidationError);
  CHECK_THROWS_AS(train_dca(f, std::vector<int>{1, 0, 1}), ValidationError);
  CHECK_THROWS_AS(train_dca(f, std::vector<int>{1, 0, 2, 0}), ValidationError);
}
