#include "dfmtl/model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace dfmtl;

namespace {

// Small encoder so finite differences stay cheap.
ModelSpec toy_spec(Regime r, int multi_classes = 4) {
  ModelSpec s;
  s.encoder.input = {4, 8, 8};
  s.encoder.channels = {3, 4, 5, 16};
  s.regime = r;
  s.multi_classes = multi_classes;
  s.projection_dim = 4;
  return s;
}

MatR random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  MatR m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

MatR random_clips(const ModelSpec& s, Eigen::Index batch, std::uint64_t seed) {
  return random_matrix(3, batch * s.encoder.input.positions(), seed);
}

// Linear probe of every active head: L = sum <C_h, head_h>.
struct Probe {
  MatR bin, multi, bproj, mproj;
};

double probe_loss(const Model& m, const Weights& w, const MatR& clips, Eigen::Index batch, const Probe& p) {
  const auto f = m.forward(w, clips, batch);
  double l = (f.binary_logits.array() * p.bin.array()).sum();
  if (f.multi_logits) l += (f.multi_logits->array() * p.multi.array()).sum();
  if (f.binary_projection) l += (f.binary_projection->array() * p.bproj.array()).sum();
  if (f.multi_projection) l += (f.multi_projection->array() * p.mproj.array()).sum();
  return l;
}

double max_fd_error(const Model& m, Weights w, const MatR& clips, Eigen::Index batch, const Probe& p,
                    VecR Weights::*component, const VecR& analytic) {
  VecR& params = w.*component;
  double worst = 0;
  const Eigen::Index stride = std::max<Eigen::Index>(1, params.size() / 60);
  for (Eigen::Index i = 0; i < params.size(); i += stride) {
    const double keep = params[i];
    params[i] = keep + 1e-5;
    const double up = probe_loss(m, w, clips, batch, p);
    params[i] = keep - 1e-5;
    const double dn = probe_loss(m, w, clips, batch, p);
    params[i] = keep;
    const double fd = (up - dn) / 2e-5;
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-4}));
  }
  return worst;
}

}  // namespace

TEST(Routing, Table) {
  auto plan = [](Regime r) { return regime_to_plan(r); };
  EXPECT_EQ(plan(Regime::BinCe), (RoutingPlan{true, false, false, false, false}));
  EXPECT_EQ(plan(Regime::BinCon), (RoutingPlan{false, false, true, false, true}));
  EXPECT_EQ(plan(Regime::BinCeCon), (RoutingPlan{true, false, true, false, false}));
  EXPECT_EQ(plan(Regime::BinCeMultiCe), (RoutingPlan{true, true, false, false, false}));
  EXPECT_EQ(plan(Regime::BinConMultiCon), (RoutingPlan{false, false, true, true, true}));
}

TEST(Routing, Invariants) {
  for (Regime r : all_regimes()) {
    const auto p = regime_to_plan(r);
    EXPECT_TRUE(p.bin_ce_to_encoder || p.multi_ce_to_encoder || p.bin_con_to_encoder || p.multi_con_to_encoder);
    if (!p.bin_ce_to_encoder) EXPECT_TRUE(p.monitor_binary_classifier);
    EXPECT_EQ(parse_regime(to_string(r)), r);
  }
  EXPECT_THROW(parse_regime("BIN_FOO"), ConfigError);
  EXPECT_EQ(parse_init_source("checkpoint"), InitSource::checkpoint);
  EXPECT_THROW(parse_init_source("s3d"), ConfigError);
}

TEST(TotalLoss, Examples) {
  EXPECT_NEAR(total_loss(regime_to_plan(Regime::BinCeCon), {0.3, 0, 0.5, 0}), 0.8, 1e-15);
  EXPECT_EQ(total_loss(regime_to_plan(Regime::BinCe), {0.3, 0.9, 0.7, 0.1}), 0.3);
  EXPECT_NEAR(total_loss(regime_to_plan(Regime::BinConMultiCon), {5.0, 0, 0.4, 0.2}), 0.6, 1e-15);
}

TEST(Model, ForwardShapes) {
  ModelSpec s;  // desk-scale encoder, D = 128
  s.regime = Regime::BinCeMultiCe;
  s.multi_classes = 4;
  const Model m(s);
  const Weights w = m.init(1);
  const auto f = m.forward(w, random_clips(s, 4, 2), 4);
  EXPECT_EQ(f.embedding.rows(), 128);
  EXPECT_EQ(f.embedding.cols(), 4);
  EXPECT_EQ(f.binary_logits.cols(), 4);
  EXPECT_EQ(f.binary_logits.rows(), 2);
  ASSERT_TRUE(f.multi_logits);
  EXPECT_EQ(f.multi_logits->rows(), 4);
  EXPECT_FALSE(f.binary_projection);
  EXPECT_FALSE(f.multi_projection);
}

TEST(Model, HeadsPerRegime) {
  const Model ce(toy_spec(Regime::BinCe));
  auto f = ce.forward(ce.init(1), random_clips(ce.spec(), 2, 1), 2);
  EXPECT_FALSE(f.binary_projection);
  EXPECT_FALSE(f.multi_projection);
  EXPECT_FALSE(f.multi_logits);

  const Model dual(toy_spec(Regime::BinConMultiCon));
  const Weights w = dual.init(1);
  f = dual.forward(w, random_clips(dual.spec(), 2, 1), 2);
  ASSERT_TRUE(f.binary_projection);
  ASSERT_TRUE(f.multi_projection);
  EXPECT_FALSE(f.multi_logits);
  EXPECT_GT((*f.binary_projection - *f.multi_projection).norm(), 1e-6);
  EXPECT_NE(w.binary_projection, w.multi_projection);
  for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(f.binary_projection->col(j).norm(), 1.0, 1e-12);
}

TEST(Model, ClassifierHasThreeAffineLayers) {
  for (Regime r : all_regimes()) {
    ModelSpec s;
    s.regime = r;
    s.multi_classes = 4;
    const Model m(s);
    const Eigen::Index d = 128;
    EXPECT_EQ(m.binary_classifier().affine_layers(), 3u);
    const Eigen::Index bin_params = d * (d / 2) + d / 2 + (d / 2) * (d / 4) + d / 4 + (d / 4) * 2 + 2;
    EXPECT_EQ(m.zero_like().binary_classifier.size(), bin_params);
    if (m.multi_classifier()) {
      EXPECT_EQ(m.multi_classifier()->affine_layers(), 3u);
      EXPECT_EQ(m.zero_like().multi_classifier.size(), bin_params - (d / 4) * 2 - 2 + (d / 4) * 4 + 4);
    }
  }
}

TEST(Model, ShapeMismatchIsContractViolation) {
  const Model m(toy_spec(Regime::BinCe));
  EXPECT_THROW(m.forward(m.init(1), MatR::Zero(3, 10), 1), ContractViolation);
}

TEST(Model, GradientsMatchFiniteDifference) {
  for (Regime r : all_regimes()) {
    const Model m(toy_spec(r));
    const Weights w = m.init(3);
    const Eigen::Index batch = 2;
    const MatR clips = random_clips(m.spec(), batch, 4);
    const auto f = m.forward(w, clips, batch);
    Probe p;
    HeadGradients hg;
    p.bin = random_matrix(2, batch, 5);
    if (m.plan().bin_ce_to_encoder || m.plan().monitor_binary_classifier) hg.binary_logits = p.bin;
    if (f.multi_logits) hg.multi_logits = p.multi = random_matrix(f.multi_logits->rows(), batch, 6);
    if (f.binary_projection) hg.binary_projection = p.bproj = random_matrix(4, batch, 7);
    if (f.multi_projection) hg.multi_projection = p.mproj = random_matrix(4, batch, 8);
    const Gradients g = m.backward(w, f, hg);

    // Monitor regimes: the probe on the binary logits must not reach the
    // encoder, so compare encoder gradients against a probe without it.
    Probe enc_probe = p;
    if (!m.plan().bin_ce_to_encoder) enc_probe.bin = MatR::Zero(2, batch);
    EXPECT_LT(max_fd_error(m, w, clips, batch, enc_probe, &Weights::encoder, g.encoder), 1e-5) << to_string(r);
    EXPECT_LT(max_fd_error(m, w, clips, batch, p, &Weights::binary_classifier, g.binary_classifier), 1e-5);
    if (f.multi_logits)
      EXPECT_LT(max_fd_error(m, w, clips, batch, p, &Weights::multi_classifier, g.multi_classifier), 1e-5);
    if (f.binary_projection)
      EXPECT_LT(max_fd_error(m, w, clips, batch, p, &Weights::binary_projection, g.binary_projection), 1e-5);
    if (f.multi_projection)
      EXPECT_LT(max_fd_error(m, w, clips, batch, p, &Weights::multi_projection, g.multi_projection), 1e-5);
  }
}

TEST(Model, MonitorClassifierIsDetached) {
  for (Regime r : {Regime::BinCon, Regime::BinConMultiCon}) {
    const Model m(toy_spec(r));
    const Weights w = m.init(1);
    const auto f = m.forward(w, random_clips(m.spec(), 3, 2), 3);
    HeadGradients hg;
    hg.binary_logits = random_matrix(2, 3, 9);
    const Gradients g = m.backward(w, f, hg);
    EXPECT_EQ(g.encoder.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(g.binary_classifier.norm(), 0.0);
  }
  // Same head gradient in a routed regime does reach the encoder.
  const Model m(toy_spec(Regime::BinCeCon));
  const Weights w = m.init(1);
  const auto f = m.forward(w, random_clips(m.spec(), 3, 2), 3);
  HeadGradients hg;
  hg.binary_logits = random_matrix(2, 3, 9);
  EXPECT_GT(m.backward(w, f, hg).encoder.norm(), 0.0);
}

TEST(Model, SharedTrunkGradientIsSumOfStreams) {
  struct Case {
    Regime regime;
    bool contrastive;
  };
  for (Case c : {Case{Regime::BinCeMultiCe, false}, Case{Regime::BinConMultiCon, true}}) {
    const Model m(toy_spec(c.regime));
    const Weights w = m.init(2);
    const auto f = m.forward(w, random_clips(m.spec(), 3, 3), 3);
    HeadGradients a, b, both;
    if (c.contrastive) {
      a.binary_projection = random_matrix(4, 3, 1);
      b.multi_projection = random_matrix(4, 3, 2);
    } else {
      a.binary_logits = random_matrix(2, 3, 1);
      b.multi_logits = random_matrix(4, 3, 2);
    }
    both.binary_logits = a.binary_logits;
    both.binary_projection = a.binary_projection;
    both.multi_logits = b.multi_logits;
    both.multi_projection = b.multi_projection;
    const Gradients ga = m.backward(w, f, a), gb = m.backward(w, f, b), gs = m.backward(w, f, both);
    EXPECT_GT(ga.d_embedding.norm(), 0.0);
    EXPECT_GT(gb.d_embedding.norm(), 0.0);
    EXPECT_LT((gs.encoder - (ga.encoder + gb.encoder)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Model, InferenceIsProbabilities) {
  for (Regime r : all_regimes()) {
    const Model m(toy_spec(r));
    const MatR p = m.inference_predict(m.init(4), random_clips(m.spec(), 5, 1), 5);
    ASSERT_EQ(p.rows(), 5);
    ASSERT_EQ(p.cols(), 2);
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-6);
    EXPECT_TRUE((p.array() >= 0).all());
  }
}

TEST(Model, InferenceIgnoresDiscardedHeads) {
  const Model m(toy_spec(Regime::BinCeMultiCe));
  Weights w = m.init(5);
  const MatR clips = random_clips(m.spec(), 4, 6);
  const MatR before = m.inference_predict(w, clips, 4);
  w.multi_classifier = VecR();
  w.binary_projection = VecR();
  w.multi_projection = VecR();
  const MatR after = m.inference_predict(w, clips, 4);
  EXPECT_TRUE((before.array() == after.array()).all());
}

TEST(Model, UntrainedAccuracyIsChance) {
  // Observed accuracy of a random model against balanced labels should sit
  // inside the spread obtained by permuting those labels.
  const Model m(toy_spec(Regime::BinCe));
  const Weights w = m.init(7);
  const int n = 200;
  const MatR p = m.inference_predict(w, random_clips(m.spec(), n, 8), n);
  std::vector<int> pred(n), labels(n);
  for (int i = 0; i < n; ++i) {
    pred[static_cast<std::size_t>(i)] = p(i, 1) >= 0.5;
    labels[static_cast<std::size_t>(i)] = i % 2;
  }
  auto acc = [&](const std::vector<int>& l) {
    int ok = 0;
    for (int i = 0; i < n; ++i) ok += pred[static_cast<std::size_t>(i)] == l[static_cast<std::size_t>(i)];
    return double(ok) / n;
  };
  std::mt19937_64 rng(9);
  std::vector<double> null;
  for (int t = 0; t < 2000; ++t) {
    auto l = labels;
    std::shuffle(l.begin(), l.end(), rng);
    null.push_back(acc(l));
  }
  std::sort(null.begin(), null.end());
  const double observed = acc(labels);
  EXPECT_GE(observed, null[5]);
  EXPECT_LE(observed, null[1994]);
  EXPECT_NEAR(observed, 0.5, 3 * 0.5 / std::sqrt(double(n)));
}

TEST(Model, InitIsDeterministic) {
  const Model m(toy_spec(Regime::BinConMultiCon));
  EXPECT_EQ(m.init(11).encoder, m.init(11).encoder);
  EXPECT_NE(m.init(11).encoder, m.init(12).encoder);
  const KeyWeights k = m.key_weights_from(m.init(11));
  EXPECT_EQ(k.encoder, m.init(11).encoder);
}
