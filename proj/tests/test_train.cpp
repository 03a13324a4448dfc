#include "dfmtl/synth.hpp"
#include "dfmtl/train.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace dfmtl;

namespace {

constexpr int kFrames = 12;
constexpr int kSize = 16;
constexpr int kClip = 8;

// Small corpus shared by the run-level tests.
const fs::path& tiny_corpus() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dfmtl_test_train_corpus";
    fs::remove_all(d);
    synth::CorpusOptions o;
    o.videos_per_class = 8;
    o.frames = kFrames;
    o.height = kSize;
    o.width = kSize;
    synth::generate_synthetic_corpus(o, d);
    return d;
  }();
  return dir;
}

TrainConfig tiny_config(Regime r, const std::string& out) {
  TrainConfig c;
  c.regime = r;
  c.epochs = 2;
  c.batch_size = 4;
  c.learning_rate = 0.01;
  c.queue_capacity = 16;
  c.clip_length = kClip;
  c.eval_clips = 2;
  c.encoder.input = {kClip, kSize, kSize};
  c.encoder.channels = {4, 8, 8, 16};
  c.projection_dim = 8;
  c.manifest = (tiny_corpus() / "manifest.csv").string();
  c.held_out = "SynD";
  const fs::path o = fs::temp_directory_path() / ("dfmtl_test_train_" + out);
  fs::remove_all(o);
  c.output_dir = o.string();
  return c;
}

ModelSpec spec_for(const TrainConfig& c, int classes = 4) {
  return ModelSpec{c.encoder, c.regime, classes, static_cast<Eigen::Index>(c.projection_dim)};
}

Batch random_batch(const TrainConfig& c, std::uint64_t seed, std::vector<int> labels = {0, 1, 0, 2}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Batch b;
  b.size = static_cast<Eigen::Index>(labels.size());
  b.multi_labels = std::move(labels);
  b.clips = MatR(3, b.size * c.encoder.input.positions());
  for (Eigen::Index i = 0; i < b.clips.size(); ++i) b.clips.data()[i] = u(rng);
  return b;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Sgd, MomentumRule) {
  VecR p = VecR::Constant(2, 1.0), v = VecR::Zero(2);
  const VecR g = VecR::Constant(2, 0.5);
  sgd_momentum_step(p, v, g, 0.1, 0.9);
  EXPECT_NEAR(p[0], 0.95, 1e-15);
  sgd_momentum_step(p, v, g, 0.1, 0.9);
  EXPECT_NEAR(v[0], 0.95, 1e-15);
  EXPECT_NEAR(p[0], 0.95 - 0.095, 1e-15);
}

TEST(TrainStep, QueueGrowsAfterUse) {
  const TrainConfig c = tiny_config(Regime::BinConMultiCon, "queues");
  const Trainer t(c, spec_for(c));
  TrainState s = t.init_state();
  ASSERT_TRUE(s.binary_queue && s.multi_queue);
  const StepLosses first = t.train_step(s, random_batch(c, 1));
  EXPECT_FALSE(first.bin_con_active);  // nothing to contrast against yet
  EXPECT_EQ(s.binary_queue->size(), 4);
  EXPECT_EQ(s.multi_queue->size(), 4);
  const StepLosses second = t.train_step(s, random_batch(c, 2));
  EXPECT_TRUE(second.bin_con_active);
  EXPECT_TRUE(second.multi_con_active);
  EXPECT_EQ(s.binary_queue->size(), 8);
  for (int i = 0; i < 10; ++i) t.train_step(s, random_batch(c, 3 + i));
  EXPECT_EQ(s.binary_queue->size(), 16);
  EXPECT_EQ(s.binary_queue->snapshot_labels(), s.multi_queue->snapshot_labels());
}

TEST(TrainStep, QueuesOnlyInContrastiveRegimes) {
  for (Regime r : all_regimes()) {
    const TrainConfig c = tiny_config(r, "noqueue");
    const TrainState s = Trainer(c, spec_for(c)).init_state();
    const RoutingPlan p = regime_to_plan(r);
    EXPECT_EQ(s.binary_queue.has_value(), p.bin_con_to_encoder) << to_string(r);
    EXPECT_EQ(s.multi_queue.has_value(), p.multi_con_to_encoder) << to_string(r);
  }
}

TEST(TrainStep, EmaPathPurity) {
  const TrainConfig c = tiny_config(Regime::BinCeCon, "ema");
  const Trainer t(c, spec_for(c));
  TrainState s = t.init_state();
  for (int step = 0; step < 5; ++step) {
    const KeyWeights before = s.key;
    t.train_step(s, random_batch(c, 10 + step));
    const double m = c.ema_momentum;
    const VecR expect_enc = m * before.encoder + (1 - m) * s.weights.encoder;
    const VecR expect_proj = m * before.binary_projection + (1 - m) * s.weights.binary_projection;
    EXPECT_LT((s.key.encoder - expect_enc).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((s.key.binary_projection - expect_proj).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(TrainStep, CurrentBatchNeverInItsOwnPools) {
  // The contrastive loss of a step must equal the loss computed against the
  // queue as it was before the step.
  const TrainConfig c = tiny_config(Regime::BinCon, "ownkeys");
  const Trainer t(c, spec_for(c));
  TrainState s = t.init_state();
  t.train_step(s, random_batch(c, 20));
  for (int step = 0; step < 4; ++step) {
    const Batch b = random_batch(c, 21 + step, {1, 0, 1, 0});
    const KeyQueue<Real> snapshot = *s.binary_queue;
    const ForwardResult f = t.model().forward(s.weights, b.clips, b.size);
    const auto expect = batch_contrastive_loss<Real>(*f.binary_projection, b.multi_labels, snapshot,
                                                     Stream::binary, Temperature<Real>(c.temperature));
    const StepLosses l = t.train_step(s, b);
    EXPECT_EQ(l.bin_con, expect.loss);
    EXPECT_EQ(s.binary_queue->size(), std::min<Eigen::Index>(snapshot.size() + 4, 16));
  }
}

TEST(TrainStep, StopGradientWithContrastZeroed) {
  for (Regime r : {Regime::BinCon, Regime::BinConMultiCon}) {
    TrainConfig c = tiny_config(r, "stopgrad");
    c.loss_weights.bin_con = 0.0;
    c.loss_weights.multi_con = 0.0;
    const Trainer t(c, spec_for(c));
    TrainState s = t.init_state();
    const Weights start = s.weights;
    for (int step = 0; step < 100; ++step) t.train_step(s, random_batch(c, 100 + step));
    EXPECT_TRUE((s.weights.encoder.array() == start.encoder.array()).all()) << to_string(r);
    EXPECT_GT((s.weights.binary_classifier - start.binary_classifier).norm(), 0.0) << to_string(r);
  }
}

TEST(TrainStep, EnablingLossChangesEncoderUpdate) {
  TrainConfig off = tiny_config(Regime::BinCeCon, "routing");
  off.loss_weights.bin_con = 0.0;
  TrainConfig on = off;
  on.loss_weights.bin_con = 1.0;
  const Trainer to(off, spec_for(off)), tn(on, spec_for(on));
  TrainState so = to.init_state(), sn = tn.init_state();
  const Batch warm = random_batch(off, 1);
  to.train_step(so, warm);
  tn.train_step(sn, warm);
  // first step: queue was empty, so both runs are identical
  EXPECT_EQ(so.weights.encoder, sn.weights.encoder);
  const Batch b = random_batch(off, 2, {1, 0, 1, 0});
  to.train_step(so, b);
  tn.train_step(sn, b);
  EXPECT_GT((so.weights.encoder - sn.weights.encoder).norm(), 0.0);
}

TEST(TrainStep, NonFiniteLossThrows) {
  TrainConfig c = tiny_config(Regime::BinCe, "nan");
  const Trainer t(c, spec_for(c));
  TrainState s = t.init_state();
  Batch b = random_batch(c, 1);
  b.clips(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.train_step(s, b), TrainingError);
}

TEST(Run, WritesReportAndCheckpoints) {
  const TrainConfig c = tiny_config(Regime::BinCeMultiCe, "run");
  const RunReport r = run(c);
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_TRUE(r.epochs[0].multi_ce.has_value());
  EXPECT_FALSE(r.epochs[0].bin_con.has_value());
  for (const char* f : {"run_report.jsonl", "last.ckpt", "best.ckpt", "config.json"})
    EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / f)) << f;
  std::ifstream in(fs::path(c.output_dir) / "run_report.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<int>(), ++lines);
    EXPECT_TRUE(j.at("losses").contains("bin_ce"));
  }
  EXPECT_EQ(lines, 2);
  const Archive a = Archive::load(fs::path(c.output_dir) / "last.ckpt");
  EXPECT_EQ(a.meta.at("regime"), "BIN_CE_MULTI_CE");
  EXPECT_EQ(a.meta.at("held_out"), "SynD");
  EXPECT_EQ(a.meta.at("label_map").at("SynC"), 3);
  EXPECT_EQ(a.meta.at("config_hash"), config_hash(c));
}

TEST(Run, ZeroEpochsEvaluatesInitOnly) {
  TrainConfig c = tiny_config(Regime::BinCe, "zero");
  c.epochs = 0;
  const RunReport r = run(c);
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs[0].epoch, 0);
  EXPECT_EQ(r.epochs[0].steps, 0);
  EXPECT_FALSE(r.epochs[0].bin_ce.has_value());
}

TEST(Run, FixedSeedIsBitwiseReproducible) {
  const TrainConfig a = tiny_config(Regime::BinConMultiCon, "repro_a");
  TrainConfig b = a;
  b.output_dir = (fs::temp_directory_path() / "dfmtl_test_train_repro_b").string();
  fs::remove_all(b.output_dir);
  run(a);
  run(b);
  EXPECT_EQ(slurp(fs::path(a.output_dir) / "run_report.jsonl"), slurp(fs::path(b.output_dir) / "run_report.jsonl"));
  const Archive ca = Archive::load(fs::path(a.output_dir) / "last.ckpt");
  const Archive cb = Archive::load(fs::path(b.output_dir) / "last.ckpt");
  EXPECT_EQ(ca.array("weights/encoder"), cb.array("weights/encoder"));
  EXPECT_EQ(ca.array("queue/multi/keys"), cb.array("queue/multi/keys"));
}

TEST(Run, ResumeMatchesUninterrupted) {
  for (Regime r : {Regime::BinCe, Regime::BinConMultiCon}) {
    TrainConfig c = tiny_config(r, "resume_full");
    c.epochs = 3;
    run(c);
    const std::string full = slurp(fs::path(c.output_dir) / "run_report.jsonl");
    const Archive full_ckpt = Archive::load(fs::path(c.output_dir) / "last.ckpt");

    TrainConfig d = c;
    d.output_dir = (fs::temp_directory_path() / "dfmtl_test_train_resume_part").string();
    fs::remove_all(d.output_dir);
    RunOptions stop;
    stop.stop_after_epochs = 1;
    run(d, stop);
    RunOptions resume;
    resume.resume = fs::path(d.output_dir) / "last.ckpt";
    const RunReport rr = run(d, resume);
    EXPECT_EQ(rr.epochs.size(), 3u);
    EXPECT_EQ(slurp(fs::path(d.output_dir) / "run_report.jsonl"), full) << to_string(r);
    const Archive part_ckpt = Archive::load(fs::path(d.output_dir) / "last.ckpt");
    for (const auto& [name, arr] : full_ckpt.arrays) EXPECT_EQ(part_ckpt.array(name), arr) << name;
  }
}

TEST(Run, ResumeRejectsDifferentConfig) {
  TrainConfig c = tiny_config(Regime::BinCe, "resume_mismatch");
  c.epochs = 1;
  run(c);
  TrainConfig d = c;
  d.learning_rate = 0.5;
  RunOptions resume;
  resume.resume = fs::path(c.output_dir) / "last.ckpt";
  EXPECT_THROW(run(d, resume), ConfigError);
}

TEST(Run, DivergenceLeavesDiagnostic) {
  TrainConfig c = tiny_config(Regime::BinCe, "diverge");
  c.learning_rate = 1e200;
  EXPECT_THROW(run(c), TrainingError);
  EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / "diagnostic.json"));
}

TEST(Run, InitFromCheckpointLoadsEncoder) {
  const TrainConfig src = tiny_config(Regime::BinCe, "init_src");
  TrainConfig one = src;
  one.epochs = 1;
  run(one);
  TrainConfig c = tiny_config(Regime::BinCeMultiCe, "init_dst");
  c.init = InitSource::checkpoint;
  c.init_checkpoint = (fs::path(one.output_dir) / "last.ckpt").string();
  const TrainState s = Trainer(c, spec_for(c)).init_state();
  EXPECT_EQ(s.weights.encoder, Archive::load(c.init_checkpoint).array("weights/encoder"));
  TrainConfig wrong = c;
  wrong.encoder.channels = {4, 8, 8, 32};
  EXPECT_THROW(Trainer(wrong, spec_for(wrong)).init_state(), ConfigError);
}

TEST(Checkpoint, InferenceNeedsOnlyEncoderAndBinaryHead) {
  const TrainConfig c = tiny_config(Regime::BinCeMultiCe, "infer");
  TrainConfig one = c;
  one.epochs = 1;
  run(one);
  Archive a = Archive::load(fs::path(one.output_dir) / "last.ckpt");
  const LoadedModel full = load_for_inference(fs::path(one.output_dir) / "last.ckpt");
  for (auto it = a.arrays.begin(); it != a.arrays.end();) {
    if (it->first != "weights/encoder" && it->first != "weights/binary_classifier")
      it = a.arrays.erase(it);
    else
      ++it;
  }
  const fs::path slim = fs::path(one.output_dir) / "slim.ckpt";
  a.save(slim);
  const LoadedModel lm = load_for_inference(slim);
  const Batch b = random_batch(c, 5);
  const MatR p1 = full.model.inference_predict(full.weights, b.clips, b.size);
  const MatR p2 = lm.model.inference_predict(lm.weights, b.clips, b.size);
  EXPECT_TRUE((p1.array() == p2.array()).all());
}

TEST(Smoke, TwoEpochsDecreaseCrossEntropyForSomeSeed) {
  int monotone = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig c = tiny_config(Regime::BinCe, "smoke");
    c.seed = seed;
    c.clips_per_video = 2;
    const RunReport r = run(c);
    ASSERT_EQ(r.epochs.size(), 2u);
    monotone += *r.epochs[1].bin_ce <= *r.epochs[0].bin_ce;
  }
  EXPECT_GE(monotone, 1);
}
