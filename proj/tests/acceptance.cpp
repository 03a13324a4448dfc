// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
// usage: acceptance <work_dir> [readme]

#include "dfmtl/eval.hpp"
#include "dfmtl/moco.hpp"
#include "dfmtl/selfcheck.hpp"
#include "dfmtl/synth.hpp"
#include "dfmtl/train.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace dfmtl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

VecR unit(std::initializer_list<double> v) {
  VecR x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) x[i++] = e;
  return x;
}

MatR columns(std::initializer_list<VecR> cs) {
  MatR m(cs.begin()->size(), static_cast<Eigen::Index>(cs.size()));
  Eigen::Index j = 0;
  for (const auto& c : cs) m.col(j++) = c;
  return m;
}

Outcome analytic_values() {
  const VecR a = unit({1, 0});
  const MatR same = columns({unit({1, 0}), unit({1, 0})});
  const MatR orth = columns({unit({1, 0}), unit({0, 1})});
  const PoolIndex pn{{0}, {1}};
  struct Case {
    const char* name;
    double got, want;
  };
  const Case cases[] = {
      {"ln2", multi_instance_info_nce<Real>(a, same, pn, Temperature(1.0)).loss, std::log(2.0)},
      {"ln(1+e^-1)", multi_instance_info_nce<Real>(a, orth, pn, Temperature(1.0)).loss, std::log1p(std::exp(-1.0))},
      {"0", multi_instance_info_nce<Real>(a, columns({unit({1, 0})}), {{0}, {}}, Temperature(1.0)).loss, 0.0},
      {"ln(1+e^-2)", multi_instance_info_nce<Real>(a, orth, pn, Temperature(0.5)).loss, std::log1p(std::exp(-2.0))},
  };
  Outcome o{true, ""};
  for (const auto& c : cases) {
    const double err = std::abs(c.got - c.want);
    o.pass = o.pass && err <= 1e-6;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + c.name + "=" + fmt("%.6f", c.got);
  }
  return o;
}

Outcome gradient_sweep() {
  const auto results = gradient_checks(analytic_anchor_gradient(), 5);
  double worst = 0.0;
  int failed = 0;
  for (const auto& r : results) {
    worst = std::max(worst, r.error);
    if (!r.pass) ++failed;
  }
  return {results.size() == 45 && failed == 0,
          std::to_string(results.size()) + " cases, worst relative error " + fmt("%.2e", worst)};
}

TrainConfig toy_config(Regime r) {
  TrainConfig c;
  c.regime = r;
  c.batch_size = 4;
  c.learning_rate = 0.01;
  c.queue_capacity = 16;
  c.clip_length = 8;
  c.encoder.input = {8, 16, 16};
  c.encoder.channels = {4, 8, 8, 16};
  c.projection_dim = 8;
  return c;
}

ModelSpec spec_for(const TrainConfig& c) {
  return ModelSpec{c.encoder, c.regime, 4, static_cast<Eigen::Index>(c.projection_dim)};
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

Outcome stop_gradient() {
  Outcome o{true, ""};
  for (Regime r : {Regime::BinCon, Regime::BinConMultiCon}) {
    TrainConfig c = toy_config(r);
    c.loss_weights.bin_con = 0.0;
    c.loss_weights.multi_con = 0.0;
    const Trainer t(c, spec_for(c));
    TrainState s = t.init_state();
    const Weights start = s.weights;
    for (int step = 0; step < 100; ++step) t.train_step(s, random_batch(c, 100 + step));
    const bool frozen = (s.weights.encoder.array() == start.encoder.array()).all();
    const double moved = (s.weights.binary_classifier - start.binary_classifier).norm();
    o.pass = o.pass && frozen && moved > 0.0;
    o.detail += std::string(o.detail.empty() ? "" : "; ") + to_string(r) + ": encoder " +
                (frozen ? "bitwise unchanged" : "CHANGED") + ", classifier moved " + fmt("%.3e", moved);
  }
  return o;
}

Outcome ema_and_queue() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n;

  double ema_worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    VecR key(64), main(64);
    for (Eigen::Index i = 0; i < 64; ++i) {
      key[i] = n(rng);
      main[i] = n(rng);
    }
    const double m = std::uniform_real_distribution<double>(0, 1)(rng);
    VecR k = key;
    ema_update(k, main, m);
    for (Eigen::Index i = 0; i < 64; ++i) ema_worst = std::max(ema_worst, std::abs(k[i] - (m * key[i] + (1 - m) * main[i])));
  }

  int fifo_cases = 0, fifo_bad = 0;
  for (; fifo_cases < 1000; ++fifo_cases) {
    const int dim = 1 + static_cast<int>(rng() % 4), capacity = 1 + static_cast<int>(rng() % 12);
    KeyQueue<double> q(dim, capacity);
    std::deque<std::pair<VecR, int>> ref;
    double counter = 0;
    const int ops = static_cast<int>(rng() % 40);
    for (int op = 0; op < ops; ++op) {
      const int b = 1 + static_cast<int>(rng() % 7);
      MatR batch(dim, b);
      std::vector<int> labels(static_cast<std::size_t>(b));
      for (int j = 0; j < b; ++j) {
        batch.col(j) = VecR::Constant(dim, counter++);
        labels[static_cast<std::size_t>(j)] = static_cast<int>(rng() % 5);
        ref.emplace_back(batch.col(j), labels[static_cast<std::size_t>(j)]);
        if (static_cast<int>(ref.size()) > capacity) ref.pop_front();
      }
      q.enqueue(batch, labels);
    }
    bool ok = q.size() == static_cast<Eigen::Index>(ref.size());
    const MatR keys = q.keys();
    const auto labels = q.snapshot_labels();
    for (std::size_t i = 0; ok && i < ref.size(); ++i)
      ok = keys.col(static_cast<Eigen::Index>(i)) == ref[i].first && labels[i] == ref[i].second;
    if (!ok) ++fifo_bad;
  }

  // Own-batch exclusion: each step's contrastive loss equals the loss against
  // the queue snapshot taken before the step, and the batch's keys land at the tail.
  int own_bad = 0, own_steps = 0;
  for (Regime r : {Regime::BinCon, Regime::BinCeCon, Regime::BinConMultiCon}) {
    const TrainConfig c = toy_config(r);
    const Trainer t(c, spec_for(c));
    TrainState s = t.init_state();
    t.train_step(s, random_batch(c, 1));
    for (int step = 0; step < 6; ++step, ++own_steps) {
      const Batch b = random_batch(c, 50 + step, {1, 0, 2, 0});
      const KeyQueue<Real> snap_b = *s.binary_queue;
      const std::optional<KeyQueue<Real>> snap_m = s.multi_queue;
      const KeyWeights key_before = s.key;  // keys come from the pre-update key path
      const ForwardResult f = t.model().forward(s.weights, b.clips, b.size);
      const Temperature<Real> tau(c.temperature);
      const auto want_b = batch_contrastive_loss<Real>(*f.binary_projection, b.multi_labels, snap_b, Stream::binary, tau);
      const StepLosses l = t.train_step(s, b);
      bool ok = l.bin_con == want_b.loss;
      if (snap_m) {
        const auto want_m =
            batch_contrastive_loss<Real>(*f.multi_projection, b.multi_labels, *snap_m, Stream::multiclass, tau);
        ok = ok && l.multi_con == want_m.loss;
      }
      const KeyOutputs k = t.model().key_forward(key_before, b.clips, b.size);
      const MatR tail = s.binary_queue->keys().rightCols(b.size);
      ok = ok && (tail - *k.binary).cwiseAbs().maxCoeff() <= 1e-12;
      if (!ok) ++own_bad;
    }
  }

  return {ema_worst <= 1e-10 && fifo_bad == 0 && own_bad == 0,
          "EMA max deviation " + fmt("%.1e", ema_worst) + "; FIFO " + std::to_string(fifo_cases - fifo_bad) + "/" +
              std::to_string(fifo_cases) + " cases; own-batch exclusion " + std::to_string(own_steps - own_bad) + "/" +
              std::to_string(own_steps) + " steps"};
}

Outcome split_counts() {
  Manifest m;
  for (const auto& method : {"Original", "DF", "F2F", "FS", "NT"}) {
    int i = 0;
    for (auto [role, n] : {std::pair{SplitRole::train, 720}, {SplitRole::val, 140}, {SplitRole::test, 140}})
      for (int k = 0; k < n; ++k, ++i) m.rows.push_back({std::string(method) + "_" + std::to_string(i), "f", method, role});
  }
  bool ok = true;
  for (const auto& method : face_forensics_methods())
    ok = ok && m.count(method, SplitRole::train) == 720 && m.count(method, SplitRole::val) == 140 &&
         m.count(method, SplitRole::test) == 140;
  std::string detail = "720/140/140 per method;";
  for (const auto& held : face_forensics_methods()) {
    const SplitSpec s = build_split(m, held);
    ok = ok && s.train.size() == 2880 && s.test.size() == 280;
    detail += " " + held + " train " + std::to_string(s.train.size()) + " test " + std::to_string(s.test.size());
  }
  return {ok, detail};
}

Outcome published_average() {
  const auto rep = build_report({{"F2F, FS, NT", "DF", "Binary CE", 0.8008},
                                 {"DF, FS, NT", "F2F", "Binary CE", 0.7344},
                                 {"DF, F2F, NT", "FS", "Binary CE", 0.7930},
                                 {"DF, F2F, FS", "NT", "Binary CE", 0.7578}});
  const double avg = rep.averages.empty() ? -1.0 : 100.0 * rep.averages[0].second;
  return {rep.averages.size() == 1 && std::abs(avg - 77.15) <= 0.01,
          "80.08, 73.44, 79.30, 75.78 -> " + fmt("%.4f", avg) + " (published 77.15)"};
}

Outcome desk_run(const fs::path& work) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  fs::remove_all(work);
  synth::CorpusOptions o;  // seed 7, 20 per class, 32 frames, 32x32
  synth::generate_synthetic_corpus(o, work / "corpus");

  const Manifest manifest = load_manifest(work / "corpus" / "manifest.csv");
  const std::string held_out = "SynA";
  const SplitSpec split = build_split(manifest, held_out);

  std::vector<ReportRow> rows;
  double bin_ce_val = -1.0;
  std::ostringstream detail;
  for (Regime r : all_regimes()) {
    TrainConfig c;
    c.regime = r;
    c.epochs = 2;
    c.batch_size = 8;
    c.learning_rate = 0.003;
    c.clips_per_video = 24;
    c.clip_length = 16;
    c.manifest = (work / "corpus" / "manifest.csv").string();
    c.held_out = held_out;
    c.output_dir = (work / "runs" / to_string(r)).string();
    const auto t = clock::now();
    const RunReport rep = run(c);
    if (r == Regime::BinCe) bin_ce_val = rep.best_val_accuracy;

    const LoadedModel lm = load_for_inference(rep.output_dir / "best.ckpt");
    VideoStore store;
    const EvalResult ev = evaluate(lm.model, lm.weights, split.test, store, c.clip_length, c.eval_clips);
    rows.push_back({join_methods(split.train_methods), held_out, c.run_label(), ev.accuracy});
    detail << "\n    " << to_string(r) << ": val " << fmt("%.3f", rep.best_val_accuracy) << ", held-out "
           << held_out << " " << fmt("%.3f", ev.accuracy) << " over " << ev.scores.size() << " videos, "
           << fmt("%.0f", std::chrono::duration<double>(clock::now() - t).count()) << " s";
  }
  const CrossManipReport report = build_report(rows);
  emit_report(report, work / "report");
  const double minutes = std::chrono::duration<double>(clock::now() - t0).count() / 60.0;

  const bool ok = bin_ce_val >= 0.90 && rows.size() == all_regimes().size() && minutes < 15.0;
  std::ostringstream head;
  head << "BIN_CE val " << fmt("%.3f", bin_ce_val) << " (>= 0.90), " << rows.size() << " held-out rows, "
       << fmt("%.1f", minutes) << " min (< 15)";
  std::cout << "\n" << format_report(report) << "\n";
  return {ok, head.str() + detail.str()};
}

Outcome reproducibility_statement(const fs::path& readme) {
  std::ifstream in(readme);
  if (!in) return {false, "cannot read " + readme.string()};
  std::ostringstream os;
  os << in.rdbuf();
  const std::string text = os.str();
  const std::string marker = "## Published numbers are not reproduced";
  const bool has = text.find(marker) != std::string::npos;
  return {has, has ? "README section '" + marker.substr(3) + "' present" : "README lacks '" + marker + "'"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "dfmtl_acceptance";
  const fs::path readme = argc > 2 ? fs::path(argv[2]) : fs::path("README.md");
  spdlog::set_level(spdlog::level::warn);

  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"1 analytic Info-NCE values", analytic_values},
      {"2 finite-difference gradient sweep", gradient_sweep},
      {"3 stop-gradient with contrast zeroed", stop_gradient},
      {"4 EMA rule, FIFO queue, own-batch exclusion", ema_and_queue},
      {"5 split oracle", split_counts},
      {"6 published average", published_average},
      {"7 end-to-end desk run", [&] { return desk_run(work); }},
      {"8 non-reproducibility statement", [&] { return reproducibility_statement(readme); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << "\n";
  return failures == 0 ? 0 : 1;
}
