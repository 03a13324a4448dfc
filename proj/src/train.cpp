#include "dfmtl/train.hpp"

#include "dfmtl/losses.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dfmtl {

namespace {

struct Component {
  const char* name;
  VecR Weights::*member;
};

constexpr Component kComponents[] = {
    {"encoder", &Weights::encoder},
    {"binary_classifier", &Weights::binary_classifier},
    {"multi_classifier", &Weights::multi_classifier},
    {"binary_projection", &Weights::binary_projection},
    {"multi_projection", &Weights::multi_projection},
};

struct KeyComponent {
  const char* name;
  VecR KeyWeights::*member;
};

constexpr KeyComponent kKeyComponents[] = {
    {"encoder", &KeyWeights::encoder},
    {"binary_projection", &KeyWeights::binary_projection},
    {"multi_projection", &KeyWeights::multi_projection},
};

bool finite(Real v) { return std::isfinite(v); }

void load_encoder_weights(const fs::path& path, VecR& encoder) {
  const Archive a = Archive::load(path);
  const VecR& src = a.array("weights/encoder");
  if (src.size() != encoder.size())
    throw ConfigError("encoder weights in '" + path.string() + "' have " + std::to_string(src.size()) +
                      " parameters, the configured encoder needs " + std::to_string(encoder.size()));
  encoder = src;
}

std::vector<int> binary_labels(const std::vector<int>& multi) {
  std::vector<int> out(multi.size());
  for (std::size_t i = 0; i < multi.size(); ++i) out[i] = collapse_to_binary(multi[i]);
  return out;
}

}  // namespace

void sgd_momentum_step(VecR& params, VecR& velocity, const VecR& grad, Real lr, Real momentum) {
  require(params.size() == grad.size() && velocity.size() == grad.size(), "sgd step: size mismatch");
  velocity = momentum * velocity + grad;
  params -= lr * velocity;
}

Trainer::Trainer(const TrainConfig& config, ModelSpec spec) : config_(config), model_(std::move(spec)) {}

TrainState Trainer::init_state() const {
  TrainState s;
  s.weights = model_.init(derive_seed(config_.seed, 1));
  if (model_.spec().encoder.architecture == "external-checkpoint")
    load_encoder_weights(model_.spec().encoder.checkpoint, s.weights.encoder);
  if (config_.init == InitSource::checkpoint) load_encoder_weights(config_.init_checkpoint, s.weights.encoder);
  s.velocity = model_.zero_like();
  s.key = model_.key_weights_from(s.weights);
  const auto& plan = model_.plan();
  if (plan.bin_con_to_encoder) s.binary_queue.emplace(model_.spec().projection_dim, config_.queue_capacity);
  if (plan.multi_con_to_encoder) s.multi_queue.emplace(model_.spec().projection_dim, config_.queue_capacity);
  return s;
}

StepLosses Trainer::train_step(TrainState& state, const Batch& batch) const {
  const RoutingPlan& plan = model_.plan();
  const LossWeights& lw = config_.loss_weights;
  const Temperature<Real> tau(config_.temperature);

  // (1) query path
  const ForwardResult fwd = model_.forward(state.weights, batch.clips, batch.size);
  // (2) key path, no gradient
  const KeyOutputs keys =
      plan.any_contrastive() ? model_.key_forward(state.key, batch.clips, batch.size) : KeyOutputs{};

  // (3)+(4) pools and routed losses
  StepLosses L;
  HeadGradients hg;
  const auto bin_targets = binary_labels(batch.multi_labels);
  {
    auto ce = batch_cross_entropy<Real>(fwd.binary_logits, bin_targets);
    L.bin_ce = ce.loss;
    hg.binary_logits = plan.bin_ce_to_encoder ? MatR(lw.bin_ce * ce.grad) : ce.grad;
  }
  if (plan.multi_ce_to_encoder) {
    auto ce = batch_cross_entropy<Real>(*fwd.multi_logits, batch.multi_labels);
    L.multi_ce = ce.loss;
    hg.multi_logits = lw.multi_ce * ce.grad;
  }
  if (plan.bin_con_to_encoder && !state.binary_queue->empty()) {
    auto r = batch_contrastive_loss<Real>(*fwd.binary_projection, batch.multi_labels, *state.binary_queue,
                                          Stream::binary, tau);
    L.bin_con = r.loss;
    L.bin_con_active = r.used > 0;
    hg.binary_projection = lw.bin_con * r.grad;
  }
  if (plan.multi_con_to_encoder && !state.multi_queue->empty()) {
    auto r = batch_contrastive_loss<Real>(*fwd.multi_projection, batch.multi_labels, *state.multi_queue,
                                          Stream::multiclass, tau);
    L.multi_con = r.loss;
    L.multi_con_active = r.used > 0;
    hg.multi_projection = lw.multi_con * r.grad;
  }
  L.total = total_loss(plan, {L.bin_ce, L.multi_ce, L.bin_con, L.multi_con}, lw);
  if (!finite(L.bin_ce) || !finite(L.multi_ce) || !finite(L.bin_con) || !finite(L.multi_con) ||
      !finite(L.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << ": bin_ce=" << L.bin_ce << " multi_ce=" << L.multi_ce
       << " bin_con=" << L.bin_con << " multi_con=" << L.multi_con;
    throw TrainingError(os.str());
  }

  // (5) optimiser steps
  const Gradients g = model_.backward(state.weights, fwd, hg);
  const Real lr = config_.learning_rate, mu = config_.sgd_momentum;
  sgd_momentum_step(state.weights.encoder, state.velocity.encoder, g.encoder, lr, mu);
  if (plan.multi_ce_to_encoder)
    sgd_momentum_step(state.weights.multi_classifier, state.velocity.multi_classifier, g.multi_classifier, lr, mu);
  if (plan.bin_con_to_encoder)
    sgd_momentum_step(state.weights.binary_projection, state.velocity.binary_projection, g.binary_projection, lr,
                      mu);
  if (plan.multi_con_to_encoder)
    sgd_momentum_step(state.weights.multi_projection, state.velocity.multi_projection, g.multi_projection, lr, mu);
  // Routed binary classifier, or the detached monitor: either way it learns
  // from its own CE; only the routed one fed the encoder above.
  sgd_momentum_step(state.weights.binary_classifier, state.velocity.binary_classifier, g.binary_classifier, lr,
                    mu);

  // (6) momentum path
  if (plan.any_contrastive()) {
    const Real m = config_.ema_momentum;
    ema_update(state.key.encoder, state.weights.encoder, m);
    if (plan.bin_con_to_encoder) ema_update(state.key.binary_projection, state.weights.binary_projection, m);
    if (plan.multi_con_to_encoder) ema_update(state.key.multi_projection, state.weights.multi_projection, m);
  }
  // (7) this batch's keys become available to later batches only
  if (keys.binary) state.binary_queue->enqueue(*keys.binary, batch.multi_labels);
  if (keys.multi) state.multi_queue->enqueue(*keys.multi, batch.multi_labels);
  ++state.step;
  return L;
}

json to_json(const EpochRecord& r) {
  json losses = json::object();
  auto put = [&](const char* k, const std::optional<Real>& v) {
    if (v) losses[k] = *v;
  };
  put("bin_ce", r.bin_ce);
  put("multi_ce", r.multi_ce);
  put("bin_con", r.bin_con);
  put("multi_con", r.multi_con);
  put("total", r.total);
  return json{{"epoch", r.epoch}, {"losses", losses}, {"val_accuracy", r.val_accuracy}, {"steps", r.steps}};
}

namespace {

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.val_accuracy = j.at("val_accuracy").get<Real>();
  r.steps = j.at("steps").get<int>();
  const json& l = j.at("losses");
  auto get = [&](const char* k, std::optional<Real>& v) {
    if (l.contains(k)) v = l.at(k).get<Real>();
  };
  get("bin_ce", r.bin_ce);
  get("multi_ce", r.multi_ce);
  get("bin_con", r.bin_con);
  get("multi_con", r.multi_con);
  get("total", r.total);
  return r;
}

}  // namespace

json model_spec_to_json(const ModelSpec& s) {
  json channels = json::array();
  for (auto c : s.encoder.channels) channels.push_back(c);
  return json{{"architecture", s.encoder.architecture},
              {"frames", s.encoder.input.frames},
              {"height", s.encoder.input.height},
              {"width", s.encoder.input.width},
              {"channels", channels},
              {"regime", to_string(s.regime)},
              {"multi_classes", s.multi_classes},
              {"projection_dim", s.projection_dim}};
}

ModelSpec model_spec_from_meta(const json& meta) {
  try {
    const json& m = meta.at("model");
    ModelSpec s;
    s.encoder.architecture = m.at("architecture").get<std::string>();
    s.encoder.input = {m.at("frames").get<Eigen::Index>(), m.at("height").get<Eigen::Index>(),
                       m.at("width").get<Eigen::Index>()};
    s.encoder.channels = m.at("channels").get<std::vector<Eigen::Index>>();
    s.regime = parse_regime(m.at("regime").get<std::string>());
    s.multi_classes = m.at("multi_classes").get<int>();
    s.projection_dim = m.at("projection_dim").get<Eigen::Index>();
    return s;
  } catch (const json::exception& e) {
    throw IngestionError(std::string("checkpoint model metadata is incomplete: ") + e.what());
  }
}

Archive make_checkpoint(const Trainer& trainer, const TrainState& state, json meta) {
  Archive a;
  a.meta = std::move(meta);
  a.meta["format"] = 1;
  a.meta["model"] = model_spec_to_json(trainer.model().spec());
  a.meta["step"] = state.step;
  for (const auto& c : kComponents) {
    a.arrays["weights/" + std::string(c.name)] = state.weights.*c.member;
    a.arrays["velocity/" + std::string(c.name)] = state.velocity.*c.member;
  }
  for (const auto& c : kKeyComponents) a.arrays["key/" + std::string(c.name)] = state.key.*c.member;
  auto put_queue = [&](const char* name, const std::optional<KeyQueue<Real>>& q) {
    if (!q) return;
    const MatR keys = q->keys();
    a.arrays["queue/" + std::string(name) + "/keys"] = keys.reshaped();
    const auto labels = q->snapshot_labels();
    VecR l(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) l[static_cast<Eigen::Index>(i)] = labels[i];
    a.arrays["queue/" + std::string(name) + "/labels"] = l;
    a.meta["queues"][name] = {{"capacity", q->capacity()}, {"dim", q->dim()}, {"size", q->size()}};
  };
  put_queue("binary", state.binary_queue);
  put_queue("multi", state.multi_queue);
  return a;
}

TrainState restore_state(const Trainer& trainer, const Archive& a) {
  TrainState s = trainer.init_state();
  const Weights zero = trainer.model().zero_like();
  auto take = [&](const std::string& name, VecR& dst, Eigen::Index expect) {
    const VecR& src = a.array(name);
    if (src.size() != expect) throw IngestionError("checkpoint array '" + name + "' has the wrong size");
    dst = src;
  };
  for (const auto& c : kComponents) {
    take("weights/" + std::string(c.name), s.weights.*c.member, (zero.*c.member).size());
    take("velocity/" + std::string(c.name), s.velocity.*c.member, (zero.*c.member).size());
  }
  for (const auto& c : kKeyComponents) take("key/" + std::string(c.name), s.key.*c.member, (s.key.*c.member).size());
  auto get_queue = [&](const char* name, std::optional<KeyQueue<Real>>& q) {
    if (!q) return;
    q->clear();
    const std::string base = "queue/" + std::string(name);
    if (!a.has(base + "/keys")) return;
    const VecR& labels = a.array(base + "/labels");
    const VecR& flat = a.array(base + "/keys");
    if (flat.size() != labels.size() * q->dim()) throw IngestionError("checkpoint queue '" + base + "' is corrupt");
    const MatR keys = flat.reshaped(q->dim(), labels.size());
    for (Eigen::Index i = 0; i < labels.size(); ++i) q->push(keys.col(i), static_cast<int>(labels[i]));
  };
  get_queue("binary", s.binary_queue);
  get_queue("multi", s.multi_queue);
  s.step = a.meta.value("step", std::int64_t{0});
  return s;
}

LoadedModel load_for_inference(const fs::path& checkpoint) {
  Archive a = Archive::load(checkpoint);
  Model model(model_spec_from_meta(a.meta));
  Weights w = model.zero_like();
  for (const char* required : {"encoder", "binary_classifier"}) {
    const std::string name = "weights/" + std::string(required);
    const VecR& src = a.array(name);
    VecR& dst = std::string(required) == "encoder" ? w.encoder : w.binary_classifier;
    if (src.size() != dst.size()) throw IngestionError("checkpoint array '" + name + "' has the wrong size");
    dst = src;
  }
  return {std::move(model), std::move(w), std::move(a.meta)};
}

namespace {

Batch make_batch(const std::vector<ManifestRow>& rows, const std::vector<std::size_t>& idx,
                 const LabelMap& labels, VideoStore& store, int clip_length, std::mt19937_64& rng) {
  std::vector<LabeledClip> clips;
  for (std::size_t i : idx) {
    const ManifestRow& row = rows[i];
    auto c = sample_clip(store.get(row.frames_dir), clip_length, SampleMode::random, 1,
                         labels.multi_label(row.method), rng);
    if (!c.empty()) clips.push_back(std::move(c.front()));
  }
  Batch b;
  std::vector<const LabeledClip*> ptrs;
  for (const auto& c : clips) {
    ptrs.push_back(&c);
    b.multi_labels.push_back(c.multi_label);
  }
  b.size = static_cast<Eigen::Index>(clips.size());
  b.clips = stack_clips(ptrs);
  return b;
}

void write_report_file(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  for (const auto& r : history) out << to_json(r).dump() << '\n';
}

}  // namespace

RunReport run(const TrainConfig& config, const RunOptions& options) {
  const fs::path out_dir = resolve_output_path(config.output_dir);
  fs::create_directories(out_dir);

  const Manifest manifest = load_manifest(config.manifest);
  const SplitSpec split = build_split(manifest, config.held_out);
  const LabelMap labels = assign_multi_labels(split);
  ModelSpec spec{config.encoder, config.regime, std::max(labels.classes(), 2),
                 static_cast<Eigen::Index>(config.projection_dim)};
  spec.encoder.input.frames = config.clip_length;
  const Trainer trainer(config, spec);
  const std::string hash = config_hash(config);

  RunReport report;
  report.config_hash = hash;
  report.output_dir = out_dir;
  TrainState state;
  int start_epoch = 0;

  if (options.resume) {
    const Archive a = Archive::load(*options.resume);
    if (a.meta.value("config_hash", std::string{}) != hash)
      throw ConfigError("checkpoint '" + options.resume->string() + "' was written by a different config");
    state = restore_state(trainer, a);
    start_epoch = a.meta.at("epochs_completed").get<int>();
    for (const auto& j : a.meta.at("history")) report.epochs.push_back(record_from_json(j));
    report.best_val_accuracy = a.meta.at("best_val_accuracy").get<Real>();
    report.best_epoch = a.meta.at("best_epoch").get<int>();
    spdlog::info("resuming {} from epoch {}", to_string(config.regime), start_epoch);
  } else {
    state = trainer.init_state();
    std::ofstream(out_dir / "config.json") << to_json(config).dump(2) << '\n';
  }

  VideoStore store;
  json label_ids = json::object();
  for (const auto& [m, id] : labels.ids()) label_ids[m] = id;

  auto meta_for = [&](int epochs_completed, const std::string& rng_state) {
    json history = json::array();
    for (const auto& r : report.epochs) history.push_back(to_json(r));
    return json{{"regime", to_string(config.regime)},
                {"init", to_string(config.init)},
                {"label", config.run_label()},
                {"config", to_json(config)},
                {"config_hash", hash},
                {"held_out", split.held_out_method},
                {"train_methods", split.train_methods},
                {"label_map", label_ids},
                {"epochs_completed", epochs_completed},
                {"history", history},
                {"best_val_accuracy", report.best_val_accuracy},
                {"best_epoch", report.best_epoch},
                {"rng_state", rng_state}};
  };
  auto evaluate_val = [&]() -> Real {
    if (split.val.empty()) return 0.0;
    return evaluate(trainer.model(), state.weights, split.val, store, config.clip_length, config.eval_clips)
        .accuracy;
  };
  auto save = [&](int epochs_completed, const std::string& rng_state, bool improved) {
    const Archive a = make_checkpoint(trainer, state, meta_for(epochs_completed, rng_state));
    a.save(out_dir / "last.ckpt");
    if (improved) a.save(out_dir / "best.ckpt");
    write_report_file(out_dir / "run_report.jsonl", report.epochs);
  };

  if (config.epochs == 0) {
    EpochRecord r;
    r.val_accuracy = evaluate_val();
    report.epochs.push_back(r);
    report.best_val_accuracy = r.val_accuracy;
    report.best_epoch = 0;
    save(0, "", true);
    return report;
  }

  const RoutingPlan& plan = trainer.model().plan();
  for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    const auto batches = balanced_batches(split.train, static_cast<std::size_t>(config.batch_size),
                                          config.clips_per_video, rng);
    Real sum_bin_ce = 0, sum_multi_ce = 0, sum_bin_con = 0, sum_multi_con = 0, sum_total = 0;
    int n_bin_con = 0, n_multi_con = 0, steps = 0;
    for (const auto& idx : batches) {
      const Batch batch = make_batch(split.train, idx, labels, store, config.clip_length, rng);
      if (batch.size == 0) continue;
      StepLosses l;
      try {
        l = trainer.train_step(state, batch);
      } catch (const TrainingError& e) {
        json dump = meta_for(epoch - 1, "");
        dump["error"] = e.what();
        dump["epoch"] = epoch;
        dump["step_in_epoch"] = steps;
        std::ofstream(out_dir / "diagnostic.json") << dump.dump(2) << '\n';
        throw;
      }
      ++steps;
      sum_bin_ce += l.bin_ce;
      sum_multi_ce += l.multi_ce;
      sum_total += l.total;
      if (l.bin_con_active) {
        sum_bin_con += l.bin_con;
        ++n_bin_con;
      }
      if (l.multi_con_active) {
        sum_multi_con += l.multi_con;
        ++n_multi_con;
      }
    }
    EpochRecord r;
    r.epoch = epoch;
    r.steps = steps;
    if (steps > 0) {
      r.bin_ce = sum_bin_ce / steps;
      if (plan.multi_ce_to_encoder) r.multi_ce = sum_multi_ce / steps;
      r.total = sum_total / steps;
    }
    if (n_bin_con > 0) r.bin_con = sum_bin_con / n_bin_con;
    if (n_multi_con > 0) r.multi_con = sum_multi_con / n_multi_con;
    r.val_accuracy = evaluate_val();
    report.epochs.push_back(r);
    const bool improved = r.val_accuracy > report.best_val_accuracy;
    if (improved) {
      report.best_val_accuracy = r.val_accuracy;
      report.best_epoch = epoch;
    }
    std::ostringstream rng_state;
    rng_state << rng;
    save(epoch, rng_state.str(), improved);
    spdlog::info("[{}] epoch {}/{}: {} steps, {} val_acc={:.4f}", config.run_label(), epoch, config.epochs, steps,
                 to_json(r).at("losses").dump(), r.val_accuracy);
    if (options.stop_after_epochs && epoch >= *options.stop_after_epochs) break;
  }
  return report;
}

}  // namespace dfmtl
