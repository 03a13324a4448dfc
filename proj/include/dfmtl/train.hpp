#pragma once

// Regime-parameterised training: routed losses, SGD on the query path, EMA
// on the key path, per-stream key queues, checkpoints and the run report.

#include "dfmtl/archive.hpp"
#include "dfmtl/config.hpp"
#include "dfmtl/data.hpp"
#include "dfmtl/eval.hpp"
#include "dfmtl/model.hpp"
#include "dfmtl/moco.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmtl {

/// Raised when a loss turns non-finite; a diagnostic dump accompanies it.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Batch {
  MatR clips;  // 3 x (size * T*H*W)
  Eigen::Index size = 0;
  std::vector<int> multi_labels;
};

struct StepLosses {
  Real bin_ce = 0.0;
  Real multi_ce = 0.0;
  Real bin_con = 0.0;
  Real multi_con = 0.0;
  Real total = 0.0;
  bool bin_con_active = false;  // queue had entries and some anchor had positives
  bool multi_con_active = false;
};

struct TrainState {
  Weights weights;
  Weights velocity;  // SGD momentum buffers
  KeyWeights key;
  std::optional<KeyQueue<Real>> binary_queue;
  std::optional<KeyQueue<Real>> multi_queue;
  std::int64_t step = 0;
};

/// v <- mu * v + g ; p <- p - lr * v
void sgd_momentum_step(VecR& params, VecR& velocity, const VecR& grad, Real lr, Real momentum);

class Trainer {
 public:
  Trainer(const TrainConfig& config, ModelSpec spec);

  const Model& model() const { return model_; }
  const TrainConfig& config() const { return config_; }

  TrainState init_state() const;

  /// One optimisation step. Order: query forward, key forward (no grad),
  /// pools from the queue, routed losses, SGD on the query path (plus the
  /// detached monitor classifier), EMA of the key path, enqueue this batch.
  StepLosses train_step(TrainState& state, const Batch& batch) const;

 private:
  TrainConfig config_;
  Model model_;
};

struct EpochRecord {
  int epoch = 0;
  std::optional<Real> bin_ce, multi_ce, bin_con, multi_con;
  std::optional<Real> total;
  Real val_accuracy = 0.0;
  int steps = 0;
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  Real best_val_accuracy = -1.0;
  int best_epoch = -1;
  std::string config_hash;
  std::filesystem::path output_dir;
};

nlohmann::json to_json(const EpochRecord& r);

struct RunOptions {
  std::optional<std::filesystem::path> resume;
  /// Stop after this many completed epochs (simulates an interruption).
  std::optional<int> stop_after_epochs;
};

/// Trains per config. Writes into output_dir: run_report.jsonl, last.ckpt,
/// best.ckpt and config.json.
RunReport run(const TrainConfig& config, const RunOptions& options = {});

/// Everything needed to run inference from a checkpoint file.
struct LoadedModel {
  Model model;
  Weights weights;
  nlohmann::json meta;
};

/// Rebuilds the model from checkpoint metadata. Only the encoder and binary
/// classifier arrays are required.
LoadedModel load_for_inference(const std::filesystem::path& checkpoint);

ModelSpec model_spec_from_meta(const nlohmann::json& meta);
nlohmann::json model_spec_to_json(const ModelSpec& spec);

/// Serialises the full training state (weights, EMA weights, optimiser
/// buffers, queues) plus caller-supplied metadata.
Archive make_checkpoint(const Trainer& trainer, const TrainState& state, nlohmann::json meta);
TrainState restore_state(const Trainer& trainer, const Archive& archive);

}  // namespace dfmtl
