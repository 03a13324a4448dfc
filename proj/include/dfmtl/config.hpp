#pragma once

#include "dfmtl/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace dfmtl {

/// Everything a training run needs. Defaults are the desk-scale settings.
struct TrainConfig {
  Regime regime = Regime::BinCe;
  InitSource init = InitSource::random;
  std::string init_checkpoint;  // required when init == checkpoint
  std::string label;            // report label; defaults to the regime id

  int epochs = 2;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double sgd_momentum = 0.9;
  double ema_momentum = 0.999;
  double temperature = 0.07;
  int queue_capacity = 256;
  LossWeights loss_weights;
  std::uint64_t seed = 1;

  int clip_length = 16;
  int clips_per_video = 1;  // training passes over the majority class per epoch
  int eval_clips = 3;

  EncoderSpec encoder;
  int projection_dim = 128;

  std::string manifest;
  std::string held_out;
  std::string output_dir;

  std::string run_label() const { return label.empty() ? to_string(regime) : label; }
};

/// Strict parse: unknown keys and wrong types are ConfigErrors naming the key.
TrainConfig parse_train_config(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);
nlohmann::json to_json(const TrainConfig& config);

/// FNV-1a over the canonical JSON form, as 16 hex digits.
std::string config_hash(const TrainConfig& config);

/// Resolves a relative output path against $DFMTL_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_path(const std::filesystem::path& p);
inline constexpr const char* kOutputRootEnv = "DFMTL_OUTPUT_ROOT";

}  // namespace dfmtl
