#include "dfmtl/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dfmtl {

namespace {

class Reader {
 public:
  Reader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object())
      throw ConfigError(prefix_.empty() ? std::string("config must be a JSON object")
                                        : "config key '" + prefix_ + "' must be an object");
  }

  void allow(std::initializer_list<const char*> keys) {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : obj_.items())
      if (!ok.count(k)) throw ConfigError("unknown config key '" + name(k) + "'");
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& raw(const char* key) const { return obj_.at(key); }

  template <typename T>
  void get(const char* key, T& out, bool required = false) const {
    if (!obj_.contains(key)) {
      if (required) throw ConfigError("missing required config key '" + name(key) + "'");
      return;
    }
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw type_error(key, "a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw type_error(key, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw type_error(key, "an integer");
      if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw type_error(key, "a non-negative integer");
      out = v.get<T>();
    } else {
      if (!v.is_number()) throw type_error(key, "a number");
      out = v.get<T>();
    }
  }

  std::string name(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  ConfigError type_error(const char* key, const char* what) const {
    return ConfigError("config key '" + name(key) + "' must be " + what);
  }
  const json& obj_;
  std::string prefix_;
};

void check(bool cond, const std::string& key, const std::string& why) {
  if (!cond) throw ConfigError("config key '" + key + "' " + why);
}

}  // namespace

TrainConfig parse_train_config(const json& doc) {
  Reader r(doc, "");
  r.allow({"regime", "init", "init_checkpoint", "label", "epochs", "batch_size", "learning_rate",
           "sgd_momentum", "ema_momentum", "temperature", "queue_capacity", "loss_weights", "seed",
           "clip_length", "clips_per_video", "eval_clips", "encoder", "projection_dim", "manifest",
           "held_out", "output_dir"});
  TrainConfig c;
  std::string regime, init = "random";
  r.get("regime", regime, true);
  try {
    c.regime = parse_regime(regime);
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'regime': " + std::string(e.what()));
  }
  r.get("init", init);
  try {
    c.init = parse_init_source(init);
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'init': " + std::string(e.what()));
  }
  r.get("init_checkpoint", c.init_checkpoint);
  r.get("label", c.label);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("sgd_momentum", c.sgd_momentum);
  r.get("ema_momentum", c.ema_momentum);
  r.get("temperature", c.temperature);
  r.get("queue_capacity", c.queue_capacity);
  r.get("seed", c.seed);
  r.get("clip_length", c.clip_length);
  r.get("clips_per_video", c.clips_per_video);
  r.get("eval_clips", c.eval_clips);
  r.get("projection_dim", c.projection_dim);
  r.get("manifest", c.manifest, true);
  r.get("held_out", c.held_out, true);
  r.get("output_dir", c.output_dir, true);

  if (r.has("loss_weights")) {
    Reader w(r.raw("loss_weights"), "loss_weights");
    w.allow({"bin_ce", "multi_ce", "bin_con", "multi_con"});
    w.get("bin_ce", c.loss_weights.bin_ce);
    w.get("multi_ce", c.loss_weights.multi_ce);
    w.get("bin_con", c.loss_weights.bin_con);
    w.get("multi_con", c.loss_weights.multi_con);
    for (auto [k, v] : {std::pair{"bin_ce", c.loss_weights.bin_ce}, {"multi_ce", c.loss_weights.multi_ce},
                        {"bin_con", c.loss_weights.bin_con}, {"multi_con", c.loss_weights.multi_con}})
      check(v >= 0.0, std::string("loss_weights.") + k, "must be non-negative");
  }
  if (r.has("encoder")) {
    Reader e(r.raw("encoder"), "encoder");
    e.allow({"architecture", "height", "width", "channels", "checkpoint"});
    e.get("architecture", c.encoder.architecture);
    long long h = c.encoder.input.height, wd = c.encoder.input.width;
    e.get("height", h);
    e.get("width", wd);
    c.encoder.input.height = h;
    c.encoder.input.width = wd;
    if (e.has("channels")) {
      const json& ch = e.raw("channels");
      check(ch.is_array() && !ch.empty(), "encoder.channels", "must be a non-empty array of integers");
      c.encoder.channels.clear();
      for (const auto& v : ch) {
        check(v.is_number_integer() && v.get<long long>() > 0, "encoder.channels",
              "must contain positive integers");
        c.encoder.channels.push_back(v.get<long long>());
      }
    }
    e.get("checkpoint", c.encoder.checkpoint);
    check(c.encoder.architecture == "tiny3dconv" || c.encoder.architecture == "external-checkpoint",
          "encoder.architecture", "must be 'tiny3dconv' or 'external-checkpoint'");
    check(c.encoder.architecture != "external-checkpoint" || !c.encoder.checkpoint.empty(),
          "encoder.checkpoint", "is required for the external-checkpoint architecture");
    check(h > 0 && wd > 0, "encoder.height", "and width must be positive");
  }
  c.encoder.input.frames = c.clip_length;

  check(c.epochs >= 0, "epochs", "must be non-negative");
  check(c.batch_size >= 2, "batch_size", "must be at least 2");
  check(c.learning_rate > 0.0, "learning_rate", "must be positive");
  check(c.sgd_momentum >= 0.0 && c.sgd_momentum < 1.0, "sgd_momentum", "must be in [0,1)");
  check(c.ema_momentum >= 0.0 && c.ema_momentum <= 1.0, "ema_momentum", "must be in [0,1]");
  check(c.temperature > 0.0, "temperature", "must be positive");
  check(c.queue_capacity > 0, "queue_capacity", "must be positive");
  check(c.clip_length > 0, "clip_length", "must be positive");
  check(c.clips_per_video > 0, "clips_per_video", "must be positive");
  check(c.eval_clips > 0, "eval_clips", "must be positive");
  check(c.projection_dim > 0, "projection_dim", "must be positive");
  check(c.init != InitSource::checkpoint || !c.init_checkpoint.empty(), "init_checkpoint",
        "is required when init is 'checkpoint'");
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  TrainConfig c = parse_train_config(doc);
  // Relative data paths are relative to the config file.
  const fs::path base = path.parent_path();
  auto rebase = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  rebase(c.manifest);
  rebase(c.init_checkpoint);
  rebase(c.encoder.checkpoint);
  return c;
}

json to_json(const TrainConfig& c) {
  json channels = json::array();
  for (auto ch : c.encoder.channels) channels.push_back(ch);
  return json{
      {"regime", to_string(c.regime)},
      {"init", to_string(c.init)},
      {"init_checkpoint", c.init_checkpoint},
      {"label", c.label},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"sgd_momentum", c.sgd_momentum},
      {"ema_momentum", c.ema_momentum},
      {"temperature", c.temperature},
      {"queue_capacity", c.queue_capacity},
      {"loss_weights",
       {{"bin_ce", c.loss_weights.bin_ce},
        {"multi_ce", c.loss_weights.multi_ce},
        {"bin_con", c.loss_weights.bin_con},
        {"multi_con", c.loss_weights.multi_con}}},
      {"seed", c.seed},
      {"clip_length", c.clip_length},
      {"clips_per_video", c.clips_per_video},
      {"eval_clips", c.eval_clips},
      {"encoder",
       {{"architecture", c.encoder.architecture},
        {"height", c.encoder.input.height},
        {"width", c.encoder.input.width},
        {"channels", channels},
        {"checkpoint", c.encoder.checkpoint}}},
      {"projection_dim", c.projection_dim},
      {"manifest", c.manifest},
      {"held_out", c.held_out},
      {"output_dir", c.output_dir},
  };
}

std::string config_hash(const TrainConfig& c) {
  const std::string text = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path resolve_output_path(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  return p;
}

}  // namespace dfmtl
