#include "dfmtl/data.hpp"

#include "dfmtl/csv.hpp"
#include "dfmtl/png_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace dfmtl {

const std::vector<std::string>& face_forensics_methods() {
  static const std::vector<std::string> m{"DF", "F2F", "FS", "NT"};
  return m;
}

const std::vector<std::string>& synthetic_methods() {
  static const std::vector<std::string> m{"SynA", "SynB", "SynC", "SynD"};
  return m;
}

bool is_known_method(const std::string& method) {
  if (method == kOriginal) return true;
  const auto& ff = face_forensics_methods();
  const auto& syn = synthetic_methods();
  return std::find(ff.begin(), ff.end(), method) != ff.end() ||
         std::find(syn.begin(), syn.end(), method) != syn.end();
}

std::string to_string(SplitRole r) {
  switch (r) {
    case SplitRole::train:
      return "train";
    case SplitRole::val:
      return "val";
    case SplitRole::test:
      return "test";
  }
  return "?";
}

SplitRole parse_split_role(const std::string& token) {
  if (token == "train") return SplitRole::train;
  if (token == "val") return SplitRole::val;
  if (token == "test") return SplitRole::test;
  throw IngestionError("unknown split '" + token + "'");
}

std::size_t Manifest::count(const std::string& method, SplitRole split) const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const ManifestRow& r) {
    return r.method == method && r.split == split;
  }));
}

bool Manifest::has_method(const std::string& method) const {
  return std::any_of(rows.begin(), rows.end(), [&](const ManifestRow& r) { return r.method == method; });
}

std::vector<std::string> Manifest::methods() const {
  std::set<std::string> s;
  for (const auto& r : rows) s.insert(r.method);
  return {s.begin(), s.end()};
}

std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.png", index);
  return buf;
}

int count_frames(const fs::path& frames_dir) {
  int n = 0;
  while (fs::exists(frames_dir / frame_filename(n))) ++n;
  return n;
}

Manifest load_manifest(const fs::path& csv_path, const ManifestOptions& options) {
  std::ifstream in(csv_path);
  if (!in) throw IngestionError("cannot open manifest '" + csv_path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("manifest is empty (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw IngestionError("manifest header must be exactly '" + std::string(kManifestHeader) + "'");

  const fs::path base = csv_path.parent_path();
  Manifest m;
  std::set<std::string> ids;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv::split_line(line);
    auto fail = [&](const std::string& why) -> IngestionError {
      return IngestionError("manifest line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 4) throw fail("expected 4 fields, got " + std::to_string(fields.size()));
    ManifestRow row;
    row.video_id = fields[0];
    if (row.video_id.empty()) throw fail("empty video_id");
    if (!ids.insert(row.video_id).second) throw fail("duplicate video_id '" + row.video_id + "'");
    row.method = fields[2];
    if (!is_known_method(row.method))
      throw fail("unknown method '" + row.method + "' for video '" + row.video_id + "'");
    try {
      row.split = parse_split_role(fields[3]);
    } catch (const IngestionError& e) {
      throw fail(std::string(e.what()) + " for video '" + row.video_id + "'");
    }
    fs::path dir(fields[1]);
    row.frames_dir = dir.is_absolute() ? dir : base / dir;
    if (options.check_paths) {
      if (!fs::is_directory(row.frames_dir))
        throw fail("frames_dir '" + row.frames_dir.string() + "' does not exist");
      if (options.min_frames > 0 && count_frames(row.frames_dir) < options.min_frames)
        throw fail("video '" + row.video_id + "' has fewer than " + std::to_string(options.min_frames) +
                   " frames");
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

void write_manifest(const fs::path& csv_path, const Manifest& manifest) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw IngestionError("cannot write manifest '" + csv_path.string() + "'");
  out << kManifestHeader << '\n';
  const fs::path base = csv_path.parent_path();
  for (const auto& r : manifest.rows) {
    fs::path dir = r.frames_dir;
    if (!base.empty() && dir.is_absolute() == base.is_absolute()) {
      auto rel = dir.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") dir = rel;
    }
    out << csv::quote(r.video_id) << ',' << csv::quote(dir.generic_string()) << ',' << r.method << ','
        << to_string(r.split) << '\n';
  }
}

std::vector<std::string> SplitSpec::train_fake_methods() const {
  std::vector<std::string> out;
  for (const auto& m : train_methods)
    if (m != kOriginal) out.push_back(m);
  return out;
}

SplitSpec build_split(const Manifest& manifest, const std::string& held_out_method) {
  if (held_out_method == kOriginal) throw ConfigError("cannot hold out the Original class");
  if (!manifest.has_method(held_out_method))
    throw ConfigError("held-out method '" + held_out_method + "' is not present in the manifest");
  if (!manifest.has_method(kOriginal)) throw ConfigError("manifest has no Original videos");

  SplitSpec s;
  s.held_out_method = held_out_method;
  for (const auto& m : manifest.methods())
    if (m != held_out_method) s.train_methods.push_back(m);
  for (const auto& r : manifest.rows) {
    const bool held = r.method == held_out_method;
    switch (r.split) {
      case SplitRole::train:
        if (!held) s.train.push_back(r);
        break;
      case SplitRole::val:
        if (!held) s.val.push_back(r);
        break;
      case SplitRole::test:
        if (held || r.is_original()) s.test.push_back(r);
        break;
    }
  }
  s.degenerate_train = s.train_fake_methods().empty();
  if (s.degenerate_train)
    spdlog::warn("split holding out '{}' leaves no manipulated videos for training", held_out_method);
  return s;
}

int LabelMap::multi_label(const std::string& method) const {
  auto it = ids_.find(method);
  if (it == ids_.end()) throw ContractViolation("no multi-class id for method '" + method + "'");
  return it->second;
}

LabelMap assign_multi_labels(const SplitSpec& split) {
  std::map<std::string, int> ids{{kOriginal, 0}};
  int next = 1;
  for (const auto& m : split.train_fake_methods()) ids[m] = next++;
  return LabelMap(std::move(ids));
}

Video load_video(const fs::path& frames_dir, int max_frames) {
  int n = count_frames(frames_dir);
  if (max_frames >= 0) n = std::min(n, max_frames);
  Video v;
  v.frames = n;
  for (int t = 0; t < n; ++t) {
    const RgbImage img = read_png(frames_dir / frame_filename(t));
    if (t == 0) {
      v.height = img.height;
      v.width = img.width;
      v.pixels.resize(3, static_cast<Eigen::Index>(n) * img.height * img.width);
    } else if (img.height != v.height || img.width != v.width) {
      throw IngestionError("frame size changes inside '" + frames_dir.string() + "'");
    }
    const Eigen::Index hw = static_cast<Eigen::Index>(v.height) * v.width;
    for (Eigen::Index p = 0; p < hw; ++p)
      for (int c = 0; c < 3; ++c)
        v.pixels(c, t * hw + p) = img.pixels[static_cast<std::size_t>(p * 3 + c)] / 255.0;
  }
  return v;
}

std::vector<int> clip_starts(int frames, int clip_length, SampleMode mode, int k, std::mt19937_64& rng) {
  require(clip_length > 0, "clip_starts: clip length must be positive");
  if (frames < clip_length) return {};
  const int span = frames - clip_length;
  if (mode == SampleMode::random) {
    std::uniform_int_distribution<int> dist(0, span);
    return {dist(rng)};
  }
  require(k > 0, "clip_starts: k must be positive");
  std::vector<int> starts;
  if (k == 1) {
    starts.push_back(span / 2);
  } else {
    for (int i = 0; i < k; ++i)
      starts.push_back(static_cast<int>((static_cast<long long>(span) * i) / (k - 1)));
  }
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  return starts;
}

LabeledClip extract_clip(const Video& video, int start, int clip_length, int multi_label) {
  require(start >= 0 && start + clip_length <= video.frames, "extract_clip: window out of range");
  const Eigen::Index hw = static_cast<Eigen::Index>(video.height) * video.width;
  LabeledClip c;
  c.frames = video.pixels.middleCols(start * hw, clip_length * hw);
  c.multi_label = multi_label;
  return c;
}

std::vector<LabeledClip> sample_clip(const Video& video, int clip_length, SampleMode mode, int k,
                                     int multi_label, std::mt19937_64& rng) {
  const auto starts = clip_starts(video.frames, clip_length, mode, k, rng);
  if (starts.empty()) {
    spdlog::warn("video with {} frames is shorter than the clip length {}; skipped", video.frames,
                 clip_length);
    return {};
  }
  std::vector<LabeledClip> out;
  for (int s : starts) out.push_back(extract_clip(video, s, clip_length, multi_label));
  return out;
}

MatR stack_clips(const std::vector<const LabeledClip*>& clips) {
  if (clips.empty()) return MatR(3, 0);
  const Eigen::Index p = clips.front()->frames.cols();
  MatR out(3, p * static_cast<Eigen::Index>(clips.size()));
  for (std::size_t i = 0; i < clips.size(); ++i) {
    require(clips[i]->frames.cols() == p, "stack_clips: clips differ in shape");
    out.middleCols(static_cast<Eigen::Index>(i) * p, p) = clips[i]->frames;
  }
  return out;
}

const Video& VideoStore::get(const fs::path& frames_dir) {
  const std::string key = frames_dir.lexically_normal().string();
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(key, load_video(frames_dir)).first->second;
}

std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<ManifestRow>& rows,
                                                       std::size_t batch_size, int passes,
                                                       std::mt19937_64& rng) {
  require(batch_size > 0, "balanced_batches: batch size must be positive");
  require(passes > 0, "balanced_batches: passes must be positive");
  std::vector<std::size_t> originals, fakes;
  for (std::size_t i = 0; i < rows.size(); ++i) (rows[i].is_original() ? originals : fakes).push_back(i);

  // Endless stream of reshuffled permutations over one class.
  struct Cycler {
    std::vector<std::size_t> pool;
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    std::size_t next(std::mt19937_64& rng) {
      if (pos == order.size()) {
        order = pool;
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      return order[pos++];
    }
  };
  Cycler orig{originals, {}, 0}, fake{fakes, {}, 0};

  std::vector<std::vector<std::size_t>> batches;
  if (originals.empty() && fakes.empty()) return batches;
  if (originals.empty() || fakes.empty()) {
    Cycler& only = originals.empty() ? fake : orig;
    const std::size_t total = only.pool.size() * static_cast<std::size_t>(passes);
    for (std::size_t done = 0; done < total;) {
      std::vector<std::size_t> b;
      for (; b.size() < batch_size && done < total; ++done) b.push_back(only.next(rng));
      batches.push_back(std::move(b));
    }
    return batches;
  }
  const std::size_t per_class = std::max(originals.size(), fakes.size()) * static_cast<std::size_t>(passes);
  const std::size_t n_batches = (2 * per_class + batch_size - 1) / batch_size;
  const std::size_t n_orig = std::max<std::size_t>(batch_size / 2, 1);
  const std::size_t n_fake = std::max<std::size_t>(batch_size - n_orig, 1);
  for (std::size_t i = 0; i < n_batches; ++i) {
    std::vector<std::size_t> b;
    for (std::size_t j = 0; j < n_orig; ++j) b.push_back(orig.next(rng));
    for (std::size_t j = 0; j < n_fake; ++j) b.push_back(fake.next(rng));
    batches.push_back(std::move(b));
  }
  return batches;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace dfmtl
