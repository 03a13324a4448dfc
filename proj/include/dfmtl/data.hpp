#pragma once

// Manifests, leave-one-manipulation-out splits, label assignment and clip
// sampling.

#include "dfmtl/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace dfmtl {

inline constexpr const char* kOriginal = "Original";
inline constexpr const char* kManifestHeader = "video_id,frames_dir,method,split";

/// FaceForensics++ technique tokens.
const std::vector<std::string>& face_forensics_methods();
/// Manipulation families emitted by the synthetic corpus generator.
const std::vector<std::string>& synthetic_methods();
bool is_known_method(const std::string& method);

enum class SplitRole { train, val, test };
std::string to_string(SplitRole r);
SplitRole parse_split_role(const std::string& token);

struct ManifestRow {
  std::string video_id;
  std::filesystem::path frames_dir;  // resolved against the manifest location
  std::string method;
  SplitRole split = SplitRole::train;

  bool is_original() const { return method == kOriginal; }
};

struct Manifest {
  std::vector<ManifestRow> rows;

  std::size_t count(const std::string& method, SplitRole split) const;
  bool has_method(const std::string& method) const;
  /// Methods present, sorted.
  std::vector<std::string> methods() const;
};

struct ManifestOptions {
  bool check_paths = true;
  int min_frames = 0;  // required frame count per frames_dir when check_paths
};

Manifest load_manifest(const std::filesystem::path& csv_path, const ManifestOptions& options = {});

/// Writes the manifest with frames_dir relative to the CSV's directory when possible.
void write_manifest(const std::filesystem::path& csv_path, const Manifest& manifest);

/// Number of consecutive %06d.png frames in a directory.
int count_frames(const std::filesystem::path& frames_dir);
std::string frame_filename(int index);

struct SplitSpec {
  std::string held_out_method;
  std::vector<std::string> train_methods;  // sorted, includes Original when present
  std::vector<ManifestRow> train;
  std::vector<ManifestRow> val;
  std::vector<ManifestRow> test;
  bool degenerate_train = false;  // no training fakes left

  /// Training fake methods only (no Original), sorted.
  std::vector<std::string> train_fake_methods() const;
};

SplitSpec build_split(const Manifest& manifest, const std::string& held_out_method);

/// Original -> 0, training fakes -> 1..n in lexicographic order. The
/// held-out method gets no id.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::map<std::string, int> ids) : ids_(std::move(ids)) {}

  int classes() const { return static_cast<int>(ids_.size()); }
  bool contains(const std::string& method) const { return ids_.count(method) > 0; }
  int multi_label(const std::string& method) const;
  const std::map<std::string, int>& ids() const { return ids_; }

 private:
  std::map<std::string, int> ids_;
};

LabelMap assign_multi_labels(const SplitSpec& split);

inline int binary_label_of(const ManifestRow& row) { return row.is_original() ? 0 : 1; }

/// Decoded frames of one video: 3 x (frames * height * width), values in [0,1].
struct Video {
  int frames = 0;
  int height = 0;
  int width = 0;
  MatR pixels;
};

Video load_video(const std::filesystem::path& frames_dir, int max_frames = -1);

struct LabeledClip {
  MatR frames;  // 3 x (T * H * W)
  int multi_label = 0;
  int binary_label() const { return multi_label > 0 ? 1 : 0; }
};

enum class SampleMode { random, uniform };

/// Start offsets of T-frame windows. random: one uniform start; uniform:
/// k evenly spaced starts floor((frames - T) * i / (k - 1)), deduplicated.
/// Returns nothing when the video is shorter than T.
std::vector<int> clip_starts(int frames, int clip_length, SampleMode mode, int k, std::mt19937_64& rng);

LabeledClip extract_clip(const Video& video, int start, int clip_length, int multi_label);

/// Clips of a video per `mode`. Too-short videos yield an empty vector and a warning.
std::vector<LabeledClip> sample_clip(const Video& video, int clip_length, SampleMode mode, int k,
                                     int multi_label, std::mt19937_64& rng);

/// Concatenates clips column-wise into one batch matrix.
MatR stack_clips(const std::vector<const LabeledClip*>& clips);

/// Caches decoded videos by directory.
class VideoStore {
 public:
  const Video& get(const std::filesystem::path& frames_dir);
  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::string, Video> cache_;
};

/// Per-epoch batch composition over `rows` with originals and fakes drawn
/// 1:1. The majority class is visited `passes` times; the minority cycles
/// through fresh permutations. Values are indices into `rows`.
std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<ManifestRow>& rows,
                                                       std::size_t batch_size, int passes,
                                                       std::mt19937_64& rng);

/// Deterministic stream seed derived from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace dfmtl
