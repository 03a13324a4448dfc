#pragma once

// Procedural stand-in corpus: a textured "talking head" (moving ellipse with
// an oscillating mouth band) and four parametric manipulation families.
//
//   SynA  mouth band driven out of sync with the head motion
//   SynB  Gaussian blur inside a patch over the lower face
//   SynC  colour shift inside a patch over the face
//   SynD  frame-to-frame brightness flicker

#include "dfmtl/data.hpp"
#include "dfmtl/png_io.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dfmtl::synth {

enum class Family { original, desync, blur, color_shift, flicker };

std::string method_of(Family f);
Family family_of(const std::string& method);
const std::vector<Family>& manipulation_families();

struct SceneParams {
  // background
  double bg_base[3];
  double bg_wave_amp;
  double bg_freq_x, bg_freq_y, bg_phase;
  std::uint64_t texture_seed;
  // face
  double face_color[3];
  double cx, cy, rx, ry;         // fractions of width/height
  double motion_amp_x, motion_amp_y;
  double head_freq;              // cycles per frame
  double phase;
  // mouth
  double mouth_base, mouth_amp;  // fractions of ry
  // manipulation strengths
  double desync_rate, desync_gain;
  double blur_sigma;
  double color_shift[3];
  double flicker_amp;
};

SceneParams draw_scene(std::uint64_t seed, std::uint64_t video_key);

struct RenderedVideo {
  std::vector<RgbImage> frames;
  std::vector<std::vector<std::uint8_t>> masks;  // per frame, 1 = pixel may be manipulated
};

RenderedVideo render_video(const SceneParams& scene, Family family, int frames, int height, int width);

struct CorpusOptions {
  std::uint64_t seed = 7;
  int videos_per_class = 20;
  int frames = 32;
  int height = 32;
  int width = 32;
};

/// Writes frames under out_dir/frames/<video_id>/%06d.png and
/// out_dir/manifest.csv; returns the manifest. Splits are 70/15/15 by index
/// within each class.
Manifest generate_synthetic_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir);

SplitRole split_for_index(int index, int videos_per_class);

}  // namespace dfmtl::synth
