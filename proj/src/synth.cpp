#include "dfmtl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace fs = std::filesystem;

namespace dfmtl::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double hash_unit(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const std::uint64_t h = derive_seed(seed ^ (static_cast<std::uint64_t>(x) * 0x100000001B3ULL),
                                      static_cast<std::uint64_t>(y) + 0x51ED27ULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;  // [-1, 1)
}

struct FloatFrame {
  int width = 0;
  int height = 0;
  std::vector<double> v;  // row-major RGB
  double& at(int y, int x, int c) { return v[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return v[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

struct Pose {
  double x, y, rx, ry;  // pixels
  double mouth;         // band height as a fraction of ry
};

Pose pose_at(const SceneParams& s, Family family, int t, int height, int width) {
  const double theta = kTwoPi * s.head_freq * t + s.phase;
  Pose p;
  p.x = (s.cx + s.motion_amp_x * std::sin(theta)) * width;
  p.y = (s.cy + s.motion_amp_y * std::cos(theta)) * height;
  p.rx = s.rx * width;
  p.ry = s.ry * height;
  if (family == Family::desync)
    p.mouth = s.mouth_base +
              s.desync_gain * s.mouth_amp * (0.5 + 0.5 * std::sin(s.desync_rate * theta + std::numbers::pi));
  else
    p.mouth = s.mouth_base + s.mouth_amp * (0.5 + 0.5 * std::sin(theta));
  return p;
}

FloatFrame render_scene(const SceneParams& s, const Pose& p, int height, int width) {
  FloatFrame f{width, height, std::vector<double>(static_cast<std::size_t>(width) * height * 3)};
  const auto ix = static_cast<std::int64_t>(std::lround(p.x));
  const auto iy = static_cast<std::int64_t>(std::lround(p.y));
  const double mouth_y = p.y + 0.45 * p.ry;
  const double mouth_half = 0.5 * p.mouth * p.ry;
  const double eye_half = std::max(0.12 * p.rx, 0.6);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double wave = s.bg_wave_amp * std::sin(s.bg_freq_x * x + s.bg_freq_y * y + s.bg_phase);
      const double grain = 0.04 * hash_unit(s.texture_seed, x, y);
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = s.bg_base[c] + wave + grain;

      const double dx = (x - p.x) / p.rx, dy = (y - p.y) / p.ry;
      if (dx * dx + dy * dy <= 1.0) {
        // skin texture is attached to the face, so it moves with it
        const double freckle = 0.14 * hash_unit(s.texture_seed + 17, x - ix, y - iy);
        for (int c = 0; c < 3; ++c) rgb[c] = s.face_color[c] + freckle;
        const bool eye = std::abs(y - (p.y - 0.25 * p.ry)) <= eye_half &&
                         (std::abs(x - (p.x - 0.4 * p.rx)) <= eye_half ||
                          std::abs(x - (p.x + 0.4 * p.rx)) <= eye_half);
        if (eye)
          for (double& c : rgb) c = 0.1;
        if (std::abs(x - p.x) <= 0.5 * p.rx && std::abs(y - mouth_y) <= mouth_half) {
          rgb[0] = 0.28;
          rgb[1] = 0.07;
          rgb[2] = 0.08;
        }
      }
      for (int c = 0; c < 3; ++c) f.at(y, x, c) = rgb[c];
    }
  return f;
}

FloatFrame gaussian_blur(const FloatFrame& in, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& w : k) w /= sum;

  auto pass = [&](const FloatFrame& src, bool horizontal) {
    FloatFrame dst = src;
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int xx = horizontal ? std::clamp(x + i, 0, src.width - 1) : x;
            const int yy = horizontal ? y : std::clamp(y + i, 0, src.height - 1);
            acc += k[static_cast<std::size_t>(i + radius)] * src.at(yy, xx, c);
          }
          dst.at(y, x, c) = acc;
        }
    return dst;
  };
  return pass(pass(in, true), false);
}

std::vector<std::uint8_t> rect_mask(int height, int width, double x0, double x1, double y0, double y1) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(width) * height, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (x >= x0 && x <= x1 && y >= y0 && y <= y1) m[static_cast<std::size_t>(y) * width + x] = 1;
  return m;
}

RgbImage quantize(const FloatFrame& f) {
  RgbImage img{f.width, f.height, std::vector<std::uint8_t>(f.v.size())};
  for (std::size_t i = 0; i < f.v.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(f.v[i], 0.0, 1.0) * 255.0));
  return img;
}

}  // namespace

std::string method_of(Family f) {
  switch (f) {
    case Family::original:
      return kOriginal;
    case Family::desync:
      return "SynA";
    case Family::blur:
      return "SynB";
    case Family::color_shift:
      return "SynC";
    case Family::flicker:
      return "SynD";
  }
  return "?";
}

Family family_of(const std::string& method) {
  for (Family f : {Family::original, Family::desync, Family::blur, Family::color_shift, Family::flicker})
    if (method_of(f) == method) return f;
  throw ConfigError("'" + method + "' is not a synthetic method");
}

const std::vector<Family>& manipulation_families() {
  static const std::vector<Family> f{Family::desync, Family::blur, Family::color_shift, Family::flicker};
  return f;
}

SceneParams draw_scene(std::uint64_t seed, std::uint64_t video_key) {
  std::mt19937_64 rng(derive_seed(seed, video_key));
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SceneParams s{};
  for (double& c : s.bg_base) c = u(0.35, 0.45);
  s.bg_wave_amp = u(0.02, 0.04);
  s.bg_freq_x = u(0.1, 0.5);
  s.bg_freq_y = u(0.1, 0.5);
  s.bg_phase = u(0.0, kTwoPi);
  s.texture_seed = derive_seed(seed, 0x7E57u);  // shared: texture carries no identity
  s.face_color[0] = u(0.74, 0.80);
  s.face_color[1] = u(0.55, 0.60);
  s.face_color[2] = u(0.42, 0.47);
  s.cx = u(0.48, 0.52);
  s.cy = u(0.48, 0.52);
  s.rx = u(0.24, 0.30);
  s.ry = u(0.32, 0.38);
  s.motion_amp_x = u(0.03, 0.07);
  s.motion_amp_y = u(0.01, 0.03);
  s.head_freq = u(0.10, 0.12);
  s.phase = u(0.0, 0.6);
  s.mouth_base = u(0.06, 0.10);
  s.mouth_amp = u(0.12, 0.18);
  s.desync_rate = u(3.6, 4.4);
  s.desync_gain = u(2.2, 2.6);
  s.blur_sigma = u(1.6, 2.2);
  s.color_shift[0] = u(0.18, 0.24);
  s.color_shift[1] = u(-0.04, 0.0);
  s.color_shift[2] = u(-0.20, -0.14);
  s.flicker_amp = u(0.16, 0.24);
  return s;
}

RenderedVideo render_video(const SceneParams& s, Family family, int frames, int height, int width) {
  require(frames >= 0 && height > 0 && width > 0, "render_video: bad dimensions");
  RenderedVideo out;
  const std::size_t npix = static_cast<std::size_t>(width) * height;
  for (int t = 0; t < frames; ++t) {
    const Pose p = pose_at(s, family, t, height, width);
    FloatFrame f = render_scene(s, p, height, width);
    std::vector<std::uint8_t> mask(npix, 0);
    switch (family) {
      case Family::original:
        break;
      case Family::desync: {
        // the only difference is the mouth band, drawn inside the face
        const Pose ref = pose_at(s, Family::original, t, height, width);
        const double half = 0.5 * std::max(p.mouth, ref.mouth) * p.ry + 1.0;
        mask = rect_mask(height, width, p.x - 0.5 * p.rx - 1.0, p.x + 0.5 * p.rx + 1.0,
                         p.y + 0.45 * p.ry - half, p.y + 0.45 * p.ry + half);
        break;
      }
      case Family::blur: {
        mask = rect_mask(height, width, p.x - 0.7 * p.rx, p.x + 0.7 * p.rx, p.y, p.y + p.ry);
        const FloatFrame blurred = gaussian_blur(f, s.blur_sigma);
        for (std::size_t i = 0; i < npix; ++i)
          if (mask[i])
            for (int c = 0; c < 3; ++c) f.v[i * 3 + c] = blurred.v[i * 3 + c];
        break;
      }
      case Family::color_shift: {
        mask = rect_mask(height, width, p.x - 0.6 * p.rx, p.x + 0.6 * p.rx, p.y - 0.6 * p.ry,
                         p.y + 0.6 * p.ry);
        for (std::size_t i = 0; i < npix; ++i)
          if (mask[i])
            for (int c = 0; c < 3; ++c) f.v[i * 3 + c] += s.color_shift[c];
        break;
      }
      case Family::flicker: {
        std::fill(mask.begin(), mask.end(), 1);
        const double gain = 1.0 + (t % 2 == 0 ? s.flicker_amp : -s.flicker_amp);
        for (double& v : f.v) v *= gain;
        break;
      }
    }
    out.frames.push_back(quantize(f));
    out.masks.push_back(std::move(mask));
  }
  return out;
}

SplitRole split_for_index(int index, int videos_per_class) {
  const int n_train = videos_per_class * 70 / 100;
  const int n_val = videos_per_class * 15 / 100;
  if (index < n_train) return SplitRole::train;
  if (index < n_train + n_val) return SplitRole::val;
  return SplitRole::test;
}

Manifest generate_synthetic_corpus(const CorpusOptions& o, const fs::path& out_dir) {
  require(o.videos_per_class >= 0, "videos_per_class must be non-negative");
  std::error_code ec;
  fs::create_directories(out_dir / "frames", ec);
  if (ec) throw IngestionError("cannot create output directory '" + out_dir.string() + "': " + ec.message());

  Manifest m;
  std::vector<Family> classes{Family::original};
  for (Family f : manipulation_families()) classes.push_back(f);
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    const Family family = classes[ci];
    const std::string method = method_of(family);
    for (int i = 0; i < o.videos_per_class; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", method.c_str(), i);
      const SceneParams scene = draw_scene(o.seed, (static_cast<std::uint64_t>(ci) << 32) | static_cast<std::uint64_t>(i));
      const RenderedVideo video = render_video(scene, family, o.frames, o.height, o.width);
      const fs::path dir = out_dir / "frames" / id;
      fs::create_directories(dir, ec);
      if (ec) throw IngestionError("cannot create '" + dir.string() + "': " + ec.message());
      for (int t = 0; t < o.frames; ++t) write_png(dir / frame_filename(t), video.frames[static_cast<std::size_t>(t)]);
      m.rows.push_back({id, dir, method, split_for_index(i, o.videos_per_class)});
    }
  }
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

}  // namespace dfmtl::synth
