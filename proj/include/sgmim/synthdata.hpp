#pragma once

// Procedural paired (image, depth) scenes: textured rectangles and discs at
// random depths over a dark background plane at depth 1.0. Appearance is
// shaded by (1.25 - 0.25 z) so image content carries depth signal.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "sgmim/patch_mask.hpp"
#include "sgmim/rng.hpp"

namespace sgmim {

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_shapes = 3;
  std::size_t max_shapes = 8;
  double min_depth = 0.1;
  double max_depth = 0.9;
  double noise_std = 0.02;
  std::size_t min_period = 4;
  std::size_t max_period = 12;

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
    if (min_shapes > max_shapes) throw ConfigError("scene shape count range is empty");
    if (!(min_depth > 0.0 && min_depth <= max_depth && max_depth < 1.0)) {
      throw ConfigError("scene depth range must be a non-empty interval inside (0,1)");
    }
    if (!(noise_std >= 0.0)) throw ConfigError("scene noise_std must be non-negative");
    if (min_period < 2 || min_period > max_period) throw ConfigError("scene texture period range is invalid");
  }
};

struct Scene {
  Tensor<float> image;  // [H, W, 3] in [0, 1]
  Tensor<float> depth;  // [H, W, 1] in (0, 1]
  std::uint64_t seed = 0;
};

enum class ShapeKind { rectangle, disc };
enum class StripeOrientation { horizontal, vertical, diagonal };

struct SceneShape {
  ShapeKind kind = ShapeKind::rectangle;
  // Rectangle: [x0, x1) x [y0, y1). Disc: centre (cx, cy), radius r.
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx = 0, cy = 0, r = 0;
  double depth = 0.5;
  std::array<double, 3> albedo{0.5, 0.5, 0.5};
  std::size_t period = 8;
  StripeOrientation stripes = StripeOrientation::horizontal;

  bool covers(double x, double y) const {
    if (kind == ShapeKind::rectangle) return x >= x0 && x < x1 && y >= y0 && y < y1;
    return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
  }

  double texture(std::size_t x, std::size_t y) const {
    std::size_t phase = 0;
    switch (stripes) {
      case StripeOrientation::horizontal: phase = y % period; break;
      case StripeOrientation::vertical: phase = x % period; break;
      case StripeOrientation::diagonal: phase = (x + y) % period; break;
    }
    return 2 * phase < period ? 1.0 : 0.6;
  }
};

struct SceneLayout {
  std::array<double, 3> background{0.25, 0.25, 0.25};
  std::vector<SceneShape> shapes;
};

inline constexpr double kBackgroundDepth = 1.0;

inline double shading(double z) { return 1.25 - 0.25 * z; }

// Nearest shape wins per pixel; noise is drawn from `noise_rng` in raster order.
inline Scene render_scene(const SceneLayout& layout, const SceneConfig& cfg, Rng& noise_rng) {
  const std::size_t h = cfg.height, w = cfg.width;
  Scene scene;
  scene.image = Tensor<float>({h, w, 3});
  scene.depth = Tensor<float>({h, w, 1});
  // Painter's order: far to near, so nearer shapes overwrite.
  std::vector<const SceneShape*> order;
  for (const auto& s : layout.shapes) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const SceneShape* a, const SceneShape* b) { return a->depth > b->depth; });
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double z = kBackgroundDepth;
      std::array<double, 3> color = layout.background;
      double tex = 1.0;
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (const SceneShape* s : order) {
        if (s->covers(px, py)) {
          z = s->depth;
          color = s->albedo;
          tex = s->texture(x, y);
        }
      }
      scene.depth[y * w + x] = static_cast<float>(z);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = color[c] * tex * shading(z);
        if (cfg.noise_std > 0) v += cfg.noise_std * standard_normal(noise_rng);
        scene.image[(y * w + x) * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return scene;
}

inline SceneLayout sample_layout(Rng& rng, const SceneConfig& cfg) {
  SceneLayout layout;
  const double g = uniform_real(rng, 0.15, 0.35);
  layout.background = {g, g, g};
  const auto k = cfg.min_shapes + static_cast<std::size_t>(uniform_below(rng, cfg.max_shapes - cfg.min_shapes + 1));
  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);
  for (std::size_t i = 0; i < k; ++i) {
    SceneShape s;
    s.kind = uniform_below(rng, 2) == 0 ? ShapeKind::rectangle : ShapeKind::disc;
    if (s.kind == ShapeKind::rectangle) {
      const double sw = uniform_real(rng, w / 8, w / 2), sh = uniform_real(rng, h / 8, h / 2);
      s.x0 = uniform_real(rng, -sw / 2, w - sw / 2);
      s.y0 = uniform_real(rng, -sh / 2, h - sh / 2);
      s.x1 = s.x0 + sw;
      s.y1 = s.y0 + sh;
    } else {
      s.r = uniform_real(rng, std::min(w, h) / 16, std::min(w, h) / 4);
      s.cx = uniform_real(rng, 0, w);
      s.cy = uniform_real(rng, 0, h);
    }
    s.depth = uniform_real(rng, cfg.min_depth, cfg.max_depth);
    for (auto& a : s.albedo) a = uniform_real(rng, 0.3, 0.9);
    s.period = cfg.min_period + static_cast<std::size_t>(uniform_below(rng, cfg.max_period - cfg.min_period + 1));
    s.stripes = static_cast<StripeOrientation>(uniform_below(rng, 3));
    layout.shapes.push_back(s);
  }
  return layout;
}

inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng layout_rng(mix_seed(seed, 0x5ce7e));
  Rng noise_rng(mix_seed(seed, 0x7015e));
  Scene scene = render_scene(sample_layout(layout_rng, cfg), cfg, noise_rng);
  scene.seed = seed;
  return scene;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  std::array<double, 3> image_mean{0, 0, 0};
  std::array<double, 3> image_std{1, 1, 1};
  double depth_mean = 0.0;
  double depth_std = 1.0;
};

inline constexpr std::uint64_t kCalibrationFirstSeed = 0;
inline constexpr std::size_t kCalibrationCount = 1024;

inline NormStats compute_norm_stats(std::span<const Scene> scenes) {
  if (scenes.empty()) throw ConfigError("normalization statistics need at least one scene");
  std::array<double, 3> s{}, ss{};
  double ds = 0, dss = 0;
  std::size_t pixels = 0;
  for (const auto& sc : scenes) {
    const std::size_t n = sc.depth.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = sc.image[i * 3 + c];
        s[c] += v;
        ss[c] += v * v;
      }
      ds += sc.depth[i];
      dss += double(sc.depth[i]) * sc.depth[i];
    }
    pixels += n;
  }
  NormStats st;
  const double np = static_cast<double>(pixels);
  for (std::size_t c = 0; c < 3; ++c) {
    st.image_mean[c] = s[c] / np;
    const double var = std::max(0.0, ss[c] / np - st.image_mean[c] * st.image_mean[c]);
    st.image_std[c] = std::sqrt(var);
    if (!(st.image_std[c] > 1e-12)) throw ConfigError("image channel " + std::to_string(c) + " has zero std");
  }
  st.depth_mean = ds / np;
  st.depth_std = std::sqrt(std::max(0.0, dss / np - st.depth_mean * st.depth_mean));
  return st;
}

// Statistics over the fixed calibration seed range [0, 1023].
inline NormStats calibration_stats(const SceneConfig& cfg) {
  std::vector<Scene> scenes;
  scenes.reserve(kCalibrationCount);
  for (std::size_t i = 0; i < kCalibrationCount; ++i) scenes.push_back(generate_scene(kCalibrationFirstSeed + i, cfg));
  return compute_norm_stats(scenes);
}

struct NormalizedScene {
  Tensor<float> image;      // standardized per channel
  Tensor<float> structure;  // depth, pass-through
};

inline NormalizedScene normalize(const Scene& scene, const NormStats& stats) {
  for (double sd : stats.image_std) {
    if (!(sd > 0)) throw ConfigError("normalize: zero std in statistics");
  }
  NormalizedScene out{scene.image, scene.depth};
  for (std::size_t i = 0; i < out.image.size(); ++i) {
    const std::size_t c = i % 3;
    out.image[i] = static_cast<float>((scene.image[i] - stats.image_mean[c]) / stats.image_std[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

struct SeedRange {
  std::uint64_t first = 0;
  std::uint64_t count = 0;

  std::uint64_t end() const { return first + count; }
  bool overlaps(const SeedRange& o) const { return count > 0 && o.count > 0 && first < o.end() && o.first < end(); }
};

struct SceneBatch {
  Tensor<float> images;  // [B, H, W, 3], normalized
  Tensor<float> depths;  // [B, H, W, 1]
  std::vector<std::uint64_t> seeds;
};

inline SceneBatch make_batch(std::span<const std::uint64_t> seeds, const SceneConfig& cfg, const NormStats& stats) {
  const std::size_t b = seeds.size(), hw = cfg.height * cfg.width;
  SceneBatch batch;
  batch.images = Tensor<float>({b, cfg.height, cfg.width, 3});
  batch.depths = Tensor<float>({b, cfg.height, cfg.width, 1});
  batch.seeds.assign(seeds.begin(), seeds.end());
  for (std::size_t i = 0; i < b; ++i) {
    const auto n = normalize(generate_scene(seeds[i], cfg), stats);
    std::copy_n(n.image.ptr(), hw * 3, batch.images.ptr() + i * hw * 3);
    std::copy_n(n.structure.ptr(), hw, batch.depths.ptr() + i * hw);
  }
  return batch;
}

// Consecutive, disjoint seed blocks starting at `first_seed`.
class SceneStream {
 public:
  SceneStream(std::uint64_t first_seed, SceneConfig cfg, NormStats stats, std::size_t batch_size)
      : next_(first_seed), cfg_(std::move(cfg)), stats_(stats), batch_size_(batch_size) {
    if (batch_size_ == 0) throw ConfigError("batch_size must be at least 1");
    cfg_.validate();
  }

  SceneBatch next() {
    std::vector<std::uint64_t> seeds(batch_size_);
    for (auto& s : seeds) s = next_++;
    return make_batch(seeds, cfg_, stats_);
  }

  std::uint64_t position() const noexcept { return next_; }

 private:
  std::uint64_t next_;
  SceneConfig cfg_;
  NormStats stats_;
  std::size_t batch_size_;
};

// ---------------------------------------------------------------------------
// Scene files: "SGMIMSCN", H and W as u32 LE, image floats (H*W*3), depth floats (H*W).

inline constexpr char kSceneMagic[8] = {'S', 'G', 'M', 'I', 'M', 'S', 'C', 'N'};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline float get_f32(const unsigned char* p) {
  const std::uint32_t bits = get_u32(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline void write_scene_file(const std::filesystem::path& path, const Scene& scene) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kSceneMagic, 8);
  detail::put_u32(os, static_cast<std::uint32_t>(scene.image.dim(0)));
  detail::put_u32(os, static_cast<std::uint32_t>(scene.image.dim(1)));
  for (float v : scene.image.data()) detail::put_f32(os, v);
  for (float v : scene.depth.data()) detail::put_f32(os, v);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline Scene read_scene_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kSceneMagic, 8) != 0) {
    throw IntegrityError(path.string() + " is not a scene file");
  }
  const std::size_t h = detail::get_u32(bytes.data() + 8), w = detail::get_u32(bytes.data() + 12);
  if (h == 0 || w == 0 || bytes.size() != 16 + h * w * 4 * 4) throw IntegrityError(path.string() + " is truncated");
  Scene scene;
  scene.image = Tensor<float>({h, w, 3});
  scene.depth = Tensor<float>({h, w, 1});
  const unsigned char* p = bytes.data() + 16;
  for (auto& v : scene.image.data()) v = detail::get_f32(p), p += 4;
  for (auto& v : scene.depth.data()) v = detail::get_f32(p), p += 4;
  return scene;
}

}  // namespace sgmim
