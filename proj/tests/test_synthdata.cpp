#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

using namespace sgmim;
using namespace sgmim::testing;

TEST(Scenes, DeterministicPerSeed) {
  const SceneConfig cfg;
  const auto a = generate_scene(42, cfg), b = generate_scene(42, cfg), c = generate_scene(43, cfg);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_NE(a.image, c.image);
  EXPECT_EQ(a.seed, 42u);
}

TEST(Scenes, ValueRanges) {
  const SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_scene(seed, cfg);
    for (float v : s.image.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float z : s.depth.data()) {
      ASSERT_TRUE(z == 1.0f || (z >= cfg.min_depth - 1e-6 && z <= cfg.max_depth + 1e-6)) << z;
    }
  }
}

TEST(Scenes, RenderHandLayout) {
  SceneConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.noise_std = 0.0;
  SceneLayout layout;
  SceneShape far;
  far.x0 = 0, far.y0 = 0, far.x1 = 6, far.y1 = 6;
  far.depth = 0.8;
  far.albedo = {0.5, 0.5, 0.5};
  far.period = 4;
  SceneShape near = far;
  near.kind = ShapeKind::disc;
  near.cx = 4, near.cy = 4, near.r = 1.2;
  near.depth = 0.2;
  near.albedo = {0.9, 0.3, 0.6};
  near.stripes = StripeOrientation::vertical;
  layout.shapes = {near, far};  // painter's order must not depend on list order
  Rng rng(0);
  const auto s = render_scene(layout, cfg, rng);
  auto depth = [&](std::size_t x, std::size_t y) { return s.depth[y * 8 + x]; };
  auto red = [&](std::size_t x, std::size_t y) { return s.image[(y * 8 + x) * 3]; };
  EXPECT_FLOAT_EQ(depth(4, 4), 0.2f);
  EXPECT_FLOAT_EQ(depth(1, 1), 0.8f);
  EXPECT_FLOAT_EQ(depth(7, 7), 1.0f);
  // Horizontal stripes of period 4: rows 0-1 bright, rows 2-3 dark.
  EXPECT_FLOAT_EQ(red(1, 1), static_cast<float>(0.5 * 1.0 * shading(0.8)));
  EXPECT_FLOAT_EQ(red(1, 2), static_cast<float>(0.5 * 0.6 * shading(0.8)));
  // Vertical stripes on the disc: column 4 has phase 0. Red is bright enough to clip.
  EXPECT_FLOAT_EQ(red(4, 4), 1.0f);
  EXPECT_FLOAT_EQ(s.image[(4 * 8 + 4) * 3 + 1], static_cast<float>(0.3 * shading(0.2)));
  EXPECT_FLOAT_EQ(red(7, 7), static_cast<float>(0.25 * shading(1.0)));
}

TEST(Scenes, LayoutShapeCount) {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto l = sample_layout(rng, cfg);
    EXPECT_GE(l.shapes.size(), cfg.min_shapes);
    EXPECT_LE(l.shapes.size(), cfg.max_shapes);
  }
}

TEST(Scenes, ConfigValidation) {
  SceneConfig cfg;
  cfg.max_depth = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.min_shapes = 9;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.min_period = 1;
  EXPECT_THROW(generate_scene(0, cfg), ConfigError);
}

TEST(Normalization, StatsMatchDirectComputation) {
  SceneConfig cfg;
  cfg.height = cfg.width = 16;
  std::vector<Scene> scenes{generate_scene(1, cfg), generate_scene(2, cfg)};
  const auto st = compute_norm_stats(scenes);
  double s = 0, ss = 0;
  std::size_t n = 0;
  for (const auto& sc : scenes) {
    for (std::size_t i = 1; i < sc.image.size(); i += 3) s += sc.image[i], ss += double(sc.image[i]) * sc.image[i], ++n;
  }
  const double mean = s / n;
  EXPECT_NEAR(st.image_mean[1], mean, 1e-12);
  EXPECT_NEAR(st.image_std[1], std::sqrt(ss / n - mean * mean), 1e-9);
}

TEST(Normalization, CalibratedImagesAreStandardized) {
  const SceneConfig cfg;
  const auto st = calibration_stats(cfg);
  std::vector<std::uint64_t> seeds(64);
  std::iota(seeds.begin(), seeds.end(), 0);
  const auto batch = make_batch(seeds, cfg, st);
  std::array<double, 3> s{}, ss{};
  const std::size_t pixels = batch.images.size() / 3;
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    s[i % 3] += batch.images[i];
    ss[i % 3] += double(batch.images[i]) * batch.images[i];
  }
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(s[c] / pixels, 0.0, 0.1);
    EXPECT_NEAR(std::sqrt(ss[c] / pixels), 1.0, 0.1);
  }
  // Depth passes through unchanged.
  const auto raw = generate_scene(5, cfg);
  for (std::size_t i = 0; i < raw.depth.size(); ++i) ASSERT_EQ(batch.depths[5 * raw.depth.size() + i], raw.depth[i]);
}

TEST(Batching, StreamConsumesDisjointSeeds) {
  SceneConfig cfg;
  cfg.height = cfg.width = 16;
  const auto st = calibration_stats(cfg);
  SceneStream stream(100, cfg, st, 4);
  const auto a = stream.next(), b = stream.next();
  EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{100, 101, 102, 103}));
  EXPECT_EQ(b.seeds, (std::vector<std::uint64_t>{104, 105, 106, 107}));
  EXPECT_EQ(stream.position(), 108u);
  const std::vector<std::uint64_t> one{105};
  const auto single = make_batch(one, cfg, st);
  for (std::size_t i = 0; i < single.images.size(); ++i) ASSERT_EQ(b.images[single.images.size() + i], single.images[i]);
  EXPECT_THROW(SceneStream(0, cfg, st, 0), ConfigError);
}

TEST(Batching, SeedRangeOverlap) {
  EXPECT_TRUE((SeedRange{0, 10}.overlaps({9, 5})));
  EXPECT_FALSE((SeedRange{0, 10}.overlaps({10, 5})));
  EXPECT_FALSE((SeedRange{0, 0}.overlaps({0, 5})));
}

TEST(SceneFiles, RoundTripAndCorruption) {
  const auto dir = scratch_dir("scenes");
  SceneConfig cfg;
  cfg.height = 16;
  cfg.width = 24;
  const auto s = generate_scene(9, cfg);
  write_scene_file(dir / "a.bin", s);
  const auto r = read_scene_file(dir / "a.bin");
  EXPECT_EQ(r.image, s.image);
  EXPECT_EQ(r.depth, s.depth);
  EXPECT_EQ(std::filesystem::file_size(dir / "a.bin"), 16u + 16 * 24 * 4 * 4);

  std::filesystem::resize_file(dir / "a.bin", 100);
  EXPECT_THROW(read_scene_file(dir / "a.bin"), IntegrityError);
  std::ofstream(dir / "b.bin") << "NOTASCENEFILE...";
  EXPECT_THROW(read_scene_file(dir / "b.bin"), IntegrityError);
}
