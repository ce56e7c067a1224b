#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace sgmim;

TEST(Config, EmptyDocumentGivesDeskDefaults) {
  const auto c = job_from_json(json::object());
  EXPECT_EQ(c.model.grid.height, 64u);
  EXPECT_EQ(c.model.grid.patch, 8u);
  EXPECT_EQ(c.model.encoder.depth, 4u);
  EXPECT_EQ(c.model.encoder.width, 64u);
  EXPECT_EQ(c.train.steps, 3000u);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(c.train.warmup(), 300u);
  EXPECT_EQ(c.train.mask_ratio, 0.6);
  EXPECT_EQ(c.train.masking, MaskingStrategy::selective_complement);
  EXPECT_EQ(c.sweep.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
}

TEST(Config, SectionsAreParsed) {
  const auto j = json::parse(R"({
    "scene": {"height": 32, "width": 32, "noise_std": 0.0},
    "model": {"patch": 4, "depth": 2, "width": 32, "heads": 2},
    "train": {"steps": 50, "warmup_steps": 0, "masking": "random_both", "lambda_struct": 0.1, "fixed_batch": true},
    "probe": {"steps": 10, "val_seed": 5000},
    "analyze": {"block": 1, "samples": 4, "pgm": true},
    "sweep": {"axis": "masking", "seeds": [3], "workers": 2},
    "gen_data": {"count": 2}
  })");
  const auto c = job_from_json(j);
  EXPECT_EQ(c.model.grid.height, 32u);
  EXPECT_EQ(c.model.tokens(), 64u);
  EXPECT_EQ(c.train.warmup(), 0u);
  EXPECT_EQ(c.train.masking, MaskingStrategy::random_both);
  EXPECT_EQ(c.train.loss_weights.structured, 0.1);
  EXPECT_TRUE(c.train.fixed_batch);
  EXPECT_EQ(c.probe.val_seed, 5000u);
  EXPECT_EQ(c.analyze.block, 1);
  EXPECT_EQ(c.sweep.axis, SweepAxis::masking);
  EXPECT_EQ(c.sweep.workers, 2u);
  EXPECT_EQ(c.gen_data.count, 2u);
}

TEST(Config, RejectsUnknownOrMistypedKeys) {
  EXPECT_THROW(job_from_json(json::parse(R"({"trian": {}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"train": {"stepz": 3}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"train": {"steps": "many"}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"train": {"masking": "checkerboard"}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"train": {"warmup_steps": -1}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse("[1, 2]")), ConfigError);
}

TEST(Config, RejectsInvalidValues) {
  EXPECT_THROW(job_from_json(json::parse(R"({"train": {"steps": 10, "warmup_steps": 10}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"train": {"mask_ratio": 1.0}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"train": {"lambda_image": 0, "lambda_struct": 0}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"probe": {"val_seed": 1000100}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"model": {"heads": 5}})")), ConfigError);
  EXPECT_THROW(job_from_json(json::parse(R"({"model": {"patch": 7}})")), GeometryError);
  EXPECT_THROW(job_from_json(json::parse(R"({"sweep": {"seeds": []}})")), ConfigError);
}

TEST(Config, TrainRoundTrip) {
  TrainConfig t;
  t.steps = 77;
  t.warmup_steps = 5;
  t.masking = MaskingStrategy::random_both;
  t.loss_weights = {0.5, 0.01};
  t.seed = 9;
  t.fixed_batch = true;
  const auto back = train_from_json(to_json(t));
  EXPECT_EQ(back.steps, 77u);
  EXPECT_EQ(back.warmup_steps, std::optional<std::size_t>(5));
  EXPECT_EQ(back.masking, MaskingStrategy::random_both);
  EXPECT_EQ(back.loss_weights.structured, 0.01);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_TRUE(back.fixed_batch);
  EXPECT_FALSE(train_from_json(to_json(TrainConfig{})).warmup_steps.has_value());

  SceneConfig s;
  s.noise_std = 0.5;
  EXPECT_EQ(scene_from_json(to_json(s)).noise_std, 0.5);
  ModelConfig m;
  m.encoder.heads = 8;
  EXPECT_EQ(model_from_manifest(to_json(m)).encoder.heads, 8u);
}

TEST(Overrides, AssignTypedValuesAtPaths) {
  json j = json::object();
  apply_override(j, "train.steps=12");
  apply_override(j, "train.masking=random_both");
  apply_override(j, "train.fixed_batch=true");
  apply_override(j, "sweep.seeds=[4,5]");
  EXPECT_EQ(j["train"]["steps"], 12);
  EXPECT_EQ(j["train"]["masking"], "random_both");
  EXPECT_EQ(j["train"]["fixed_batch"], true);
  const auto c = job_from_json(j);
  EXPECT_EQ(c.train.steps, 12u);
  EXPECT_EQ(c.sweep.seeds, (std::vector<std::uint64_t>{4, 5}));
  apply_override(j, "train.steps=30");
  EXPECT_EQ(j["train"]["steps"], 30);
}

TEST(Overrides, Malformed) {
  json j = {{"train", 3}};
  EXPECT_THROW(apply_override(j, "train.steps"), ConfigError);
  EXPECT_THROW(apply_override(j, "=4"), ConfigError);
  EXPECT_THROW(apply_override(j, "train..steps=4"), ConfigError);
  EXPECT_THROW(apply_override(j, "train.steps=4"), ConfigError);
}

TEST(Config, EnumNames) {
  EXPECT_EQ(parse_masking("selective"), MaskingStrategy::selective_complement);
  EXPECT_EQ(parse_masking("random"), MaskingStrategy::random_both);
  EXPECT_STREQ(to_string(MaskingStrategy::random_both), "random_both");
  EXPECT_EQ(parse_axis("loss_weights"), SweepAxis::loss_weights);
  EXPECT_THROW(parse_axis("depth"), ConfigError);
}
