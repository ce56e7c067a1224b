#pragma once

// Job configuration: typed records plus strict JSON (de)serialization.
// Unknown sections and keys are rejected; `key.path=value` overrides are
// applied on top of the file contents before parsing.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgmim/model.hpp"
#include "sgmim/synthdata.hpp"

namespace sgmim {

using json = nlohmann::json;

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  double base_lr = 1e-3;
  double min_lr = 1e-5;
  std::optional<std::size_t> warmup_steps;  // default: 10% of steps
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double mask_ratio = 0.6;
  LossWeights loss_weights;
  MaskingStrategy masking = MaskingStrategy::selective_complement;
  std::uint64_t seed = 0;       // parameter init and mask stream
  std::uint64_t data_seed = 0;  // first scene seed of the training stream
  bool fixed_batch = false;     // reuse the first batch every step
  double grad_clip = 5.0;

  std::size_t warmup() const { return warmup_steps.value_or(steps / 10); }

  void validate() const {
    if (steps == 0) throw ConfigError("train.steps must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (warmup() >= steps) throw ConfigError("train.warmup_steps must be smaller than train.steps");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("train.mask_ratio must lie in (0,1)");
    if (!(base_lr > 0.0) || min_lr < 0.0 || min_lr > base_lr) throw ConfigError("train learning rates are invalid");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train betas must lie in [0,1)");
    if (weight_decay < 0.0 || grad_clip < 0.0) throw ConfigError("train.weight_decay and train.grad_clip must be >= 0");
    loss_weights.validate();
  }
};

struct ProbeConfig {
  std::uint64_t train_seed = 1'000'000;
  std::size_t train_count = 256;
  std::uint64_t val_seed = 2'000'000;
  std::size_t val_count = 64;
  std::size_t steps = 500;
  double lr = 1e-2;
  double min_depth = 1e-3;  // predictions are clamped to [min_depth, 1] before scoring

  SeedRange train_range() const { return {train_seed, train_count}; }
  SeedRange val_range() const { return {val_seed, val_count}; }

  void validate() const {
    if (train_count == 0 || val_count == 0) throw ConfigError("probe seed ranges must be non-empty");
    if (train_range().overlaps(val_range())) throw ConfigError("probe train and validation seed ranges overlap");
    if (steps == 0 || !(lr > 0.0)) throw ConfigError("probe.steps and probe.lr must be positive");
    if (!(min_depth > 0.0 && min_depth < 1.0)) throw ConfigError("probe.min_depth must lie in (0,1)");
  }
};

struct AnalyzeConfig {
  std::uint64_t seed = 3'000'000;
  std::size_t samples = 32;
  int block = -1;  // -1: final I_F; otherwise the output of that encoder block
  bool pgm = false;
};

enum class SweepAxis { all, masking, loss_weights };

struct SweepConfig {
  SweepAxis axis = SweepAxis::all;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t workers = 1;
};

struct GenDataConfig {
  std::uint64_t seed = 0;
  std::size_t count = 16;
};

struct JobConfig {
  SceneConfig scene;
  ModelConfig model;
  TrainConfig train;
  ProbeConfig probe;
  AnalyzeConfig analyze;
  SweepConfig sweep;
  GenDataConfig gen_data;

  void validate() const {
    scene.validate();
    model.validate();
    train.validate();
    probe.validate();
    if (model.grid.height != scene.height || model.grid.width != scene.width) {
      throw ConfigError("model grid does not match scene size");
    }
  }
};

// ---------------------------------------------------------------------------

inline const char* to_string(MaskingStrategy s) {
  return s == MaskingStrategy::selective_complement ? "selective" : "random_both";
}

inline MaskingStrategy parse_masking(const std::string& s) {
  if (s == "selective" || s == "selective_complement") return MaskingStrategy::selective_complement;
  if (s == "random_both" || s == "random") return MaskingStrategy::random_both;
  throw ConfigError("unknown masking strategy '" + s + "'");
}

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::masking: return "masking";
    case SweepAxis::loss_weights: return "loss_weights";
    default: return "all";
  }
}

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "all") return SweepAxis::all;
  if (s == "masking") return SweepAxis::masking;
  if (s == "loss_weights") return SweepAxis::loss_weights;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

namespace detail {

// Reads known keys from one config section and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + name_ + "." + key + "': " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!known_.count(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> known_;
};

}  // namespace detail

inline SceneConfig scene_from_json(const json& j) {
  SceneConfig c;
  detail::Section s(j, "scene");
  s.get("height", c.height);
  s.get("width", c.width);
  s.get("min_shapes", c.min_shapes);
  s.get("max_shapes", c.max_shapes);
  s.get("min_depth", c.min_depth);
  s.get("max_depth", c.max_depth);
  s.get("noise_std", c.noise_std);
  s.get("min_period", c.min_period);
  s.get("max_period", c.max_period);
  s.finish();
  return c;
}

inline json to_json(const SceneConfig& c) {
  return {{"height", c.height},       {"width", c.width},         {"min_shapes", c.min_shapes},
          {"max_shapes", c.max_shapes}, {"min_depth", c.min_depth}, {"max_depth", c.max_depth},
          {"noise_std", c.noise_std}, {"min_period", c.min_period}, {"max_period", c.max_period}};
}

// The grid's image size comes from the scene section.
inline ModelConfig model_from_json(const json& j, const SceneConfig& scene) {
  ModelConfig c;
  c.grid.height = scene.height;
  c.grid.width = scene.width;
  detail::Section s(j, "model");
  s.get("patch", c.grid.patch);
  s.get("depth", c.encoder.depth);
  s.get("width", c.encoder.width);
  s.get("heads", c.encoder.heads);
  s.get("mlp_ratio", c.encoder.mlp_ratio);
  s.get("norm_eps", c.encoder.norm_eps);
  s.finish();
  return c;
}

inline json to_json(const ModelConfig& c) {
  return {{"height", c.grid.height},     {"width_px", c.grid.width},     {"patch", c.grid.patch},
          {"depth", c.encoder.depth},    {"width", c.encoder.width},     {"heads", c.encoder.heads},
          {"mlp_ratio", c.encoder.mlp_ratio}, {"norm_eps", c.encoder.norm_eps}};
}

inline ModelConfig model_from_manifest(const json& j) {
  ModelConfig c;
  c.grid.height = j.at("height").get<std::size_t>();
  c.grid.width = j.at("width_px").get<std::size_t>();
  c.grid.patch = j.at("patch").get<std::size_t>();
  c.encoder.depth = j.at("depth").get<std::size_t>();
  c.encoder.width = j.at("width").get<std::size_t>();
  c.encoder.heads = j.at("heads").get<std::size_t>();
  c.encoder.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.encoder.norm_eps = j.at("norm_eps").get<double>();
  c.validate();
  return c;
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  detail::Section s(j, "train");
  s.get("steps", c.steps);
  s.get("batch_size", c.batch_size);
  s.get("base_lr", c.base_lr);
  s.get("min_lr", c.min_lr);
  json warmup;
  s.get("warmup_steps", warmup);
  if (!warmup.is_null()) {
    if (!warmup.is_number_unsigned()) throw ConfigError("config key 'train.warmup_steps' must be a non-negative integer");
    c.warmup_steps = warmup.get<std::size_t>();
  }
  s.get("weight_decay", c.weight_decay);
  s.get("beta1", c.beta1);
  s.get("beta2", c.beta2);
  s.get("mask_ratio", c.mask_ratio);
  s.get("lambda_image", c.loss_weights.image);
  s.get("lambda_struct", c.loss_weights.structured);
  std::string masking = to_string(c.masking);
  s.get("masking", masking);
  c.masking = parse_masking(masking);
  s.get("seed", c.seed);
  s.get("data_seed", c.data_seed);
  s.get("fixed_batch", c.fixed_batch);
  s.get("grad_clip", c.grad_clip);
  s.finish();
  return c;
}

inline json to_json(const TrainConfig& c) {
  json j = {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"base_lr", c.base_lr},
            {"min_lr", c.min_lr},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"mask_ratio", c.mask_ratio},
            {"lambda_image", c.loss_weights.image},
            {"lambda_struct", c.loss_weights.structured},
            {"masking", to_string(c.masking)},
            {"seed", c.seed},
            {"data_seed", c.data_seed},
            {"fixed_batch", c.fixed_batch},
            {"grad_clip", c.grad_clip}};
  j["warmup_steps"] = c.warmup_steps ? json(*c.warmup_steps) : json(nullptr);
  return j;
}

inline ProbeConfig probe_from_json(const json& j) {
  ProbeConfig c;
  detail::Section s(j, "probe");
  s.get("train_seed", c.train_seed);
  s.get("train_count", c.train_count);
  s.get("val_seed", c.val_seed);
  s.get("val_count", c.val_count);
  s.get("steps", c.steps);
  s.get("lr", c.lr);
  s.get("min_depth", c.min_depth);
  s.finish();
  return c;
}

inline json to_json(const ProbeConfig& c) {
  return {{"train_seed", c.train_seed}, {"train_count", c.train_count}, {"val_seed", c.val_seed},
          {"val_count", c.val_count},   {"steps", c.steps},             {"lr", c.lr},
          {"min_depth", c.min_depth}};
}

inline AnalyzeConfig analyze_from_json(const json& j) {
  AnalyzeConfig c;
  detail::Section s(j, "analyze");
  s.get("seed", c.seed);
  s.get("samples", c.samples);
  s.get("block", c.block);
  s.get("pgm", c.pgm);
  s.finish();
  if (c.samples == 0) throw ConfigError("analyze.samples must be positive");
  return c;
}

inline SweepConfig sweep_from_json(const json& j) {
  SweepConfig c;
  detail::Section s(j, "sweep");
  std::string axis = to_string(c.axis);
  s.get("axis", axis);
  c.axis = parse_axis(axis);
  s.get("seeds", c.seeds);
  s.get("workers", c.workers);
  s.finish();
  if (c.seeds.empty()) throw ConfigError("sweep.seeds must list at least one seed");
  if (c.workers == 0) throw ConfigError("sweep.workers must be at least 1");
  return c;
}

inline GenDataConfig gen_data_from_json(const json& j) {
  GenDataConfig c;
  detail::Section s(j, "gen_data");
  s.get("seed", c.seed);
  s.get("count", c.count);
  s.finish();
  return c;
}

inline JobConfig job_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  static const std::set<std::string> sections{"scene", "model", "train", "probe", "analyze", "sweep", "gen_data"};
  for (const auto& [key, _] : j.items()) {
    if (!sections.count(key)) throw ConfigError("unknown config section '" + key + "'");
  }
  const json empty = json::object();
  auto section = [&](const char* name) -> const json& { return j.contains(name) ? j.at(name) : empty; };
  JobConfig c;
  c.scene = scene_from_json(section("scene"));
  c.model = model_from_json(section("model"), c.scene);
  c.train = train_from_json(section("train"));
  c.probe = probe_from_json(section("probe"));
  c.analyze = analyze_from_json(section("analyze"));
  c.sweep = sweep_from_json(section("sweep"));
  c.gen_data = gen_data_from_json(section("gen_data"));
  c.validate();
  return c;
}

// Applies "section.key=value" on top of `base`. The value is parsed as JSON
// when possible, otherwise taken as a string.
inline void apply_override(json& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &base;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace sgmim
