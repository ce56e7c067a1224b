#pragma once

// Deterministic pre-training loop: scene stream -> masks -> forward/backward
// -> global-norm clipping -> AdamW with warmup + cosine schedule.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sgmim/checkpoint.hpp"
#include "sgmim/config.hpp"
#include "sgmim/model.hpp"
#include "sgmim/optim.hpp"
#include "sgmim/synthdata.hpp"

namespace sgmim {

struct StepRecord {
  std::size_t step = 0;  // 0-based index of the completed step
  double lr = 0.0;
  LossReport loss;
};

inline json to_json(const NormStats& s) {
  return {{"image_mean", s.image_mean}, {"image_std", s.image_std}, {"depth_mean", s.depth_mean}, {"depth_std", s.depth_std}};
}

inline NormStats norm_stats_from_json(const json& j) {
  NormStats s;
  s.image_mean = j.at("image_mean").get<std::array<double, 3>>();
  s.image_std = j.at("image_std").get<std::array<double, 3>>();
  s.depth_mean = j.at("depth_mean").get<double>();
  s.depth_std = j.at("depth_std").get<double>();
  return s;
}

inline LrSchedule schedule_of(const TrainConfig& c) { return {c.steps, c.warmup(), c.base_lr, c.min_lr}; }

template <typename T>
class Trainer {
 public:
  Trainer(ModelConfig model, SceneConfig scene, TrainConfig train, std::optional<NormStats> stats = std::nullopt,
          InitOptions init = {})
      : model_(std::move(model)), scene_(std::move(scene)), train_(std::move(train)) {
    model_.validate();
    scene_.validate();
    train_.validate();
    if (model_.grid.height != scene_.height || model_.grid.width != scene_.width) {
      throw ConfigError("model grid does not match scene size");
    }
    stats_ = stats ? *stats : calibration_stats(scene_);
    params_ = init_model_params<T>(model_, train_.seed, init);
    mask_rng_.seed(mix_seed(train_.seed, 0x3a5c));
  }

  const ModelConfig& model() const noexcept { return model_; }
  const SceneConfig& scene() const noexcept { return scene_; }
  const TrainConfig& train_config() const noexcept { return train_; }
  const NormStats& stats() const noexcept { return stats_; }
  std::size_t step() const noexcept { return step_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  const std::map<std::string, AdamMoments<T>>& moments() const noexcept { return moments_; }

  std::string rng_state() const {
    std::ostringstream os;
    os << mask_rng_;
    return os.str();
  }

  // Seeds of the scenes consumed by step `s`.
  std::vector<std::uint64_t> batch_seeds(std::size_t s) const {
    std::vector<std::uint64_t> seeds(train_.batch_size);
    const std::uint64_t base = train_.data_seed + (train_.fixed_batch ? 0 : s * train_.batch_size);
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = base + i;
    return seeds;
  }

  // Builds the batch for the current step, drawing one fresh mask pair per sample.
  PretrainBatch<T> next_batch() {
    const auto scenes = make_batch(batch_seeds(step_), scene_, stats_);
    return assemble(scenes);
  }

  PretrainBatch<T> assemble(const SceneBatch& scenes) {
    const std::size_t b = scenes.seeds.size(), n = model_.tokens();
    PretrainBatch<T> batch;
    batch.batch = b;
    batch.image_patches = patchify_batch(scenes.images, model_.grid).template cast<T>();
    batch.struct_patches = patchify_batch(scenes.depths, model_.grid).template cast<T>();
    batch.image_mask.reserve(b * n);
    batch.struct_mask.reserve(b * n);
    for (std::size_t i = 0; i < b; ++i) {
      const auto pair = sample_mask_pair(n, train_.mask_ratio, train_.masking, mask_rng_());
      batch.image_mask.insert(batch.image_mask.end(), pair.image.begin(), pair.image.end());
      batch.struct_mask.insert(batch.struct_mask.end(), pair.structured.begin(), pair.structured.end());
    }
    return batch;
  }

  struct Gradients {
    LossReport report;
    std::map<std::string, Tensor<T>> grads;
  };

  Gradients compute_gradients(const PretrainBatch<T>& batch, Branches branches = Branches::full) const {
    Tape<T> tape;
    auto out = pretrain_forward(tape, params_, model_, batch, train_.loss_weights, branches);
    tape.backward(out.total);
    return {out.report, tape.param_grads()};
  }

  // One optimizer step on an explicit batch.
  StepRecord update(const PretrainBatch<T>& batch) {
    auto g = compute_gradients(batch);
    if (!std::isfinite(g.report.total)) throw NumericError("non-finite loss at step " + std::to_string(step_));
    clip_global_norm(g.grads, train_.grad_clip);
    AdamHyper h;
    h.lr = cosine_lr(step_ + 1, schedule_of(train_));
    h.beta1 = train_.beta1;
    h.beta2 = train_.beta2;
    for (auto& [name, grad] : g.grads) {
      // Decay applies to weight matrices only; vectors (biases, norms, mask token) are exempt.
      h.weight_decay = params_.at(name).rank() >= 2 ? train_.weight_decay : 0.0;
      adamw_update(params_.at(name), grad, moments_[name], step_ + 1, h);
    }
    StepRecord rec{step_, h.lr, g.report};
    ++step_;
    return rec;
  }

  StepRecord train_step() { return update(next_batch()); }

  // Runs until `step() == until`, invoking `on_step` after every update.
  void run(std::size_t until, const std::function<void(const StepRecord&)>& on_step = {}) {
    while (step_ < until) {
      const auto rec = train_step();
      if (on_step) on_step(rec);
    }
  }

  // Restores the mutable training state (used by checkpoint loading).
  void restore(ParamStore<T> params, std::map<std::string, AdamMoments<T>> moments, std::size_t step,
               const std::string& rng_state) {
    params_ = std::move(params);
    moments_ = std::move(moments);
    step_ = step;
    std::istringstream is(rng_state);
    is >> mask_rng_;
    if (!is) throw IntegrityError("checkpoint RNG state is malformed");
  }

 private:
  ModelConfig model_;
  SceneConfig scene_;
  TrainConfig train_;
  NormStats stats_;
  ParamStore<T> params_;
  std::map<std::string, AdamMoments<T>> moments_;
  Rng mask_rng_;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Persistence

inline void save_checkpoint(const Trainer<float>& trainer, const std::filesystem::path& path) {
  TensorFile file;
  for (const auto& [name, t] : trainer.params()) file.tensors.emplace(name, t);
  for (const auto& [name, m] : trainer.moments()) {
    file.tensors.emplace("adam.m." + name, m.m);
    file.tensors.emplace("adam.v." + name, m.v);
  }
  file.meta = {{"kind", "full"},
               {"model", to_json(trainer.model())},
               {"scene", to_json(trainer.scene())},
               {"train", to_json(trainer.train_config())},
               {"norm_stats", to_json(trainer.stats())},
               {"step", trainer.step()},
               {"rng_state", trainer.rng_state()}};
  write_tensor_file(path, file);
}

inline Trainer<float> load_checkpoint(const std::filesystem::path& path) {
  auto file = read_tensor_file(path);
  try {
    if (file.meta.at("kind") != "full") throw IntegrityError("checkpoint is not a full training checkpoint");
    const auto model = model_from_manifest(file.meta.at("model"));
    const auto scene = scene_from_json(file.meta.at("scene"));
    const auto train = train_from_json(file.meta.at("train"));
    Trainer<float> trainer(model, scene, train, norm_stats_from_json(file.meta.at("norm_stats")));
    ParamStore<float> params;
    std::map<std::string, AdamMoments<float>> moments;
    for (const auto& [name, fresh] : trainer.params()) {
      auto it = file.tensors.find(name);
      if (it == file.tensors.end()) throw IntegrityError("checkpoint is missing tensor '" + name + "'");
      if (it->second.shape() != fresh.shape()) throw IntegrityError("tensor '" + name + "' has the wrong shape");
      params.emplace(name, it->second);
      auto m = file.tensors.find("adam.m." + name), v = file.tensors.find("adam.v." + name);
      if ((m == file.tensors.end()) != (v == file.tensors.end())) {
        throw IntegrityError("optimizer state for '" + name + "' is incomplete");
      }
      if (m != file.tensors.end()) moments.emplace(name, AdamMoments<float>{m->second, v->second});
    }
    if (file.tensors.size() != params.size() + 2 * moments.size()) {
      throw IntegrityError("checkpoint holds tensors that do not belong to the model");
    }
    trainer.restore(std::move(params), std::move(moments), file.meta.at("step").get<std::size_t>(),
                    file.meta.at("rng_state").get<std::string>());
    return trainer;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("invalid configuration in checkpoint: ") + e.what());
  }
}

// Frozen encoder plus what is needed to feed it.
struct EncoderCheckpoint {
  ModelConfig model;
  SceneConfig scene;
  NormStats stats;
  ParamStore<float> params;
};

inline std::vector<std::string> encoder_param_names(const ModelConfig& model) {
  std::vector<std::string> names;
  for (const auto& [name, _] : init_model_params<float>(model, 0)) {
    if (is_encoder_param(name)) names.push_back(name);
  }
  return names;
}

// Accepts both full and encoder-only files; only encoder tensors are kept.
inline EncoderCheckpoint load_encoder(const std::filesystem::path& path) {
  auto file = read_tensor_file(path);
  try {
    EncoderCheckpoint ck;
    ck.model = model_from_manifest(file.meta.at("model"));
    ck.scene = scene_from_json(file.meta.at("scene"));
    ck.stats = norm_stats_from_json(file.meta.at("norm_stats"));
    for (const auto& name : encoder_param_names(ck.model)) {
      auto it = file.tensors.find(name);
      if (it == file.tensors.end()) throw IntegrityError("encoder tensor '" + name + "' is missing");
      ck.params.emplace(name, it->second);
    }
    return ck;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint metadata: ") + e.what());
  }
}

inline void export_encoder(const std::filesystem::path& checkpoint, const std::filesystem::path& out) {
  const auto ck = load_encoder(checkpoint);
  TensorFile file;
  file.tensors.insert(ck.params.begin(), ck.params.end());
  file.meta = {{"kind", "encoder"}, {"model", to_json(ck.model)}, {"scene", to_json(ck.scene)}, {"norm_stats", to_json(ck.stats)}};
  write_tensor_file(out, file);
}

inline EncoderCheckpoint encoder_of(const Trainer<float>& trainer) {
  EncoderCheckpoint ck{trainer.model(), trainer.scene(), trainer.stats(), {}};
  for (const auto& [name, t] : trainer.params()) {
    if (is_encoder_param(name)) ck.params.emplace(name, t);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Training log: append-only CSV "step,lr,L_I,L_S,L_total".

class TrainLog {
 public:
  explicit TrainLog(const std::filesystem::path& path, bool append = false)
      : os_(path, append ? std::ios::app : std::ios::trunc) {
    if (!os_) throw std::runtime_error("cannot open " + path.string());
    if (!append) os_ << "step,lr,L_I,L_S,L_total\n";
  }

  void write(const StepRecord& r) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.step, r.lr, r.loss.image_loss, r.loss.struct_loss,
                  r.loss.total);
    os_ << line;
  }

 private:
  std::ofstream os_;
};

}  // namespace sgmim
