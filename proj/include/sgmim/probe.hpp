#pragma once

// Linear depth probe on a frozen encoder, and feature-map extraction for
// spectrum analysis.

#include <algorithm>
#include <vector>

#include "sgmim/metrics.hpp"
#include "sgmim/spectrum.hpp"
#include "sgmim/trainer.hpp"

namespace sgmim {

inline constexpr std::size_t kEncodeChunk = 16;

struct FrozenFeatures {
  Tensor<float> tokens;   // [scenes * N, D]
  Tensor<float> targets;  // [scenes * N, P*P] depth patches
};

// Encodes the scenes of `range` without masking. `block` < 0 selects the
// final I_F, otherwise that block's output.
inline FrozenFeatures frozen_features(const EncoderCheckpoint& enc, const SceneConfig& scenes, SeedRange range,
                                      int block = -1) {
  const std::size_t n = enc.model.tokens(), d = enc.model.encoder.width, pd = enc.model.grid.struct_patch_dim();
  if (block >= static_cast<int>(enc.model.encoder.depth)) throw ConfigError("encoder block index out of range");
  FrozenFeatures out{Tensor<float>({range.count * n, d}), Tensor<float>({range.count * n, pd})};
  for (std::uint64_t first = 0; first < range.count; first += kEncodeChunk) {
    const std::size_t b = std::min<std::uint64_t>(kEncodeChunk, range.count - first);
    std::vector<std::uint64_t> seeds(b);
    for (std::size_t i = 0; i < b; ++i) seeds[i] = range.first + first + i;
    const auto batch = make_batch(seeds, scenes, enc.stats);
    Tape<float> tape(false);
    std::vector<Var<float>> blocks;
    auto latent = encode_visible(tape, enc.params, enc.model, patchify_batch(batch.images, enc.model.grid), b, &blocks);
    const auto& feats = block < 0 ? latent.value() : blocks[static_cast<std::size_t>(block)].value();
    std::copy_n(feats.ptr(), b * n * d, out.tokens.ptr() + first * n * d);
    const auto depth = patchify_batch(batch.depths, enc.model.grid);
    std::copy_n(depth.ptr(), b * n * pd, out.targets.ptr() + first * n * pd);
  }
  return out;
}

struct ProbeResult {
  DepthMetrics metrics;
  double final_train_mse = 0.0;
};

// Trains a fresh one-layer head D -> P*P on frozen features (full-batch Adam,
// mean squared error) and scores clamped predictions on the validation range.
inline ProbeResult probe_depth(const EncoderCheckpoint& enc, const SceneConfig& dataset, const ProbeConfig& cfg) {
  cfg.validate();
  if (dataset.height != enc.model.grid.height || dataset.width != enc.model.grid.width) {
    throw ConfigError("probe dataset size does not match the encoder grid");
  }
  const std::size_t d = enc.model.encoder.width, pd = enc.model.grid.struct_patch_dim();
  const auto train = frozen_features(enc, dataset, cfg.train_range());
  const auto val = frozen_features(enc, dataset, cfg.val_range());

  Rng rng(mix_seed(cfg.train_seed, 0x9b0e));
  ParamStore<float> head{{"probe.weight", truncated_normal_tensor<float>({d, pd}, 0.02, rng)},
                         {"probe.bias", Tensor<float>({pd}, 0.0f)}};
  std::map<std::string, AdamMoments<float>> moments;
  AdamHyper hyper;
  hyper.lr = cfg.lr;
  hyper.weight_decay = 0.0;
  ProbeResult result;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Tape<float> tape;
    auto x = tape.constant(train.tokens);
    auto pred = linear(x, bind_param(tape, head, "probe.weight"), bind_param(tape, head, "probe.bias"));
    auto diff = sub(pred, tape.constant(train.targets));
    auto loss = mean(mul(diff, diff));
    tape.backward(loss);
    result.final_train_mse = loss.value().item();
    if (!std::isfinite(result.final_train_mse)) throw NumericError("probe loss diverged at step " + std::to_string(step));
    auto grads = tape.param_grads();
    for (auto& [name, g] : grads) adamw_update(head.at(name), g, moments[name], step, hyper);
  }

  Tape<float> tape(false);
  auto pred = linear(tape.constant(val.tokens), tape.constant(head.at("probe.weight")), tape.constant(head.at("probe.bias")));
  std::vector<float> predicted(pred.value().data().begin(), pred.value().data().end());
  for (auto& v : predicted) v = std::clamp(v, static_cast<float>(cfg.min_depth), 1.0f);
  result.metrics = depth_metrics<float>(predicted, val.targets.data());
  return result;
}

// Feature grids (as double) of `count` scenes for spectrum analysis.
inline std::vector<Tensor<double>> feature_grids(const EncoderCheckpoint& enc, const SceneConfig& scenes, SeedRange range,
                                                 int block = -1) {
  const auto feats = frozen_features(enc, scenes, range, block);
  const std::size_t n = enc.model.tokens(), d = enc.model.encoder.width;
  std::vector<Tensor<double>> grids;
  for (std::size_t i = 0; i < range.count; ++i) {
    Tensor<double> tokens({n, d});
    for (std::size_t j = 0; j < n * d; ++j) tokens[j] = feats.tokens[i * n * d + j];
    grids.push_back(tokens_to_grid(tokens, enc.model.grid));
  }
  return grids;
}

}  // namespace sgmim
