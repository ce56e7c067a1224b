#pragma once

// Full pre-training graph: patch embeddings, masking, encoder, structured
// guidance branch, both heads and the weighted loss.

#include <cstdint>
#include <string>

#include "sgmim/encoder.hpp"
#include "sgmim/guidance.hpp"
#include "sgmim/objective.hpp"
#include "sgmim/patch_mask.hpp"

namespace sgmim {

struct ModelConfig {
  PatchGrid grid;
  EncoderConfig encoder;

  void validate() const {
    grid.validate();
    encoder.validate();
  }
  std::size_t tokens() const { return grid.count(); }
};

struct InitOptions {
  bool zero_fusion_out = true;
};

// Truncated normal (std 0.02) weights, zero biases, unit LN scales.
template <typename T>
ParamStore<T> init_model_params(const ModelConfig& cfg, std::uint64_t seed, InitOptions opts = {}) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x1417));
  const std::size_t d = cfg.encoder.width, n = cfg.tokens();
  const std::size_t pi = cfg.grid.image_patch_dim(), ps = cfg.grid.struct_patch_dim();
  ParamStore<T> store;
  store["image_embed.weight"] = truncated_normal_tensor<T>({pi, d}, 0.02, rng);
  store["image_embed.bias"] = Tensor<T>({d}, T(0));
  store["struct_embed.weight"] = truncated_normal_tensor<T>({ps, d}, 0.02, rng);
  store["struct_embed.bias"] = Tensor<T>({d}, T(0));
  store["pos_embed"] = truncated_normal_tensor<T>({n, d}, 0.02, rng);
  store["mask_token"] = truncated_normal_tensor<T>({d}, 0.02, rng);
  init_encoder_params(store, cfg.encoder, rng);
  init_guidance_params(store, d, opts.zero_fusion_out, rng);
  store["image_head.weight"] = truncated_normal_tensor<T>({d, pi}, 0.02, rng);
  store["image_head.bias"] = Tensor<T>({pi}, T(0));
  store["struct_head.weight"] = truncated_normal_tensor<T>({d, ps}, 0.02, rng);
  store["struct_head.bias"] = Tensor<T>({ps}, T(0));
  return store;
}

// Names that make up the exported encoder: patch projection, positions, blocks.
inline bool is_encoder_param(const std::string& name) {
  return name.rfind("encoder.", 0) == 0 || name.rfind("image_embed.", 0) == 0 || name == "pos_embed";
}

inline bool is_guidance_param(const std::string& name) {
  return name.rfind("guidance.", 0) == 0 || name.rfind("struct_embed.", 0) == 0 || name.rfind("struct_head.", 0) == 0;
}

template <typename T>
struct PretrainBatch {
  std::size_t batch = 1;
  Tensor<T> image_patches;   // [B*N, P*P*3]
  Tensor<T> struct_patches;  // [B*N, P*P]
  PatchMask image_mask;      // B*N
  PatchMask struct_mask;     // B*N
};

enum class Branches {
  full,        // image reconstruction + structured guidance
  image_only,  // guidance-free baseline
};

template <typename T>
struct ForwardOutput {
  Var<T> total;
  Var<T> image_loss;
  Var<T> struct_loss;
  Var<T> image_latent;
  Var<T> guided_latent;
  Var<T> image_pred;   // [B*N, P*P*3]
  Var<T> struct_pred;  // [B*N, P*P]; unset for Branches::image_only
  LossReport report;
};

template <typename T>
ForwardOutput<T> pretrain_forward(Tape<T>& tape, const ParamStore<T>& params, const ModelConfig& cfg,
                                  const PretrainBatch<T>& batch, const LossWeights& weights,
                                  Branches branches = Branches::full) {
  weights.validate();
  const std::size_t b = batch.batch, n = cfg.tokens();
  const T eps = static_cast<T>(cfg.encoder.norm_eps);
  auto pos = bind_param(tape, params, "pos_embed");

  auto image_tokens = embed_patches(tape.constant(batch.image_patches), bind_param(tape, params, "image_embed.weight"),
                                    bind_param(tape, params, "image_embed.bias"), pos, b);
  auto masked = apply_mask_tokens(image_tokens, batch.image_mask, bind_param(tape, params, "mask_token"), pos);
  auto encoder = bind_encoder(tape, params, cfg.encoder);
  ForwardOutput<T> out;
  out.image_latent = encode(masked.tokens, b, n, cfg.encoder, encoder);

  out.image_pred = reconstruct_pixels(out.image_latent, bind_param(tape, params, "image_head.weight"),
                                      bind_param(tape, params, "image_head.bias"));
  out.image_loss = masked_l1(out.image_pred, batch.image_patches, batch.image_mask, b);
  out.report.image_masked_pixels = count_ones(batch.image_mask) * cfg.grid.image_patch_dim();

  if (branches == Branches::image_only) {
    out.total = scale(out.image_loss, static_cast<T>(weights.image));
    out.report.image_loss = out.image_loss.value().item();
    out.report.total = weights.image * out.report.image_loss;
    if (!std::isfinite(out.report.total)) throw NumericError("pretrain_forward: non-finite loss");
    return out;
  }

  auto struct_tokens = embed_patches(tape.constant(batch.struct_patches), bind_param(tape, params, "struct_embed.weight"),
                                     bind_param(tape, params, "struct_embed.bias"), pos, b);
  auto visible = gather_visible_structured(struct_tokens, batch.struct_mask);
  auto features = extract_structured_features(visible, bind_structured_mlp(tape, params), eps);
  auto fusion = fuse(out.image_latent, b, n, features, bind_fusion(tape, params, cfg.encoder.heads));
  out.guided_latent = fusion.fused;
  out.struct_pred = predict_structured(out.guided_latent, bind_param(tape, params, "struct_head.weight"),
                                       bind_param(tape, params, "struct_head.bias"));
  out.struct_loss = masked_l1(out.struct_pred, batch.struct_patches, batch.struct_mask, b);
  out.total = weighted_total(out.image_loss, out.struct_loss, weights);

  out.report = total_loss(out.image_loss.value().item(), out.struct_loss.value().item(), weights);
  out.report.image_masked_pixels = count_ones(batch.image_mask) * cfg.grid.image_patch_dim();
  out.report.struct_masked_pixels = count_ones(batch.struct_mask) * cfg.grid.struct_patch_dim();
  return out;
}

// I_F for fully visible inputs (no mask tokens); used for probing and analysis.
template <typename T>
Var<T> encode_visible(Tape<T>& tape, const ParamStore<T>& params, const ModelConfig& cfg, const Tensor<T>& image_patches,
                      std::size_t batch, std::vector<Var<T>>* block_outputs = nullptr) {
  auto pos = bind_param(tape, params, "pos_embed");
  auto tokens = embed_patches(tape.constant(image_patches), bind_param(tape, params, "image_embed.weight"),
                              bind_param(tape, params, "image_embed.bias"), pos, batch);
  return encode(tokens.tokens, batch, cfg.tokens(), cfg.encoder, bind_encoder(tape, params, cfg.encoder), block_outputs);
}

}  // namespace sgmim
