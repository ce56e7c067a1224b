#pragma once

// Structured-knowledge side branch: a shallow per-token MLP producing S_F and
// a residual multi-head cross-attention that lets I_F (queries) attend to S_F
// (keys/values):  I_SF = Concat(head_1..head_h) W^O + I_F.

#include <string>
#include <vector>

#include "sgmim/encoder.hpp"
#include "sgmim/patch_mask.hpp"

namespace sgmim {

template <typename T>
struct StructuredMlpWeights {
  Var<T> fc1_w, fc1_b, fc2_w, fc2_b;
  Var<T> norm_gamma, norm_beta;
};

// Per-head W^Q_i / W^K_i / W^V_i are column blocks of the D x D maps; no biases.
template <typename T>
struct FusionWeights {
  Var<T> query, key, value, out;
  std::size_t heads = 1;
};

template <typename T>
struct StructuredFeatures {
  Var<T> features;  // [B*K, D]
  std::size_t batch = 1;
  std::size_t count = 0;  // K per sample
  std::vector<std::size_t> source_indices;
};

template <typename T>
StructuredMlpWeights<T> bind_structured_mlp(Tape<T>& tape, const ParamStore<T>& store) {
  auto p = [&](const std::string& n) { return bind_param(tape, store, "guidance.mlp." + n); };
  return {p("fc1.weight"), p("fc1.bias"), p("fc2.weight"), p("fc2.bias"), p("norm.gamma"), p("norm.beta")};
}

template <typename T>
FusionWeights<T> bind_fusion(Tape<T>& tape, const ParamStore<T>& store, std::size_t heads) {
  auto p = [&](const std::string& n) { return bind_param(tape, store, "guidance.fusion." + n); };
  return {p("query.weight"), p("key.weight"), p("value.weight"), p("out.weight"), heads};
}

// `zero_out` starts the fusion as the identity on I_F.
template <typename T>
void init_guidance_params(ParamStore<T>& store, std::size_t width, bool zero_out, Rng& rng) {
  const std::size_t hidden = 2 * width;
  store["guidance.mlp.fc1.weight"] = truncated_normal_tensor<T>({width, hidden}, 0.02, rng);
  store["guidance.mlp.fc1.bias"] = Tensor<T>({hidden}, T(0));
  store["guidance.mlp.fc2.weight"] = truncated_normal_tensor<T>({hidden, width}, 0.02, rng);
  store["guidance.mlp.fc2.bias"] = Tensor<T>({width}, T(0));
  store["guidance.mlp.norm.gamma"] = Tensor<T>({width}, T(1));
  store["guidance.mlp.norm.beta"] = Tensor<T>({width}, T(0));
  for (const char* proj : {"query", "key", "value"}) {
    store[std::string("guidance.fusion.") + proj + ".weight"] = truncated_normal_tensor<T>({width, width}, 0.02, rng);
  }
  store["guidance.fusion.out.weight"] =
      zero_out ? Tensor<T>({width, width}, T(0)) : truncated_normal_tensor<T>({width, width}, 0.02, rng);
}

// LN(fc2(GELU(fc1(x)))) applied per token; width preserved.
template <typename T>
StructuredFeatures<T> extract_structured_features(const TokenSequence<T>& visible, const StructuredMlpWeights<T>& w,
                                                  T eps) {
  if (visible.length == 0) throw ConfigError("extract_structured_features: no visible structured patches");
  for (std::size_t b = 0; b < visible.batch && !visible.positions.empty(); ++b) {
    for (std::size_t j = 1; j < visible.length; ++j) {
      if (visible.positions[b * visible.length + j] <= visible.positions[b * visible.length + j - 1]) {
        throw ConfigError("extract_structured_features: source indices must be strictly increasing");
      }
    }
  }
  auto hidden = gelu(linear(visible.tokens, w.fc1_w, w.fc1_b));
  auto features = layer_norm(linear(hidden, w.fc2_w, w.fc2_b), w.norm_gamma, w.norm_beta, eps);
  return {features, visible.batch, visible.length, visible.positions};
}

template <typename T>
struct FusionResult {
  Var<T> fused;      // I_SF [B*N, D]
  Var<T> attention;  // [B*h, N, K]
};

template <typename T>
FusionResult<T> fuse(const Var<T>& image_latent, std::size_t batch, std::size_t length,
                     const StructuredFeatures<T>& structured, const FusionWeights<T>& w) {
  if (structured.count == 0) throw ConfigError("fuse: structured feature set is empty");
  if (structured.batch != batch) throw GeometryError("fuse: batch mismatch between I_F and S_F");
  if (image_latent.value().rank() != 2 || image_latent.dim(0) != batch * length) {
    throw GeometryError("fuse: image latent rows do not match batch x length");
  }
  const std::size_t d = image_latent.dim(1);
  if (structured.features.dim(1) != d) throw GeometryError("fuse: I_F and S_F widths differ");
  if (w.heads == 0 || d % w.heads != 0) throw ConfigError("fuse: width not divisible by head count");
  auto q = split_heads(matmul(image_latent, w.query), batch, length, w.heads);
  auto k = split_heads(matmul(structured.features, w.key), batch, structured.count, w.heads);
  auto v = split_heads(matmul(structured.features, w.value), batch, structured.count, w.heads);
  auto att = scaled_dot_product_attention(q, k, v);
  auto mixed = matmul(merge_heads(att.context, batch, length, w.heads), w.out);
  return {add(mixed, image_latent), att.weights};
}

}  // namespace sgmim
