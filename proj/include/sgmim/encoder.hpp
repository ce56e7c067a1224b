#pragma once

// Pre-norm ViT-style encoder over full-length (mask-token filled) sequences.

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "sgmim/params.hpp"

namespace sgmim {

struct EncoderConfig {
  std::size_t depth = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  double norm_eps = 1e-6;

  void validate() const {
    if (depth < 1) throw ConfigError("encoder depth must be at least 1");
    if (width == 0 || heads == 0 || width % heads != 0) {
      throw ConfigError("encoder width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                        " heads");
    }
    if (!(mlp_ratio > 0)) throw ConfigError("mlp_ratio must be positive");
  }
  std::size_t head_dim() const { return width / heads; }
  std::size_t hidden() const { return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(width))); }
};

template <typename T>
struct AttentionWeights {
  Var<T> norm_gamma, norm_beta;
  Var<T> query_w, query_b, key_w, value_w, value_b;  // no key bias: softmax cancels it
  Var<T> out_w, out_b;
};

template <typename T>
struct MlpWeights {
  Var<T> norm_gamma, norm_beta;
  Var<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename T>
struct BlockWeights {
  AttentionWeights<T> attn;
  MlpWeights<T> mlp;
};

template <typename T>
struct EncoderWeights {
  std::vector<BlockWeights<T>> blocks;
  Var<T> norm_gamma, norm_beta;
};

inline std::string block_prefix(std::size_t i) { return "encoder.block" + std::to_string(i) + "."; }

template <typename T>
EncoderWeights<T> bind_encoder(Tape<T>& tape, const ParamStore<T>& store, const EncoderConfig& cfg) {
  EncoderWeights<T> w;
  auto p = [&](const std::string& name) { return bind_param(tape, store, name); };
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const auto pre = block_prefix(i);
    BlockWeights<T> b;
    b.attn = {p(pre + "attn.norm.gamma"), p(pre + "attn.norm.beta"), p(pre + "attn.query.weight"),
              p(pre + "attn.query.bias"), p(pre + "attn.key.weight"),
              p(pre + "attn.value.weight"), p(pre + "attn.value.bias"), p(pre + "attn.out.weight"),
              p(pre + "attn.out.bias")};
    b.mlp = {p(pre + "mlp.norm.gamma"), p(pre + "mlp.norm.beta"), p(pre + "mlp.fc1.weight"),
             p(pre + "mlp.fc1.bias"),   p(pre + "mlp.fc2.weight"), p(pre + "mlp.fc2.bias")};
    w.blocks.push_back(std::move(b));
  }
  w.norm_gamma = p("encoder.norm.gamma");
  w.norm_beta = p("encoder.norm.beta");
  return w;
}

template <typename T>
void init_encoder_params(ParamStore<T>& store, const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.width, h = cfg.hidden();
  auto weight = [&](const std::string& name, std::size_t in, std::size_t out) {
    store[name] = truncated_normal_tensor<T>({in, out}, 0.02, rng);
  };
  auto zeros = [&](const std::string& name, std::size_t n) { store[name] = Tensor<T>({n}, T(0)); };
  auto ones = [&](const std::string& name, std::size_t n) { store[name] = Tensor<T>({n}, T(1)); };
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const auto pre = block_prefix(i);
    ones(pre + "attn.norm.gamma", d);
    zeros(pre + "attn.norm.beta", d);
    for (const char* proj : {"query", "key", "value", "out"}) {
      weight(pre + "attn." + proj + ".weight", d, d);
      if (std::string_view(proj) != "key") zeros(pre + "attn." + proj + ".bias", d);
    }
    ones(pre + "mlp.norm.gamma", d);
    zeros(pre + "mlp.norm.beta", d);
    weight(pre + "mlp.fc1.weight", d, h);
    zeros(pre + "mlp.fc1.bias", h);
    weight(pre + "mlp.fc2.weight", h, d);
    zeros(pre + "mlp.fc2.bias", d);
  }
  ones("encoder.norm.gamma", d);
  zeros("encoder.norm.beta", d);
}

// [B*S, D] -> [B*h, S, D/h]
template <typename T>
Var<T> split_heads(const Var<T>& x, std::size_t batch, std::size_t seq, std::size_t heads) {
  const std::size_t d = x.dim(1), dh = d / heads;
  return reshape(permute(reshape(x, {batch, seq, heads, dh}), {0, 2, 1, 3}), {batch * heads, seq, dh});
}

// [B*h, S, D/h] -> [B*S, D]
template <typename T>
Var<T> merge_heads(const Var<T>& x, std::size_t batch, std::size_t seq, std::size_t heads) {
  const std::size_t dh = x.dim(2);
  return reshape(permute(reshape(x, {batch, heads, seq, dh}), {0, 2, 1, 3}), {batch * seq, heads * dh});
}

template <typename T>
struct AttentionOutput {
  Var<T> context;  // [B*h, Sq, dh]
  Var<T> weights;  // [B*h, Sq, Sk]
};

// softmax(Q K^T / sqrt(dh)) V per (sample, head); q is [B*h, Sq, dh], k/v [B*h, Sk, dh].
template <typename T>
AttentionOutput<T> scaled_dot_product_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
  auto weights = softmax(scale(bmm(q, k, true), inv_scale));
  return {bmm(weights, v), weights};
}

template <typename T>
struct SelfAttentionResult {
  Var<T> out;
  Var<T> weights;
};

// x + Proj(MHA(LN(x))) for x [B*S, D].
template <typename T>
SelfAttentionResult<T> self_attention(const Var<T>& x, std::size_t batch, std::size_t seq, std::size_t heads,
                                      const AttentionWeights<T>& w, T eps) {
  if (x.value().rank() != 2 || x.dim(0) != batch * seq) throw GeometryError("self_attention: token rows mismatch");
  if (x.dim(1) % heads != 0) throw ConfigError("self_attention: width not divisible by heads");
  auto normed = layer_norm(x, w.norm_gamma, w.norm_beta, eps);
  auto q = split_heads(linear(normed, w.query_w, w.query_b), batch, seq, heads);
  auto k = split_heads(matmul(normed, w.key_w), batch, seq, heads);
  auto v = split_heads(linear(normed, w.value_w, w.value_b), batch, seq, heads);
  auto att = scaled_dot_product_attention(q, k, v);
  auto projected = linear(merge_heads(att.context, batch, seq, heads), w.out_w, w.out_b);
  return {add(x, projected), att.weights};
}

template <typename T>
Var<T> mlp_block(const Var<T>& x, const MlpWeights<T>& w, T eps) {
  auto hidden = gelu(linear(layer_norm(x, w.norm_gamma, w.norm_beta, eps), w.fc1_w, w.fc1_b));
  return add(x, linear(hidden, w.fc2_w, w.fc2_b));
}

// L pre-norm blocks followed by a final layer norm. When `block_outputs` is
// given it receives each block's output (before the final norm).
template <typename T>
Var<T> encode(const Var<T>& tokens, std::size_t batch, std::size_t seq, const EncoderConfig& cfg,
              const EncoderWeights<T>& w, std::vector<Var<T>>* block_outputs = nullptr) {
  cfg.validate();
  if (tokens.value().rank() != 2 || tokens.dim(0) != batch * seq || tokens.dim(1) != cfg.width) {
    throw GeometryError("encode: expected [" + std::to_string(batch * seq) + "," + std::to_string(cfg.width) +
                        "] tokens, got " + shape_string(tokens.shape()));
  }
  const T eps = static_cast<T>(cfg.norm_eps);
  Var<T> x = tokens;
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    x = self_attention(x, batch, seq, cfg.heads, w.blocks[i].attn, eps).out;
    x = mlp_block(x, w.blocks[i].mlp, eps);
    if (!x.value().all_finite()) throw NumericError("encoder block " + std::to_string(i) + " produced non-finite activations");
    if (block_outputs) block_outputs->push_back(x);
  }
  return layer_norm(x, w.norm_gamma, w.norm_beta, eps);
}

}  // namespace sgmim
