#pragma once

// Patch geometry, patch embeddings and complementary image/structure masking.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sgmim/autodiff.hpp"
#include "sgmim/rng.hpp"

namespace sgmim {

struct PatchGrid {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t patch = 8;
  std::size_t image_channels = 3;
  std::size_t struct_channels = 1;

  void validate() const {
    if (patch == 0 || height == 0 || width == 0) throw GeometryError("patch grid dimensions must be positive");
    if (height % patch != 0 || width % patch != 0) {
      throw GeometryError("image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by patch size " + std::to_string(patch));
    }
  }
  std::size_t rows() const { return height / patch; }
  std::size_t cols() const { return width / patch; }
  std::size_t count() const { return rows() * cols(); }
  std::size_t patch_dim(std::size_t channels) const { return patch * patch * channels; }
  std::size_t image_patch_dim() const { return patch_dim(image_channels); }
  std::size_t struct_patch_dim() const { return patch_dim(struct_channels); }
};

// Binary per-patch mask; 1 = masked.
using PatchMask = std::vector<std::uint8_t>;

enum class MaskingStrategy {
  selective_complement,  // M_S = 1 - M_I
  random_both,           // independent masks at the same ratio
};

struct MaskPair {
  PatchMask image;
  PatchMask structured;
  double ratio = 0.6;
};

// ---------------------------------------------------------------------------
// Patchify / unpatchify

// [H, W, C] map -> [N, P*P*C]; patches in raster order, pixels row-major
// within a patch, channel fastest.
template <typename T>
Tensor<T> patchify(const Tensor<T>& pixels, const PatchGrid& grid) {
  grid.validate();
  if (pixels.rank() != 3 || pixels.dim(0) != grid.height || pixels.dim(1) != grid.width) {
    throw GeometryError("patchify: map " + shape_string(pixels.shape()) + " does not match " +
                        std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  const std::size_t c = pixels.dim(2), p = grid.patch, cols = grid.cols();
  Tensor<T> out({grid.count(), grid.patch_dim(c)});
  for (std::size_t pr = 0; pr < grid.rows(); ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      T* dst = out.ptr() + (pr * cols + pc) * p * p * c;
      for (std::size_t y = 0; y < p; ++y) {
        const T* src = pixels.ptr() + ((pr * p + y) * grid.width + pc * p) * c;
        std::copy_n(src, p * c, dst + y * p * c);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const PatchGrid& grid, std::size_t channels) {
  grid.validate();
  if (patches.rank() != 2 || patches.dim(0) != grid.count() || patches.dim(1) != grid.patch_dim(channels)) {
    throw GeometryError("unpatchify: patch matrix " + shape_string(patches.shape()) + " does not match grid");
  }
  const std::size_t p = grid.patch, cols = grid.cols();
  Tensor<T> out({grid.height, grid.width, channels});
  for (std::size_t pr = 0; pr < grid.rows(); ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      const T* src = patches.ptr() + (pr * cols + pc) * p * p * channels;
      for (std::size_t y = 0; y < p; ++y) {
        T* dst = out.ptr() + ((pr * p + y) * grid.width + pc * p) * channels;
        std::copy_n(src + y * p * channels, p * channels, dst);
      }
    }
  }
  return out;
}

// [B, H, W, C] -> [B*N, P*P*C], samples stacked in order.
template <typename T>
Tensor<T> patchify_batch(const Tensor<T>& maps, const PatchGrid& grid) {
  if (maps.rank() != 4) throw GeometryError("patchify_batch: expected [B,H,W,C], got " + shape_string(maps.shape()));
  const std::size_t b = maps.dim(0), c = maps.dim(3);
  const std::size_t per_map = grid.height * grid.width * c;
  if (maps.dim(1) != grid.height || maps.dim(2) != grid.width) throw GeometryError("patchify_batch: map size mismatch");
  Tensor<T> out({b * grid.count(), grid.patch_dim(c)});
  const std::size_t per_out = grid.count() * grid.patch_dim(c);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor<T> one({grid.height, grid.width, c}, std::vector<T>(maps.ptr() + i * per_map, maps.ptr() + (i + 1) * per_map));
    const auto p = patchify(one, grid);
    std::copy_n(p.ptr(), per_out, out.ptr() + i * per_out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token sequences

// Stacked token rows [batch * length, D]; `positions[r]` is the original patch
// index of row r within its sample.
template <typename T>
struct TokenSequence {
  Var<T> tokens;
  std::size_t batch = 1;
  std::size_t length = 0;
  std::vector<std::size_t> positions;
};

inline std::vector<std::size_t> tiled_positions(std::size_t batch, std::size_t n) {
  std::vector<std::size_t> idx(batch * n);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % n;
  return idx;
}

// tokens = patches W + b + pos, with the position table repeated per sample.
template <typename T>
TokenSequence<T> embed_patches(const Var<T>& patches, const Var<T>& weight, const Var<T>& bias, const Var<T>& pos_table,
                               std::size_t batch = 1) {
  const std::size_t n = pos_table.value().rank() == 2 ? pos_table.dim(0) : 0;
  if (patches.value().rank() != 2 || patches.dim(0) != batch * n) {
    throw GeometryError("embed_patches: " + std::to_string(patches.value().rank() == 2 ? patches.dim(0) : 0) +
                        " patch rows for batch " + std::to_string(batch) + " x " + std::to_string(n) + " positions");
  }
  if (weight.value().rank() != 2 || weight.dim(1) != pos_table.dim(1) || bias.value().size() != weight.dim(1)) {
    throw GeometryError("embed_patches: projection width does not match position table width");
  }
  auto positions = tiled_positions(batch, n);
  auto pos = gather_rows(pos_table, positions);
  return {add(linear(patches, weight, bias), pos), batch, n, std::move(positions)};
}

// ---------------------------------------------------------------------------
// Masking

inline std::size_t masked_count(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0,1), got " + std::to_string(ratio));
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (k == 0 || k >= n) {
    throw ConfigError("mask ratio " + std::to_string(ratio) + " masks " + std::to_string(k) + " of " +
                      std::to_string(n) + " patches");
  }
  return k;
}

// Exactly round(ratio * n) ones at positions chosen by a seeded Fisher-Yates shuffle.
inline PatchMask sample_image_mask(std::size_t n, double ratio, std::uint64_t seed) {
  const std::size_t k = masked_count(n, ratio);
  Rng rng(seed);
  const auto order = shuffled_indices(n, rng);
  PatchMask mask(n, 0);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1;
  return mask;
}

inline PatchMask complement_mask(const PatchMask& image_mask) {
  PatchMask out(image_mask.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<std::uint8_t>(1 - (image_mask[j] != 0));
  return out;
}

inline MaskPair sample_mask_pair(std::size_t n, double ratio, MaskingStrategy strategy, std::uint64_t seed) {
  MaskPair pair;
  pair.ratio = ratio;
  pair.image = sample_image_mask(n, ratio, seed);
  pair.structured = strategy == MaskingStrategy::selective_complement ? complement_mask(pair.image)
                                                                       : sample_image_mask(n, ratio, mix_seed(seed, 1));
  return pair;
}

inline std::size_t count_ones(const PatchMask& m) {
  std::size_t c = 0;
  for (auto v : m) c += v != 0;
  return c;
}

// Masked rows become mask_token + pos[position]; visible rows pass through.
template <typename T>
TokenSequence<T> apply_mask_tokens(const TokenSequence<T>& seq, const PatchMask& image_mask, const Var<T>& mask_token,
                                   const Var<T>& pos_table) {
  const std::size_t rows = seq.batch * seq.length;
  const std::size_t d = seq.tokens.dim(1);
  if (image_mask.size() != rows) throw GeometryError("apply_mask_tokens: mask length does not match token rows");
  if (mask_token.value().size() != d) throw GeometryError("apply_mask_tokens: mask token width mismatch");
  auto& tape = seq.tokens.tape();
  Tensor<T> keep({rows, d}), masked_pos({rows, d}), column({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    const bool m = image_mask[r] != 0;
    column[r] = m ? T(1) : T(0);
    for (std::size_t j = 0; j < d; ++j) {
      keep(r, j) = m ? T(0) : T(1);
      masked_pos(r, j) = m ? T(1) : T(0);
    }
  }
  auto visible = mul(seq.tokens, tape.constant(std::move(keep)));
  auto tokens = matmul(tape.constant(std::move(column)), reshape(mask_token, {1, d}));
  auto pos = mul(gather_rows(pos_table, seq.positions), tape.constant(std::move(masked_pos)));
  return {add(add(visible, tokens), pos), seq.batch, seq.length, seq.positions};
}

// Rows whose structured patch is visible (M_S = 0), with their original positions.
template <typename T>
TokenSequence<T> gather_visible_structured(const TokenSequence<T>& seq, const PatchMask& struct_mask) {
  const std::size_t rows = seq.batch * seq.length;
  if (struct_mask.size() != rows) throw GeometryError("gather_visible_structured: mask length does not match token rows");
  std::vector<std::size_t> rows_kept, positions;
  std::size_t per_sample = 0;
  for (std::size_t b = 0; b < seq.batch; ++b) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < seq.length; ++j) {
      const std::size_t r = b * seq.length + j;
      if (struct_mask[r] == 0) {
        rows_kept.push_back(r);
        positions.push_back(seq.positions.empty() ? j : seq.positions[r]);
        ++k;
      }
    }
    if (k == 0) throw ConfigError("gather_visible_structured: no visible structured patches in sample " + std::to_string(b));
    if (b == 0) per_sample = k;
    if (k != per_sample) throw ConfigError("gather_visible_structured: visible count differs across the batch");
  }
  return {gather_rows(seq.tokens, std::move(rows_kept)), seq.batch, per_sample, std::move(positions)};
}

}  // namespace sgmim
