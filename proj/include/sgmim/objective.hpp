#pragma once

// Prediction heads and the weighted masked-L1 objective L = lI * L_I + lS * L_S.

#include <string>

#include "sgmim/patch_mask.hpp"

namespace sgmim {

struct LossWeights {
  double image = 1.0;
  double structured = 1.0;

  void validate() const {
    if (image < 0 || structured < 0) throw ConfigError("loss weights must be non-negative");
    if (image == 0 && structured == 0) throw ConfigError("loss weights cannot both be zero");
  }
};

struct LossReport {
  double image_loss = 0.0;
  double struct_loss = 0.0;
  double total = 0.0;
  std::size_t image_masked_pixels = 0;
  std::size_t struct_masked_pixels = 0;
};

// One linear map per token, no activation: [rows, D] -> [rows, P*P*C].
template <typename T>
Var<T> reconstruct_pixels(const Var<T>& image_latent, const Var<T>& weight, const Var<T>& bias) {
  return linear(image_latent, weight, bias);
}

template <typename T>
Var<T> predict_structured(const Var<T>& guided_latent, const Var<T>& weight, const Var<T>& bias) {
  return linear(guided_latent, weight, bias);
}

// Mean |pred - target| over the pixel entries of masked patches. Rows are
// `batch` stacked samples; the result is the mean of the per-sample losses,
// each normalized by its own masked-pixel count.
template <typename T>
Var<T> masked_l1(const Var<T>& pred, const Tensor<T>& target, const PatchMask& mask, std::size_t batch = 1) {
  const auto& pv = pred.value();
  if (pv.shape() != target.shape() || pv.rank() != 2) {
    throw GeometryError("masked_l1: prediction " + shape_string(pv.shape()) + " vs target " + shape_string(target.shape()));
  }
  const std::size_t rows = pv.dim(0), q = pv.dim(1);
  if (mask.size() != rows || batch == 0 || rows % batch != 0) throw GeometryError("masked_l1: mask length mismatch");
  const std::size_t per = rows / batch;
  Tensor<T> weights({rows, q});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < per; ++j) count += mask[b * per + j] != 0;
    if (count == 0) throw ConfigError("masked_l1: empty mask in sample " + std::to_string(b));
    const T w = T(1) / static_cast<T>(static_cast<double>(count) * static_cast<double>(q) * static_cast<double>(batch));
    for (std::size_t j = 0; j < per; ++j) {
      const T v = mask[b * per + j] != 0 ? w : T(0);
      for (std::size_t c = 0; c < q; ++c) weights(b * per + j, c) = v;
    }
  }
  auto& tape = pred.tape();
  auto residual = abs(sub(pred, tape.constant(target)));
  return sum(mul(residual, tape.constant(std::move(weights))));
}

template <typename T>
Var<T> weighted_total(const Var<T>& image_loss, const Var<T>& struct_loss, const LossWeights& w) {
  return add(scale(image_loss, static_cast<T>(w.image)), scale(struct_loss, static_cast<T>(w.structured)));
}

inline LossReport total_loss(double image_loss, double struct_loss, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(image_loss) || !std::isfinite(struct_loss)) throw NumericError("total_loss: non-finite component");
  LossReport r;
  r.image_loss = image_loss;
  r.struct_loss = struct_loss;
  r.total = w.image * image_loss + w.structured * struct_loss;
  return r;
}

}  // namespace sgmim
