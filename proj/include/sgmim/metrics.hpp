#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "sgmim/errors.hpp"

namespace sgmim {

struct DepthMetrics {
  double rmse = 0.0;
  double delta1 = 1.0;
};

// sqrt(mean((d_p - d_gt)^2)) over pixels with valid (positive) ground truth.
template <typename T>
double rmse(std::span<const T> predicted, std::span<const T> truth) {
  if (predicted.size() != truth.size()) throw GeometryError("rmse: prediction and ground truth sizes differ");
  double sq = 0;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!(truth[i] > T(0))) continue;
    const double d = double(predicted[i]) - double(truth[i]);
    sq += d * d;
    ++valid;
  }
  if (valid == 0) throw DomainError("rmse: no pixel has positive ground-truth depth");
  return std::sqrt(sq / static_cast<double>(valid));
}

// Fraction of pixels with max(d_gt/d_p, d_p/d_gt) < 1.25.
template <typename T>
double delta1(std::span<const T> predicted, std::span<const T> truth) {
  if (predicted.size() != truth.size()) throw GeometryError("delta1: prediction and ground truth sizes differ");
  if (truth.empty()) throw DomainError("delta1: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double p = predicted[i], g = truth[i];
    if (!(p > 0.0) || !(g > 0.0)) throw DomainError("delta1: depths must be positive");
    hits += std::max(g / p, p / g) < 1.25;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

template <typename T>
DepthMetrics depth_metrics(std::span<const T> predicted, std::span<const T> truth) {
  return {rmse(predicted, truth), delta1(predicted, truth)};
}

}  // namespace sgmim
