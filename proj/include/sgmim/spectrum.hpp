#pragma once

// Fourier diagnostics for token feature maps: per-channel 2-D DFT, centred
// log amplitude averaged over channels (and samples), sampled along the
// half-diagonal from the spectrum centre (0.0 pi) to the corner (1.0 pi).

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "sgmim/patch_mask.hpp"

namespace sgmim {

inline constexpr double kLogAmplitudeEps = 1e-8;
inline constexpr std::size_t kProfilePoints = 17;

struct SpectrumProfile {
  std::vector<double> freqs;        // in radians, 0 .. pi
  std::vector<double> rel_log_amp;  // relative to the centre, so rel_log_amp[0] == 0
};

// [N, D] tokens in raster order -> [rows, cols, D] grid.
template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens, const PatchGrid& grid) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid.count()) {
    throw GeometryError("tokens_to_grid: " + shape_string(tokens.shape()) + " does not hold " +
                        std::to_string(grid.count()) + " tokens");
  }
  return tokens.reshaped({grid.rows(), grid.cols(), tokens.dim(1)});
}

template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& g) {
  if (g.rank() != 3) throw GeometryError("grid_to_tokens: rank-3 grid required");
  return g.reshaped({g.dim(0) * g.dim(1), g.dim(2)});
}

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

// Unnormalized forward 2-D DFT of one S x S real plane (row-major).
inline std::vector<std::complex<double>> dft2(std::span<const double> plane, std::size_t s) {
  if (plane.size() != s * s) throw GeometryError("dft2: plane is not S x S");
  std::vector<std::complex<double>> in(plane.begin(), plane.end()), out(s * s);
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(s), static_cast<int>(s), reinterpret_cast<fftw_complex*>(in.data()),
                            reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

// Mean over channels and grids of log(|F| + eps), shifted so the zero
// frequency sits at (S/2, S/2). Returns S x S row-major.
inline std::vector<double> centered_log_amplitude(std::span<const Tensor<double>> grids) {
  if (grids.empty()) throw GeometryError("log amplitude: no feature grids");
  const std::size_t s = grids.front().dim(0);
  std::vector<double> acc(s * s, 0.0);
  std::size_t planes = 0;
  std::vector<double> plane(s * s);
  for (const auto& g : grids) {
    if (g.rank() != 3 || g.dim(0) != s || g.dim(1) != s) throw GeometryError("log amplitude: grids must be S x S x D");
    if (s < 2) throw GeometryError("log amplitude: grid side must be at least 2");
    const std::size_t d = g.dim(2);
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 0; i < s * s; ++i) plane[i] = g[i * d + c];
      const auto spec = dft2(plane, s);
      for (std::size_t u = 0; u < s; ++u) {
        for (std::size_t v = 0; v < s; ++v) {
          const std::size_t su = (u + s / 2) % s, sv = (v + s / 2) % s;
          acc[su * s + sv] += std::log(std::abs(spec[u * s + v]) + kLogAmplitudeEps);
        }
      }
      ++planes;
    }
  }
  for (auto& v : acc) v /= static_cast<double>(planes);
  return acc;
}

// Bilinear samples of a centred S x S map along the diagonal from the centre
// to index (0, 0), minus the centre value.
inline SpectrumProfile sample_half_diagonal(std::span<const double> centered, std::size_t s,
                                            std::size_t points = kProfilePoints) {
  const double c = static_cast<double>(s / 2);
  auto at = [&](std::size_t r, std::size_t q) { return centered[std::min(r, s - 1) * s + std::min(q, s - 1)]; };
  SpectrumProfile p;
  for (std::size_t i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(points - 1);
    const double pos = c * (1.0 - t);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(lo);
    const double v = (1 - f) * (1 - f) * at(lo, lo) + (1 - f) * f * (at(lo, lo + 1) + at(lo + 1, lo)) +
                     f * f * at(lo + 1, lo + 1);
    p.freqs.push_back(t * std::numbers::pi);
    p.rel_log_amp.push_back(v);
  }
  const double centre = p.rel_log_amp.front();
  for (auto& v : p.rel_log_amp) v -= centre;
  return p;
}

inline SpectrumProfile log_amplitude_profile(std::span<const Tensor<double>> grids) {
  const std::size_t s = grids.empty() ? 0 : grids.front().dim(0);
  if (grids.empty() || grids.front().rank() != 3 || grids.front().dim(1) != s) {
    throw GeometryError("log_amplitude_profile: square S x S x D grids required");
  }
  return sample_half_diagonal(centered_log_amplitude(grids), s);
}

inline SpectrumProfile log_amplitude_profile(const Tensor<double>& grid) {
  return log_amplitude_profile(std::span<const Tensor<double>>(&grid, 1));
}

// Log amplitude at 1.0 pi relative to 0.0 pi.
inline double delta_log_amplitude(const SpectrumProfile& p) {
  if (p.rel_log_amp.empty()) throw GeometryError("delta_log_amplitude: empty profile");
  return p.rel_log_amp.back() - p.rel_log_amp.front();
}

}  // namespace sgmim
