#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sgmim/autodiff.hpp"

namespace sgmim {

using ParamMap = std::map<std::string, Tensor<double>>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;   // "name[flat_index]"
  double eps = 0.0;
  std::size_t checked = 0;   // number of scalar entries compared
  std::size_t kink_retries = 0;     // entries re-measured with a smaller step
  std::size_t unresolved_kinks = 0;  // entries whose every step still crossed a kink
};

struct GradCheckOptions {
  // 0 checks every entry; otherwise a seeded sample of at most this many
  // entries per parameter tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t sample_seed = 0;
  // When f(x +- eps) takes a different non-smooth branch than f(x) the central
  // difference straddles a kink; the entry is re-measured with eps / 10, up to
  // this many times.
  std::size_t kink_retries = 2;
};

// Builds a scalar on the tape from the bound parameters.
using ScalarFn = std::function<Var<double>(Tape<double>&, const ParamMap&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Compares reverse-mode gradients with central finite differences
// (f(x+eps) - f(x-eps)) / (2 eps), entry by entry.
inline GradCheckReport grad_check(const ScalarFn& fn, ParamMap params, double eps, GradCheckOptions opts = {}) {
  if (!(eps > 0)) throw ConfigError("grad_check: eps must be positive");

  std::map<std::string, Tensor<double>> analytic;
  std::uint64_t base_branches = 0;
  {
    Tape<double> tape;
    const auto out = fn(tape, params);
    if (!std::isfinite(out.value().item())) throw NumericError("grad_check: non-finite function value at the base point");
    base_branches = tape.kink_signature();
    tape.backward(out);
    analytic = tape.param_grads();
  }

  struct Eval {
    double value;
    std::uint64_t branches;
  };
  auto evaluate = [&](const std::string& name, std::size_t index) {
    Tape<double> tape(false);
    const double v = fn(tape, params).value().item();
    if (!std::isfinite(v)) {
      throw NumericError("grad_check: non-finite function value perturbing " + name + "[" + std::to_string(index) + "]");
    }
    return Eval{v, tape.kink_signature()};
  };

  GradCheckReport report;
  report.eps = eps;
  std::mt19937_64 rng(opts.sample_seed);
  for (auto& [name, tensor] : params) {
    std::vector<std::size_t> entries(tensor.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (opts.max_entries_per_tensor > 0 && entries.size() > opts.max_entries_per_tensor) {
      // Partial Fisher-Yates: the first k slots become a uniform sample.
      for (std::size_t i = 0; i < opts.max_entries_per_tensor; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, entries.size() - 1);
        std::swap(entries[i], entries[pick(rng)]);
      }
      entries.resize(opts.max_entries_per_tensor);
    }
    const auto it = analytic.find(name);
    for (std::size_t idx : entries) {
      const double original = tensor[idx];
      double step = eps, numeric = 0.0;
      for (std::size_t attempt = 0;; ++attempt) {
        tensor[idx] = original + step;
        const auto plus = evaluate(name, idx);
        tensor[idx] = original - step;
        const auto minus = evaluate(name, idx);
        tensor[idx] = original;
        numeric = (plus.value - minus.value) / (2.0 * step);
        if (plus.branches == base_branches && minus.branches == base_branches) break;
        if (attempt == opts.kink_retries) {
          ++report.unresolved_kinks;
          break;
        }
        if (attempt == 0) ++report.kink_retries;
        step /= 10.0;
      }
      const double a = it == analytic.end() ? 0.0 : it->second[idx];
      const double err = relative_error(a, numeric);
      ++report.checked;
      if (report.worst_param.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = name + "[" + std::to_string(idx) + "]";
      }
    }
  }
  return report;
}

}  // namespace sgmim
