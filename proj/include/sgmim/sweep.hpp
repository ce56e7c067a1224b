#pragma once

// Ablation grid over masking strategy/ratio and loss-weight ratio. Every
// cell pre-trains one encoder per seed and scores it with the depth probe.

#include <atomic>
#include <cstdio>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include "sgmim/probe.hpp"

namespace sgmim {

struct SweepCell {
  std::string axis;
  MaskingStrategy masking = MaskingStrategy::selective_complement;
  double mask_ratio = 0.6;
  LossWeights weights;
};

struct SweepResult {
  SweepCell cell;
  std::vector<std::uint64_t> seeds;
  std::vector<DepthMetrics> per_seed;

  double mean_rmse() const {
    double s = 0;
    for (const auto& m : per_seed) s += m.rmse;
    return s / static_cast<double>(per_seed.size());
  }
  double mean_delta1() const {
    double s = 0;
    for (const auto& m : per_seed) s += m.delta1;
    return s / static_cast<double>(per_seed.size());
  }
};

inline std::vector<SweepCell> sweep_cells(SweepAxis axis) {
  std::vector<SweepCell> cells;
  if (axis != SweepAxis::loss_weights) {
    cells.push_back({"masking", MaskingStrategy::random_both, 0.6, {}});
    for (double r : {0.5, 0.6, 0.7}) cells.push_back({"masking", MaskingStrategy::selective_complement, r, {}});
  }
  if (axis != SweepAxis::masking) {
    for (double ls : {1.0, 0.1, 0.01, 0.0}) {
      cells.push_back({"loss_weights", MaskingStrategy::selective_complement, 0.6, {1.0, ls}});
    }
  }
  return cells;
}

// Pre-trains with the cell's settings and pre-training seed `seed`, then probes.
inline DepthMetrics run_sweep_job(const JobConfig& job, const SweepCell& cell, std::uint64_t seed) {
  TrainConfig train = job.train;
  train.masking = cell.masking;
  train.mask_ratio = cell.mask_ratio;
  train.loss_weights = cell.weights;
  train.seed = seed;
  Trainer<float> trainer(job.model, job.scene, train);
  trainer.run(train.steps);
  return probe_depth(encoder_of(trainer), job.scene, job.probe).metrics;
}

// Jobs are distributed over `workers` threads; results keep cell order.
inline std::vector<SweepResult> run_sweep(const JobConfig& job, const std::vector<SweepCell>& cells,
                                          const std::function<void(const std::string&)>& log = {}) {
  const auto& seeds = job.sweep.seeds;
  std::vector<SweepResult> results;
  for (const auto& c : cells) results.push_back({c, seeds, std::vector<DepthMetrics>(seeds.size())});
  const std::size_t total = cells.size() * seeds.size();
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t k; (k = next++) < total;) {
      const std::size_t ci = k / seeds.size(), si = k % seeds.size();
      try {
        results[ci].per_seed[si] = run_sweep_job(job, cells[ci], seeds[si]);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = total;
        return;
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        std::ostringstream os;
        os << "cell " << ci << " seed " << seeds[si] << " rmse " << results[ci].per_seed[si].rmse;
        log(os.str());
      }
    }
  };
  const std::size_t n = std::min(job.sweep.workers, total);
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

inline void write_sweep_header(std::ostream& os) {
  os << "axis,masking,mask_ratio,lambda_image,lambda_struct,seeds,mean_rmse,mean_delta1,rmse_per_seed\n";
}

inline void write_sweep_row(std::ostream& os, const SweepResult& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  std::string seeds, rmses;
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    if (i) seeds += ';', rmses += ';';
    seeds += std::to_string(r.seeds[i]);
    rmses += num(r.per_seed[i].rmse);
  }
  os << r.cell.axis << ',' << to_string(r.cell.masking) << ',' << num(r.cell.mask_ratio) << ','
     << num(r.cell.weights.image) << ',' << num(r.cell.weights.structured) << ',' << seeds << ',' << num(r.mean_rmse())
     << ',' << num(r.mean_delta1()) << ',' << rmses << '\n';
}

}  // namespace sgmim
