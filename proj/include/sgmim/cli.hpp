#pragma once

// Command-line driver. Exit codes: 0 success, 2 argument/config error,
// 1 runtime failure (the output directory then holds a `.failed` marker).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sgmim/sweep.hpp"

namespace sgmim::cli {

namespace fs = std::filesystem;

struct Options {
  std::string command;
  std::string config_path;
  std::string output_dir = ".";
  std::vector<std::string> overrides;
  std::string checkpoint;
  bool resume = false;
  std::size_t checkpoint_every = 500;
  std::string axis;
  std::size_t workers = 0;
  bool quiet = false;
};

inline json load_config_json(const Options& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) throw ConfigError("cannot read config file " + o.config_path);
    j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + o.config_path + " is not valid JSON");
  }
  for (const auto& ov : o.overrides) apply_override(j, ov);
  if (!o.axis.empty()) j["sweep"]["axis"] = o.axis;
  if (o.workers) j["sweep"]["workers"] = o.workers;
  return j;
}

inline void write_csv_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void cmd_pretrain(const JobConfig& job, const Options& o, std::ostream& log) {
  const fs::path out = o.output_dir, ckpt = out / "checkpoint.sgm";
  std::optional<Trainer<float>> trainer;
  if (o.resume) {
    const fs::path from = o.checkpoint.empty() ? ckpt : fs::path(o.checkpoint);
    trainer.emplace(load_checkpoint(from));
  } else {
    trainer.emplace(job.model, job.scene, job.train);
  }
  const bool append = o.resume && fs::exists(out / "train_log.csv");
  TrainLog csv(out / "train_log.csv", append);
  const std::size_t total = trainer->train_config().steps;
  trainer->run(total, [&](const StepRecord& r) {
    csv.write(r);
    const std::size_t done = r.step + 1;
    if (!o.quiet && (done % 100 == 0 || done == total)) {
      log << "step " << done << "/" << total << " L_total " << r.loss.total << '\n';
    }
    if (o.checkpoint_every && done % o.checkpoint_every == 0 && done != total) save_checkpoint(*trainer, ckpt);
  });
  save_checkpoint(*trainer, ckpt);
}

inline EncoderCheckpoint encoder_arg(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_encoder(o.checkpoint);
}

inline void cmd_probe(const JobConfig& job, const Options& o, std::ostream& log) {
  const auto enc = encoder_arg(o);
  const auto r = probe_depth(enc, job.scene, job.probe);
  write_csv_text(fs::path(o.output_dir) / "probe.csv", "metric,value\nrmse," + fmt(r.metrics.rmse) + "\ndelta1," +
                                                           fmt(r.metrics.delta1) + "\n");
  if (!o.quiet) log << "rmse " << r.metrics.rmse << " delta1 " << r.metrics.delta1 << '\n';
}

// Per-token channel energy of one feature grid, scaled to 0..255.
inline void write_energy_pgm(const fs::path& path, const Tensor<double>& grid) {
  const std::size_t rows = grid.dim(0), cols = grid.dim(1), d = grid.dim(2);
  std::vector<double> e(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    for (std::size_t c = 0; c < d; ++c) e[i] += grid[i * d + c] * grid[i * d + c];
  }
  const auto [lo, hi] = std::minmax_element(e.begin(), e.end());
  const double range = *hi - *lo;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (double v : e) os.put(static_cast<char>(range > 0 ? std::lround(255.0 * (v - *lo) / range) : 0));
}

inline void cmd_analyze(const JobConfig& job, const Options& o, std::ostream& log) {
  const auto enc = encoder_arg(o);
  const auto grids = feature_grids(enc, job.scene, {job.analyze.seed, job.analyze.samples}, job.analyze.block);
  const auto profile = log_amplitude_profile(grids);
  std::string csv = "freq,rel_log_amp\n";
  for (std::size_t i = 0; i < profile.freqs.size(); ++i) csv += fmt(profile.freqs[i]) + "," + fmt(profile.rel_log_amp[i]) + "\n";
  write_csv_text(fs::path(o.output_dir) / "spectrum.csv", csv);
  if (job.analyze.pgm) {
    for (std::size_t i = 0; i < grids.size(); ++i) {
      write_energy_pgm(fs::path(o.output_dir) / ("energy_" + std::to_string(job.analyze.seed + i) + ".pgm"), grids[i]);
    }
  }
  if (!o.quiet) log << "delta_log_amplitude " << delta_log_amplitude(profile) << '\n';
}

inline void cmd_export(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  export_encoder(o.checkpoint, fs::path(o.output_dir) / "encoder.sgm");
}

inline void cmd_gen_data(const JobConfig& job, const Options& o) {
  for (std::size_t i = 0; i < job.gen_data.count; ++i) {
    const std::uint64_t seed = job.gen_data.seed + i;
    write_scene_file(fs::path(o.output_dir) / ("scene_" + std::to_string(seed) + ".bin"), generate_scene(seed, job.scene));
  }
}

inline void cmd_sweep(const JobConfig& job, const Options& o, std::ostream& log) {
  const auto cells = sweep_cells(job.sweep.axis);
  const auto results = run_sweep(job, cells, [&](const std::string& line) {
    if (!o.quiet) log << line << '\n';
  });
  std::ostringstream csv;
  write_sweep_header(csv);
  for (const auto& r : results) write_sweep_row(csv, r);
  write_csv_text(fs::path(o.output_dir) / "sweep.csv", csv.str());
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Structure-guided masked image modeling: pre-training, ablation sweeps and diagnostics", "sgmim"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool needs_ckpt) {
    sub->add_option("--config", o.config_path, "JSON job configuration")->check(CLI::ExistingFile);
    sub->add_option("--output-dir", o.output_dir, "directory for all outputs (created if missing)");
    sub->add_option("--set", o.overrides, "override section.key=value (repeatable, applied after --config)");
    sub->add_flag("--quiet", o.quiet, "suppress progress output");
    if (needs_ckpt) {
      sub->add_option("--checkpoint,--encoder", o.checkpoint, "full or encoder checkpoint")->required()->check(CLI::ExistingFile);
    }
  };
  auto* pretrain = app.add_subcommand("pretrain", "pre-train an encoder; writes checkpoint.sgm and train_log.csv");
  common(pretrain, false);
  pretrain->add_flag("--resume", o.resume, "continue from the output directory's checkpoint (or --checkpoint)");
  pretrain->add_option("--checkpoint", o.checkpoint, "checkpoint to resume from")->check(CLI::ExistingFile);
  pretrain->add_option("--checkpoint-every", o.checkpoint_every, "steps between intermediate checkpoints (0: only final)");
  auto* sweep = app.add_subcommand("sweep", "run the masking / loss-weight ablation grid; writes sweep.csv");
  common(sweep, false);
  sweep->add_option("--axis", o.axis, "grid axis")->check(CLI::IsMember({"all", "masking", "loss_weights"}));
  sweep->add_option("--workers", o.workers, "parallel worker threads")->check(CLI::PositiveNumber);
  common(app.add_subcommand("analyze", "Fourier profile of encoder feature maps; writes spectrum.csv"), true);
  common(app.add_subcommand("probe", "linear depth probe on a frozen encoder; writes probe.csv"), true);
  common(app.add_subcommand("export", "extract the encoder from a checkpoint; writes encoder.sgm"), true);
  common(app.add_subcommand("gen-data", "write synthetic scenes as binary files"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  o.command = app.get_subcommands().front()->get_name();

  JobConfig job;
  try {
    job = job_from_json(load_config_json(o));
    fs::create_directories(o.output_dir);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const fs::path marker = fs::path(o.output_dir) / ".failed";
  std::error_code ec;
  fs::remove(marker, ec);
  try {
    if (o.command == "pretrain") cmd_pretrain(job, o, out);
    else if (o.command == "sweep") cmd_sweep(job, o, out);
    else if (o.command == "analyze") cmd_analyze(job, o, out);
    else if (o.command == "probe") cmd_probe(job, o, out);
    else if (o.command == "export") cmd_export(o);
    else cmd_gen_data(job, o);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << o.command << " failed: " << e.what() << '\n';
    std::ofstream(marker) << o.command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace sgmim::cli
