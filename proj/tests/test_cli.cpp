#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "sgmim/cli.hpp"
#include "test_support.hpp"

using namespace sgmim;
using namespace sgmim::testing;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTiny{
    "--set", "scene.height=16", "--set", "scene.width=16",  "--set", "model.patch=4",    "--set", "model.depth=1",
    "--set", "model.width=16",  "--set", "model.heads=2",   "--set", "train.steps=6",    "--set", "train.batch_size=2",
    "--set", "probe.steps=10",  "--set", "probe.train_count=8", "--set", "probe.val_count=4", "--set", "analyze.samples=2",
    "--set", "gen_data.count=3", "--set", "sweep.seeds=[0]"};

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args, bool tiny = true) {
  if (tiny && args.size() > 1) args.insert(args.end(), kTiny.begin(), kTiny.end());
  args.insert(args.begin(), "sgmim");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  return lines;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}, false).code, 0);
  EXPECT_NE(run_cli({"--help"}, false).out.find("pretrain"), std::string::npos);
  EXPECT_EQ(run_cli({}, false).code, 2);
  EXPECT_EQ(run_cli({"train"}, false).code, 2);
  EXPECT_EQ(run_cli({"pretrain", "--bogus"}, false).code, 2);
  EXPECT_EQ(run_cli({"probe"}, false).code, 2);
  EXPECT_EQ(run_cli({"sweep", "--axis", "depth"}, false).code, 2);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = scratch_dir("cli_config");
  std::ofstream(dir / "bad.json") << R"({"train": {"stepz": 3}})";
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_EQ(run_cli({"pretrain", "--config", (dir / "bad.json").string()}, false).code, 2);
  EXPECT_EQ(run_cli({"pretrain", "--config", (dir / "broken.json").string()}, false).code, 2);
  const auto r = run_cli({"pretrain", "--output-dir", dir.string(), "--set", "model.patch=7"}, false);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / ".failed"));
}

TEST(Cli, PretrainExportProbeAnalyze) {
  const auto dir = scratch_dir("cli_pipeline");
  const auto r = run_cli({"pretrain", "--output-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("step 6/6"), std::string::npos);
  ASSERT_TRUE(fs::exists(dir / "checkpoint.sgm"));
  const auto log = lines_of(dir / "train_log.csv");
  ASSERT_EQ(log.size(), 7u);
  EXPECT_EQ(log[0], "step,lr,L_I,L_S,L_total");
  EXPECT_EQ(log[6].substr(0, 2), "5,");
  EXPECT_EQ(load_checkpoint(dir / "checkpoint.sgm").step(), 6u);

  ASSERT_EQ(run_cli({"export", "--quiet", "--output-dir", dir.string(), "--checkpoint", (dir / "checkpoint.sgm").string()}).code, 0);
  EXPECT_EQ(load_encoder(dir / "encoder.sgm").params, load_encoder(dir / "checkpoint.sgm").params);

  ASSERT_EQ(run_cli({"probe", "--quiet", "--output-dir", dir.string(), "--encoder", (dir / "encoder.sgm").string()}).code, 0);
  const auto probe = lines_of(dir / "probe.csv");
  ASSERT_EQ(probe.size(), 3u);
  EXPECT_EQ(probe[0], "metric,value");
  EXPECT_EQ(probe[1].substr(0, 5), "rmse,");
  EXPECT_TRUE(std::isfinite(std::stod(probe[1].substr(5))));

  ASSERT_EQ(run_cli({"analyze", "--quiet", "--output-dir", dir.string(), "--checkpoint", (dir / "encoder.sgm").string(),
                     "--set", "analyze.pgm=true"})
                .code,
            0);
  const auto spectrum = lines_of(dir / "spectrum.csv");
  ASSERT_EQ(spectrum.size(), 1 + kProfilePoints);
  EXPECT_EQ(spectrum[0], "freq,rel_log_amp");
  EXPECT_EQ(spectrum[1], "0,0");
  std::ifstream pgm(dir / "energy_3000000.pgm", std::ios::binary);
  std::string magic, w, h, maxv;
  pgm >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic + " " + w + " " + h + " " + maxv, "P5 4 4 255");
  EXPECT_TRUE(fs::exists(dir / "energy_3000001.pgm"));
}

TEST(Cli, ResumeContinuesTheLog) {
  const auto straight = scratch_dir("cli_straight"), resumed = scratch_dir("cli_resumed");
  ASSERT_EQ(run_cli({"pretrain", "--quiet", "--output-dir", straight.string()}).code, 0);

  // Simulate an interrupted run: three steps done, checkpoint and partial log on disk.
  JobConfig job;
  job.scene.height = job.scene.width = 16;
  job.model = small_model(16, 4, 1, 16, 2);
  job.train.steps = 6;
  job.train.batch_size = 2;
  Trainer<float> t(job.model, job.scene, job.train);
  {
    TrainLog log(resumed / "train_log.csv");
    t.run(3, [&](const StepRecord& r) { log.write(r); });
  }
  save_checkpoint(t, resumed / "checkpoint.sgm");
  ASSERT_EQ(run_cli({"pretrain", "--quiet", "--resume", "--output-dir", resumed.string()}).code, 0);
  EXPECT_EQ(lines_of(resumed / "train_log.csv"), lines_of(straight / "train_log.csv"));
  EXPECT_EQ(load_checkpoint(resumed / "checkpoint.sgm").params(), load_checkpoint(straight / "checkpoint.sgm").params());
}

TEST(Cli, GenDataWritesScenes) {
  const auto dir = scratch_dir("cli_gen");
  ASSERT_EQ(run_cli({"gen-data", "--output-dir", dir.string(), "--set", "gen_data.seed=40"}).code, 0);
  for (std::uint64_t s : {40u, 41u, 42u}) {
    const auto scene = read_scene_file(dir / ("scene_" + std::to_string(s) + ".bin"));
    SceneConfig cfg;
    cfg.height = cfg.width = 16;
    EXPECT_EQ(scene.image, generate_scene(s, cfg).image);
  }
  EXPECT_FALSE(fs::exists(dir / "scene_43.bin"));
}

TEST(Cli, SweepWritesOneRowPerCell) {
  const auto dir = scratch_dir("cli_sweep");
  const auto r = run_cli({"sweep", "--quiet", "--output-dir", dir.string(), "--axis", "loss_weights", "--workers", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(dir / "sweep.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[1].rfind("loss_weights,selective,0.6,1,1,0,", 0), 0u) << rows[1];
  EXPECT_EQ(rows[4].rfind("loss_weights,selective,0.6,1,0,0,", 0), 0u) << rows[4];
}

TEST(Cli, RuntimeFailureLeavesMarker) {
  const auto dir = scratch_dir("cli_fail");
  std::ofstream(dir / "junk.sgm") << "not a checkpoint";
  const auto r = run_cli({"probe", "--output-dir", dir.string(), "--checkpoint", (dir / "junk.sgm").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("probe failed"), std::string::npos);
  ASSERT_TRUE(fs::exists(dir / ".failed"));
  // A later success clears it.
  ASSERT_EQ(run_cli({"gen-data", "--output-dir", dir.string()}).code, 0);
  EXPECT_FALSE(fs::exists(dir / ".failed"));
}

TEST(Cli, InstalledBinaryExitCodes) {
  const std::string bin = SGMIM_CLI_PATH;
  EXPECT_EQ(std::system((bin + " --help > /dev/null").c_str()), 0);
  const int bad = std::system((bin + " pretrain --set train.steps=abc > /dev/null 2>&1").c_str());
  EXPECT_TRUE(WIFEXITED(bad));
  EXPECT_EQ(WEXITSTATUS(bad), 2);
}
