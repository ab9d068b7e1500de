#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fff/cli.hpp"
#include "fff/trainer.hpp"

namespace fs = std::filesystem;
using namespace fff;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fff_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "fff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string small_config(const fs::path& dir, const json& extra = json::object()) {
  json j{{"task", "checkerboard"}, {"block", "fff"}, {"steps", 30},  {"batch_size", 64},
         {"eval_every", 10},       {"eval_samples", 500}, {"lr", 0.01}, {"threads", 1}};
  j.update(extra);
  const fs::path p = dir / "cfg.json";
  std::ofstream(p) << j.dump();
  return p.string();
}

double eval_loss(const std::string& stdout_text) {
  const auto pos = stdout_text.find("eval loss ");
  return std::stod(stdout_text.substr(pos + 10));
}

}  // namespace

TEST(Cli, ZeroStepsWritesInitCheckpointAndHeaderOnlyMetrics) {
  const fs::path dir = fresh_dir("zero");
  const Result r = run({"train", "--config", small_config(dir, {{"steps", 0}}), "--out",
                        (dir / "run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "run" / "metrics.csv"),
            "step,split,loss,acc,ppl,max_path_share,dead_leaf_frac\n");
  TrainConfig cfg = parse_config((dir / "run" / "resolved.json").string(), {});
  Model stored;
  checkpoint::load_model((dir / "run" / "checkpoint.fff").string(), stored);
  EXPECT_TRUE(stored == init_model(cfg, make_task_data(cfg)));
}

TEST(Cli, EvalReproducesFinalEvalLoss) {
  const fs::path dir = fresh_dir("eval");
  const std::string out = (dir / "run").string();
  const Result t = run({"train", "--config", small_config(dir), "--out", out});
  ASSERT_EQ(t.code, 0) << t.err;
  const Result e = run({"eval", "--out", out});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NEAR(eval_loss(e.out), eval_loss(t.out), 1e-9);
  const json report = json::parse(slurp(fs::path(out) / "report.json"));
  EXPECT_NEAR(report["final_eval"]["loss"].get<double>(), eval_loss(t.out), 1e-12);
  EXPECT_TRUE(fs::exists(fs::path(out) / "utilization.json"));
}

TEST(Cli, SameSeedGivesBitwiseIdenticalRuns) {
  const fs::path dir = fresh_dir("repro");
  const std::string cfg = small_config(dir);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", (dir / "b").string()}).code, 0);
  ASSERT_EQ(run({"train", "--out", (dir / "c").string(), "--config",
                 (dir / "a" / "resolved.json").string()}).code, 0);
  for (const char* f : {"metrics.csv", "checkpoint.fff", "report.json", "utilization.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "c" / f)) << f;
  }
  ASSERT_EQ(run({"train", "--config", cfg, "--seed", "5", "--out", (dir / "d").string()}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "metrics.csv"), slurp(dir / "d" / "metrics.csv"));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("codes");
  EXPECT_EQ(run({"train", "--config", (dir / "missing.json").string()}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"train", "--out", (dir / "nothing").string()}).code, 1);
  const Result bad = run({"train", "--config", small_config(dir), "--set", "depht=2", "--out",
                          (dir / "x").string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("depth"), std::string::npos) << bad.err;
  const Result nan = run({"train", "--config",
                          small_config(dir, {{"optimizer", "sgd"}, {"lr", 1e300}, {"clip_norm", 0}}),
                          "--out", (dir / "nan").string()});
  EXPECT_EQ(nan.code, 2);
  EXPECT_NE(nan.err.find("step"), std::string::npos) << nan.err;
}

TEST(Cli, AnalysisVerbsWriteArtifacts) {
  const fs::path dir = fresh_dir("verbs");
  const std::string out = (dir / "run").string();
  ASSERT_EQ(run({"train", "--config", small_config(dir), "--out", out}).code, 0);
  const Result a = run({"analyze", "--out", out, "--set", "analyze_samples=2000"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(fs::exists(fs::path(out) / "histogram.csv"));
  const Result p = run({"prune", "--out", out, "--set", "analyze_samples=5000"});
  ASSERT_EQ(p.code, 0) << p.err;
  const std::string prune = slurp(fs::path(out) / "prune.csv");
  EXPECT_EQ(prune.substr(0, prune.find('\n')), "fraction,disabled_leaves,loss,acc,ppl");
  const Result b = run({"export-boundaries", "--out", out, "--set", "boundary_resolution=8"});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(fs::path(out) / "boundaries.pgm").substr(0, 2), "P2");
  const Result bench = run({"bench", "--out", out, "--set", "bench_depths=[1,2]", "--set",
                            "bench_width=16", "--set", "bench_nodes=16", "--set", "bench_repeats=1"});
  ASSERT_EQ(bench.code, 0) << bench.err;
  EXPECT_TRUE(fs::exists(fs::path(out) / "bench.csv"));
}

TEST(Cli, FreshModelAnalyzeIsNearUniform) {
  const fs::path dir = fresh_dir("uniform");
  const std::string cfg = small_config(dir, {{"task", "lm"}, {"depth", 5}, {"corpus_chars", 2000}});
  const Result a = run({"analyze", "--config", cfg, "--out", (dir / "run").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const json report = json::parse(slurp(dir / "run" / "report.json"));
  EXPECT_LT(report["layers"][0]["max_path_share"].get<double>(), 3.0 / 32);
}

TEST(Trainer, LossDecreasesForEveryBlockKind) {
  for (const char* block : {"dense", "fff", "moe"}) {
    TrainConfig c;
    c.block = block;
    c.steps = 150;
    c.batch_size = 128;
    c.lr = 0.02;
    c.eval_samples = 500;
    c.eval_every = 1000;
    const TaskData data = make_task_data(c);
    const TrainingRun run = run_training(c, data);
    const double first = run.metrics.front().loss, last = run.metrics[run.metrics.size() - 2].loss;
    EXPECT_LT(last, first) << block;
    EXPECT_EQ(run.metrics.back().split, "eval");
    EXPECT_EQ(run.metrics.back().step, 150u);
  }
}
