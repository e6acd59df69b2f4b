#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cle/run_config.hpp"
#include "test_util.hpp"

using namespace cle;
using cle::testing::temp_dir;

namespace {

int run(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(CLE_BINARY) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string first_line(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  return line;
}

}  // namespace

// ---------------------------------------------------------------------------
// Run configuration

TEST(RunConfig, RejectsUnknownKeys) {
  EXPECT_THROW(parse_run_config("[train]\nepochs = 3\nlearning_rat = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[nosuch]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("epochs = 3\n"), ConfigError);
  RunConfig c;
  EXPECT_THROW(set_key(c, "train.epochs", "three"), ConfigError);
  EXPECT_THROW(set_key(c, "model.arch", "transformer"), ConfigError);
  EXPECT_THROW(set_key(c, "run.precision", "half"), ConfigError);
}

TEST(RunConfig, RoundTrip) {
  RunConfig c;
  set_key(c, "model.arch", "stateful");
  set_key(c, "model.scale", "scaled");
  set_key(c, "train.epochs", "12");
  set_key(c, "train.schedule", "step");
  set_key(c, "train.steps", "0:1e-3 5:2.5e-4");
  set_key(c, "train.bins", "16,32,48");
  set_key(c, "data.split", "random");
  set_key(c, "run.seed", "99");
  const std::string ini = to_ini(c);
  const RunConfig back = parse_run_config(ini);
  EXPECT_EQ(to_ini(back), ini);
  for (const auto& k : config_keys()) EXPECT_EQ(get_key(back, k.key), get_key(c, k.key)) << k.key;
  EXPECT_EQ(back.arch, Architecture::Stateful);
  EXPECT_EQ(back.bins, (std::vector<std::size_t>{16, 32, 48}));
  const auto s = schedule_spec(back);
  ASSERT_EQ(s.kind, ScheduleSpec::Kind::Step);
  EXPECT_EQ(s.steps[1], (std::pair<std::size_t, double>{5, 2.5e-4}));
}

TEST(RunConfig, HelpListsEveryKeyWithDefault) {
  const std::string help = config_help();
  const RunConfig defaults;
  for (const auto& k : config_keys()) {
    EXPECT_NE(help.find(k.key), std::string::npos) << k.key;
    EXPECT_FALSE(k.doc.empty()) << k.key;
  }
  EXPECT_NE(help.find("seed"), std::string::npos);
  EXPECT_EQ(get_key(defaults, "train.clip_len"), "8");
}

TEST(RunConfig, DerivedConfigs) {
  RunConfig c;
  set_key(c, "model.arch", "stateful");
  set_key(c, "model.scale", "scaled");
  const ModelConfig mc = model_config(c, 5);
  EXPECT_EQ(mc.num_classes, 5u);
  EXPECT_EQ(mc.frames, c.clip_len);
  const TrainConfig tc = train_config(c);
  EXPECT_EQ(tc.batch_size, 6u);
  EXPECT_EQ(tc.seed, 1u);
}

// ---------------------------------------------------------------------------
// Command line

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = temp_dir("cli");
    ASSERT_EQ(run("synth --classes 3 --per-class 6 --len-min 24 --len-max 48 --frame-size 24 --seed 5 --out " +
                      (dir_ / "data").string(),
                  dir_ / "synth.txt"),
              0)
        << slurp(dir_ / "synth.txt");
  }
  static std::filesystem::path manifest() { return dir_ / "data" / "manifest.csv"; }
  static std::string train_args(const std::string& out) {
    return "train --model stateless --manifest " + manifest().string() + " --out " + (dir_ / out).string() +
           " --set model.scale=scaled --set data.split=random --set data.val_fraction=0.25 --set train.epochs=2 --set train.batch_size=6"
           " --set train.schedule=constant --set train.lr=1e-3";
  }
  static std::filesystem::path dir_;
};

std::filesystem::path Cli::dir_;

TEST_F(Cli, HelpAndUsage) {
  EXPECT_EQ(run("--help", dir_ / "h.txt"), 0);
  EXPECT_EQ(run("train --help", dir_ / "h.txt"), 0);
  EXPECT_NE(slurp(dir_ / "h.txt").find("train.weight_exponent"), std::string::npos);
  EXPECT_EQ(run("frobnicate", dir_ / "h.txt"), 2);
  EXPECT_EQ(run("stats", dir_ / "h.txt"), 2);
}

TEST_F(Cli, SynthRefusesToOverwrite) {
  EXPECT_NE(slurp(dir_ / "synth.txt").find("manifest.csv"), std::string::npos);
  EXPECT_EQ(run("synth --classes 3 --per-class 1 --out " + (dir_ / "data").string(), dir_ / "s.txt"), 2);
  EXPECT_EQ(run("synth --classes 99 --out " + (dir_ / "bad").string(), dir_ / "s.txt"), 2);
}

TEST_F(Cli, Stats) {
  const auto out = dir_ / "hist.csv";
  ASSERT_EQ(run("stats --manifest " + manifest().string() + " --edges 16,32,48 --out " + out.string(),
                dir_ / "st.txt"),
            0);
  EXPECT_EQ(first_line(out), "class,16,32,48,total");
  EXPECT_EQ(run("stats --manifest " + (dir_ / "missing.csv").string(), dir_ / "st.txt"), 3);
  EXPECT_EQ(run("stats --manifest " + manifest().string() + " --edges 12,8", dir_ / "st.txt"), 2);
}

TEST_F(Cli, TrainEvalBench) {
  ASSERT_EQ(run(train_args("run"), dir_ / "train.txt"), 0) << slurp(dir_ / "train.txt");
  const auto run_dir = dir_ / "run";
  EXPECT_EQ(first_line(run_dir / "log.csv"), "epoch,lr,train_loss,train_acc,val_loss,val_acc,seconds");
  EXPECT_TRUE(std::filesystem::exists(run_dir / "best.ckpt"));
  EXPECT_EQ(load_run_config(run_dir / "config.ini").epochs, 2u);

  ASSERT_EQ(run("eval --checkpoint " + (run_dir / "last.ckpt").string() + " --split test", dir_ / "eval.txt"), 0)
      << slurp(dir_ / "eval.txt");
  const auto report = run_dir / "eval_test";
  EXPECT_NE(slurp(dir_ / "eval.txt").find(report.string()), std::string::npos);
  EXPECT_EQ(first_line(report / "confusion.csv"), "true,pred_0,pred_1,pred_2");
  EXPECT_TRUE(std::filesystem::exists(report / "summary.txt"));
  std::ifstream pc(report / "per_class.csv");
  std::string line;
  std::getline(pc, line);
  std::size_t rows = 0;
  while (std::getline(pc, line)) {
    const double acc = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  EXPECT_EQ(run("eval --checkpoint " + (run_dir / "last.ckpt").string() + " --min-accuracy 1.01",
                dir_ / "eval.txt"),
            1);
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "nope.ckpt").string(), dir_ / "eval.txt"), 3);

  ASSERT_EQ(run("bench --checkpoint " + (run_dir / "last.ckpt").string() + " --count 2 --frames 40 --reps 1",
                dir_ / "bench.txt"),
            0);
  const std::string bench = slurp(dir_ / "bench.txt");
  EXPECT_NE(bench.find("p95"), std::string::npos) << bench;
  EXPECT_NE(bench.find("frames/s"), std::string::npos) << bench;
}

TEST_F(Cli, ResumeContinuesTheLog) {
  ASSERT_EQ(run(train_args("resume"), dir_ / "r1.txt"), 0) << slurp(dir_ / "r1.txt");
  const std::string before = slurp(dir_ / "resume" / "log.csv");
  ASSERT_EQ(run(train_args("resume") + " --set train.epochs=3 --resume", dir_ / "r2.txt"), 0)
      << slurp(dir_ / "r2.txt");
  const std::string after = slurp(dir_ / "resume" / "log.csv");
  EXPECT_EQ(after.substr(0, before.size()), before);
  EXPECT_EQ(std::count(after.begin(), after.end(), '\n'), 4);
}

TEST_F(Cli, BadConfigIsUsageError) {
  EXPECT_EQ(run(train_args("bad") + " --set train.nonsense=1", dir_ / "b.txt"), 2);
  EXPECT_EQ(run("lr-range --model stateless --manifest " + manifest().string() + " --iters 5", dir_ / "b.txt"), 2);
}

TEST_F(Cli, RangeTest) {
  const auto csv = dir_ / "range.csv";
  ASSERT_EQ(run("lr-range --model stateless --manifest " + manifest().string() +
                    " --set model.scale=scaled --set data.split=random --set train.batch_size=4 --iters 12 --csv " +
                    csv.string() + " --out " + (dir_ / "range").string(),
                dir_ / "range.txt"),
            0)
      << slurp(dir_ / "range.txt");
  EXPECT_EQ(first_line(csv), "iter,lr,smoothed_loss,raw_loss");
}

TEST_F(Cli, Gradcheck) {
  EXPECT_EQ(run("gradcheck --seeds 2", dir_ / "g.txt"), 0) << slurp(dir_ / "g.txt");
  EXPECT_EQ(run("gradcheck --seeds 1 --corrupt-backward", dir_ / "g.txt"), 1);
  EXPECT_EQ(run("gradcheck --precision float", dir_ / "g.txt"), 2);
}

TEST_F(Cli, SeedFallbackIsDeterministic) {
  const auto a = dir_ / "env_a", b = dir_ / "env_b";
  const std::string common = " synth --classes 2 --per-class 1 --frame-size 16 --len-min 10 --len-max 12 --out ";
  ASSERT_EQ(std::system(("CLE_SEED=42 " + std::string(CLE_BINARY) + common + a.string() + " > /dev/null").c_str()),
            0);
  ASSERT_EQ(std::system(("CLE_SEED=42 " + std::string(CLE_BINARY) + common + b.string() + " > /dev/null").c_str()),
            0);
  EXPECT_EQ(slurp(a / "videos" / "c00_0000.dvid"), slurp(b / "videos" / "c00_0000.dvid"));
}
