#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr together
};

Outcome run(const std::string& args, const fs::path& out_root = {}) {
  std::string cmd;
  if (!out_root.empty()) cmd = "BIFRN_OUTPUT_ROOT='" + out_root.string() + "' ";
  cmd += "'" + std::string(BIFRN_CLI) + "' " + args + " 2>&1";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return o;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) o.output.append(buf, n);
  const int status = pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bifrn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

const char* kTiny =
    "seed = 3\n"
    "dataset.synthetic.classes = 20\n"
    "dataset.synthetic.samples_per_class = 10\n"
    "model.feature_rows = 2\n"
    "model.channels = 4\n"
    "train.epochs = 2\n"
    "train.episodes_per_epoch = 3\n"
    "train.shot = 1\n"
    "train.query = 2\n"
    "train.eval_period = 1\n"
    "train.val_episodes = 4\n"
    "eval.query = 2\n"
    "eval.tasks = 5\n";

}  // namespace

TEST_F(Cli, GradcheckPasses) {
  const auto o = run("gradcheck --seed 2");
  EXPECT_EQ(o.code, 0) << o.output;
  EXPECT_NE(o.output.find("all passed"), std::string::npos) << o.output;
}

TEST_F(Cli, MissingSeedIsConfigError) {
  const auto cfg = write("noseed.cfg", "model.channels = 4\n");
  const auto o = run("train '" + cfg.string() + "'", dir_ / "out");
  EXPECT_EQ(o.code, 2) << o.output;
  EXPECT_NE(o.output.find("[seed]"), std::string::npos) << o.output;
}

TEST_F(Cli, UnknownKeyNamesKeyAndLine) {
  const auto cfg = write("typo.cfg", "seed = 1\nmodel.chanels = 4\n");
  const auto o = run("train '" + cfg.string() + "'", dir_ / "out");
  EXPECT_EQ(o.code, 2) << o.output;
  EXPECT_NE(o.output.find("model.chanels"), std::string::npos) << o.output;
  EXPECT_NE(o.output.find("line 2"), std::string::npos) << o.output;
}

TEST_F(Cli, BadArgumentsExitTwo) {
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train '" + (dir_ / "absent.cfg").string() + "'").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, TrainThenEvalWritesArtifacts) {
  const auto cfg = write("tiny.cfg", kTiny);
  const auto out = dir_ / "run";
  auto t = run("train --quiet '" + cfg.string() + "'", out);
  ASSERT_EQ(t.code, 0) << t.output;
  for (const char* f : {"checkpoint.bin", "train_log.csv", "config.cfg"}) EXPECT_TRUE(fs::exists(out / f)) << f;

  auto e = run("eval '" + cfg.string() + "' '" + (out / "checkpoint.bin").string() + "'", out);
  ASSERT_EQ(e.code, 0) << e.output;
  std::ifstream in(out / "eval.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 7u);  // header, 5 tasks, summary
}

TEST_F(Cli, EvalWithCorruptCheckpointIsRuntimeFailure) {
  const auto cfg = write("tiny.cfg", kTiny);
  const auto ckpt = write("junk.bin", "not a checkpoint");
  const auto o = run("eval '" + cfg.string() + "' '" + ckpt.string() + "'", dir_ / "out");
  EXPECT_EQ(o.code, 1) << o.output;
  EXPECT_NE(o.output.find("error:"), std::string::npos) << o.output;
}
