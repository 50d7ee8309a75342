#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& out_file = "") {
  std::string cmd = std::string(QUADMTL_CLI_PATH) + " " + args;
  cmd += out_file.empty() ? " >/dev/null 2>&1" : " >" + out_file + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const fs::path kWork = fs::path(::testing::TempDir()) / "quadmtl_cli";

const std::string kTiny =
    " --set data.gaits=trot,bound --set data.cells_per_gait=1 --set data.samples_per_traj=60"
    " --set data.settle_time=0.2 --set train.hidden=8 --set train.epochs=2 --set train.batch_size=16";

}  // namespace

TEST(Cli, PrintConfig) {
  const std::string out = (kWork / "config.txt").string();
  fs::create_directories(kWork);
  EXPECT_EQ(run("--print-config --set train.epochs=7", out), 0);
  EXPECT_NE(slurp(out).find("train.epochs = 7"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run("--print-config --set train.nope=1"), 2);
  EXPECT_EQ(run("--print-config --set train.epochs"), 2);
  EXPECT_EQ(run("rollout --expert --gait gallop"), 2);
  EXPECT_EQ(run("rollout --gait trot"), 2);
  EXPECT_EQ(run("train --data x"), 2);
  EXPECT_EQ(run("--config /nonexistent/run.conf --print-config"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST(Cli, DataErrors) {
  EXPECT_EQ(run("train --data /nonexistent/quadmtl --out /tmp/x.qmp"), 3);
  EXPECT_EQ(run("rollout --model /nonexistent/m.qmp --gait trot --duration 0.1"), 3);
  fs::create_directories(kWork / "bad");
  std::ofstream(kWork / "bad" / "trot_train.qgd") << "garbage";
  EXPECT_EQ(run("train --gaits trot --data " + (kWork / "bad").string() + " --out /tmp/x.qmp"), 3);
}

TEST(Cli, ExpertRolloutWritesLog) {
  const fs::path log = kWork / "rollout.csv";
  EXPECT_EQ(run("rollout --expert --gait trot --vx 0.1 --duration 0.5 --log " + log.string()), 0);
  EXPECT_NE(slurp(log).find('\n'), std::string::npos);
}

TEST(Cli, PipelineEndToEnd) {
  const fs::path data = kWork / "data";
  const fs::path model = kWork / "model" / "mtl.qmp";
  const fs::path eval = kWork / "eval";
  ASSERT_EQ(run("collect" + kTiny + " --out " + data.string()), 0);
  EXPECT_TRUE(fs::exists(data / "trot_train.qgd"));
  EXPECT_TRUE(fs::exists(data / "bound_holdout.qgd"));
  EXPECT_TRUE(fs::exists(data / "collection_report.txt"));

  ASSERT_EQ(run("train" + kTiny + " --data " + data.string() + " --out " + model.string()), 0);
  EXPECT_TRUE(fs::exists(model));
  EXPECT_TRUE(fs::exists(model.parent_path() / "curves.csv"));

  ASSERT_EQ(run("eval" + kTiny + " --model " + model.string() + " --data " + data.string() +
                " --out " + eval.string()),
            0);
  const std::string metrics = slurp(eval / "metrics.csv");
  EXPECT_NE(metrics.find("trot"), std::string::npos);
  EXPECT_NE(metrics.find("bound"), std::string::npos);
  EXPECT_TRUE(fs::exists(eval / "metrics_joints.csv"));
  EXPECT_TRUE(fs::exists(eval / "traj_fl.csv"));

  EXPECT_EQ(run("eval --gaits trot,jump --model " + model.string() + " --data " + data.string() +
                " --out " + eval.string()),
            3);
}
