#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = OTAFL_CLI_PATH;
const std::string kSmall =
    " --antennas 2 --clients 2 --episodes 3 --horizon 4 --set agent.batch=8 --set agent.hidden=8";

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = "'" + kCli + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("otafl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpListsSubcommandsAndFlags) {
  EXPECT_EQ(run("--help", dir_ / "log"), 0);
  const std::string help = slurp(dir_ / "log");
  for (const char* s : {"train", "sweep", "verify-bound", "grad-check", "oracle", "replay-config"}) {
    EXPECT_NE(help.find(s), std::string::npos) << s;
  }
  EXPECT_EQ(run("train --help", dir_ / "log"), 0);
  const std::string train_help = slurp(dir_ / "log");
  for (const char* f : {"--config", "--seed", "--out", "--scenario", "--agent", "--episodes", "--horizon",
                        "--antennas", "--clients"}) {
    EXPECT_NE(train_help.find(f), std::string::npos) << f;
  }
}

TEST_F(Cli, BadInvocationsFail) {
  EXPECT_NE(run("frobnicate", dir_ / "log"), 0);
  EXPECT_NE(run("", dir_ / "log"), 0);
  EXPECT_NE(run("train --scenario both", dir_ / "log"), 0);
  EXPECT_NE(run("train --antennas 40 --out '" + (dir_ / "o").string() + "'", dir_ / "log"), 0);
  EXPECT_FALSE(fs::exists(dir_ / "o"));
}

TEST_F(Cli, MissingConfigFailsWithoutOutput) {
  const fs::path out = dir_ / "never";
  EXPECT_EQ(run("train --config '" + (dir_ / "missing.cfg").string() + "' --out '" + out.string() + "'",
                dir_ / "log"),
            2);
  const std::string log = slurp(dir_ / "log");
  EXPECT_EQ(log.rfind("otafl: ", 0), 0u) << log;
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(Cli, UnknownConfigKeyNamesTheLine) {
  std::ofstream(dir_ / "bad.cfg") << "array.antennas = 2\narray.antenas = 3\n";
  EXPECT_EQ(run("show-config --config '" + (dir_ / "bad.cfg").string() + "'", dir_ / "log"), 2);
  EXPECT_NE(slurp(dir_ / "log").find("bad.cfg:2"), std::string::npos);
}

TEST_F(Cli, TrainIsByteIdenticalAcrossRuns) {
  const std::string args = "train --seed 7" + kSmall + " --out ";
  ASSERT_EQ(run(args + "'" + (dir_ / "a").string() + "'", dir_ / "log"), 0) << slurp(dir_ / "log");
  ASSERT_EQ(run(args + "'" + (dir_ / "b").string() + "'", dir_ / "log"), 0);
  const auto csv = "train_fa_rdpg_seed7.csv";
  ASSERT_TRUE(fs::exists(dir_ / "a" / csv));
  EXPECT_EQ(slurp(dir_ / "a" / csv), slurp(dir_ / "b" / csv));
  EXPECT_EQ(slurp(dir_ / "a" / "train_fa_rdpg_seed7.json"), slurp(dir_ / "b" / "train_fa_rdpg_seed7.json"));
  const std::string body = slurp(dir_ / "a" / csv);
  EXPECT_EQ(body.substr(0, body.find('\n')), "episode,mean_reward,ravg_100,actor_loss,critic_loss,seed");
}

TEST_F(Cli, ConfigFileAndFlagsCombine) {
  std::ofstream(dir_ / "run.cfg") << "# small run\nexperiment.agent = ddpg\nexperiment.scenario = fpa\n";
  ASSERT_EQ(run("train --config '" + (dir_ / "run.cfg").string() + "' --seed 2" + kSmall + " --out '" +
                    (dir_ / "o").string() + "'",
                dir_ / "log"),
            0)
      << slurp(dir_ / "log");
  EXPECT_TRUE(fs::exists(dir_ / "o" / "train_fpa_ddpg_seed2.csv"));
}

TEST_F(Cli, ReplayConfigReproducesTraining) {
  ASSERT_EQ(run("train --seed 5 --agent ddpg" + kSmall + " --out '" + (dir_ / "a").string() + "'", dir_ / "log"),
            0);
  ASSERT_EQ(run("replay-config '" + (dir_ / "a" / "train_fa_ddpg_seed5.json").string() + "' --out '" +
                    (dir_ / "r").string() + "'",
                dir_ / "log"),
            0)
      << slurp(dir_ / "log");
  EXPECT_EQ(slurp(dir_ / "a" / "train_fa_ddpg_seed5.csv"), slurp(dir_ / "r" / "train_fa_ddpg_seed5.csv"));
}

TEST_F(Cli, VerifyBoundAndReplay) {
  const std::string args = "verify-bound --seed 3 --clients 2 --antennas 2 --set fl.bound_seeds=2 --set fl.rounds=8";
  ASSERT_EQ(run(args + " --out '" + (dir_ / "a").string() + "'", dir_ / "log"), 0) << slurp(dir_ / "log");
  EXPECT_NE(slurp(dir_ / "log").find("holds fraction 1.000000"), std::string::npos);
  const std::string csv = slurp(dir_ / "a" / "bound_matched.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "round,measured_gap,theta,phi_bound,seed");
  ASSERT_EQ(run("replay-config '" + (dir_ / "a" / "bound_matched.json").string() + "' --out '" +
                    (dir_ / "r").string() + "'",
                dir_ / "log"),
            0);
  EXPECT_EQ(csv, slurp(dir_ / "r" / "bound_matched.csv"));
}

TEST_F(Cli, OracleWritesPerStateRewards) {
  ASSERT_EQ(run("oracle --seed 4 --antennas 2 --clients 2 --set oracle.budget=20 --set oracle.states=3 --out '" +
                    (dir_ / "o").string() + "'",
                dir_ / "log"),
            0);
  const std::string csv = slurp(dir_ / "o" / "oracle_fa.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(Cli, GradCheckPasses) {
  EXPECT_EQ(run("grad-check --seed 3", dir_ / "log"), 0) << slurp(dir_ / "log");
  EXPECT_NE(slurp(dir_ / "log").find("max relative error"), std::string::npos);
}

TEST_F(Cli, ReplayRejectsNonSidecar) {
  std::ofstream(dir_ / "x.json") << "{\"hello\": 1}\n";
  EXPECT_EQ(run("replay-config '" + (dir_ / "x.json").string() + "'", dir_ / "log"), 2);
}
