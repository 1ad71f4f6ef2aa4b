#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kTmp = fs::path(GVIM_TEST_TMP) / "cli";

int run(const std::string& args) {
  const std::string cmd = std::string(GVIM_CLI_PATH) + " " + args + " >" + (kTmp / "stdout.txt").string() +
                          " 2>" + (kTmp / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kTmp);
    fs::create_directories(kTmp);
  }
  std::string out(const std::string& name) const { return (kTmp / name).string(); }
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(slurp(kTmp / "stdout.txt").find("bias-study"), std::string::npos);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("estimate"), 2);  // --data is required
  EXPECT_EQ(run("--threads 0 verify-theorems"), 2);
}

TEST_F(Cli, SimulateThenEstimate) {
  const auto dir = out("sim");
  ASSERT_EQ(run("--seed 4 --out-dir " + dir + " simulate --dgp friedman -n 150 --n-nuisance 2 --name friedman"), 0);
  ASSERT_TRUE(fs::exists(fs::path(dir) / "friedman.csv"));
  ASSERT_TRUE(fs::exists(fs::path(dir) / "friedman.schema.json"));
  const std::string data = "--data " + dir + "/friedman.csv --schema " + dir + "/friedman.schema.json";
  ASSERT_EQ(run("--seed 5 --out-dir " + dir + " estimate " + data + " --model oracle --features X1,C1,X8"), 0);
  const auto first = slurp(fs::path(dir) / "estimates.csv");
  EXPECT_EQ(first.rfind("feature,point,per_split,se,m,M,seed\nX1,", 0), 0u) << first;
  EXPECT_NE(first.find("\nX8,0,"), std::string::npos) << first;
  // Same seed, more threads: identical bytes.
  ASSERT_EQ(run("--seed 5 --threads 4 --out-dir " + dir + " estimate " + data +
                " --model oracle --features X1,C1,X8"),
            0);
  EXPECT_EQ(slurp(fs::path(dir) / "estimates.csv"), first);
  ASSERT_EQ(run("--seed 5 --out-dir " + dir + " estimate " + data +
                " --model oracle --features X1 --bootstrap 3 --save-model " + dir + "/model.json"),
            0);
  EXPECT_TRUE(fs::exists(fs::path(dir) / "model.json"));
  EXPECT_NE(slurp(fs::path(dir) / "estimates.csv").find(",10,3,5\n"), std::string::npos);
  // Unknown feature and unknown model are usage errors.
  EXPECT_EQ(run("--out-dir " + dir + " estimate " + data + " --features nope"), 2);
  EXPECT_EQ(run("--out-dir " + dir + " estimate " + data + " --model forest"), 2);
}

TEST_F(Cli, IoAndParseErrors) {
  EXPECT_EQ(run("estimate --data " + out("missing.csv")), 3);
  write(kTmp / "bad.csv", "x,y\n1,abc\n");
  EXPECT_EQ(run("estimate --data " + out("bad.csv")), 3);
  EXPECT_NE(slurp(kTmp / "stderr.txt").find("bad.csv:2"), std::string::npos);
  EXPECT_EQ(run("report --dir " + out("nowhere")), 3);
}

TEST_F(Cli, ConfigErrors) {
  write(kTmp / "bad_config.json", R"({"n_replicates": 2, "colour": "red"})");
  EXPECT_EQ(run("--out-dir " + out("b") + " bias-study --config " + out("bad_config.json")), 2);
  EXPECT_NE(slurp(kTmp / "stderr.txt").find("colour"), std::string::npos);
  write(kTmp / "broken.json", "{not json");
  EXPECT_EQ(run("--out-dir " + out("b") + " bias-study --config " + out("broken.json")), 3);
}

TEST_F(Cli, TrueGvim) {
  ASSERT_EQ(run("--out-dir " + out("tg") + " true-gvim --method analytic --features X1,X4,C2"), 0);
  const auto text = slurp(kTmp / "tg" / "true_gvim.csv");
  EXPECT_NE(text.find("X1,7.968"), std::string::npos) << text;
  EXPECT_NE(text.find("X4,49.125,analytic"), std::string::npos) << text;
  EXPECT_EQ(run("--out-dir " + out("tg") + " true-gvim --method analytic --features C1"), 2);
}

TEST_F(Cli, VerifyTheorems) {
  EXPECT_EQ(run("--seed 2 verify-theorems --joints 100 --scenarios 5 --n-mc 5000"), 0);
  EXPECT_NE(slurp(kTmp / "stdout.txt").find("PASS"), std::string::npos);
  // An impossible requirement reports a verification failure.
  EXPECT_EQ(run("--seed 2 verify-theorems --joints 10 --scenarios 2 --n-mc 2000 --min-agree 3"), 5);
}

TEST_F(Cli, BiasStudyAndReport) {
  write(kTmp / "bias.json", R"({
    "n_replicates": 2, "training_sizes": [50], "dgp": {"n_nuisance": 1},
    "models": ["oracle"], "features": ["X1", "X5"], "n_pop": 10000, "true_gvim_repetitions": 1
  })");
  const auto dir = out("bias");
  ASSERT_EQ(run("--seed 3 --out-dir " + dir + " bias-study --config " + out("bias.json")), 0);
  for (const char* f : {"bias_table.csv", "bias_table.txt", "replicates.csv", "config.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(dir) / f)) << f;
  }
  EXPECT_EQ(run("--out-dir " + dir + " report --format csv"), 0);
  EXPECT_EQ(slurp(kTmp / "stdout.txt"), slurp(fs::path(dir) / "bias_table.csv"));
  // A second run reuses every cached replicate.
  ASSERT_EQ(run("--seed 3 --out-dir " + dir + " bias-study --config " + out("bias.json")), 0);
  EXPECT_NE(slurp(kTmp / "stderr.txt").find("(2 reused"), std::string::npos) << slurp(kTmp / "stderr.txt");
  // Tampering with the table is detected.
  auto table = slurp(fs::path(dir) / "bias_table.csv");
  table.replace(table.find("\nX1,50,oracle,"), 1, "\nX5");
  write(fs::path(dir) / "bias_table.csv", table);
  EXPECT_EQ(run("--out-dir " + dir + " report"), 5);
}

TEST_F(Cli, FullsetStudy) {
  write(kTmp / "full.json", R"({"study": "fullset", "n_replicates": 2, "nuisance_counts": [1, 5]})");
  const auto dir = out("full");
  ASSERT_EQ(run("--out-dir " + dir + " fullset-study --config " + out("full.json")), 0);
  EXPECT_TRUE(fs::exists(fs::path(dir) / "fullset_table.csv"));
  EXPECT_NE(slurp(fs::path(dir) / "fullset_table.txt").find("quadratic"), std::string::npos);
}
