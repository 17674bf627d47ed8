#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "common.hpp"
#include <json.hpp>

#ifndef PCQA_CLI_PATH
#error "PCQA_CLI_PATH must point at the pcqa executable"
#endif

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run(const std::string& args) {
  const std::string cmd = std::string(PCQA_CLI_PATH) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testutil::scratch_dir("cli");
    std::ofstream csv(dir_ / "m.csv");
    csv << "path,mos,reference\n";
    const pcqa::synthetic::Shape shapes[] = {pcqa::synthetic::Shape::sphere, pcqa::synthetic::Shape::torus};
    for (int r = 0; r < 2; ++r)
      for (int e = 0; e < 3; ++e) {
        const std::string file = "c" + std::to_string(r) + std::to_string(e) + ".ply";
        testutil::write_shape(dir_, file, shapes[r], 900, 10 * r + e, 0.01 * e);
        csv << file << "," << -e << ",ref" << r << "\n";
      }
    csv.close();
    trained_ = run("train --manifest " + path("m.csv") + " --out " + path("m.ckpt") +
                   " --partitions 8 --patch-size 64 --epochs 2 --seed 3");
  }

  static std::string path(const std::string& f) { return (dir_ / f).string(); }

  static inline std::filesystem::path dir_;
  static inline CliResult trained_;
};

}  // namespace

TEST_F(Cli, TrainWritesCheckpointsAndHistory) {
  ASSERT_EQ(trained_.code, 0) << trained_.out;
  EXPECT_TRUE(std::filesystem::exists(path("m.ckpt")));
  EXPECT_TRUE(std::filesystem::exists(path("m.ckpt.best")));
  std::ifstream hist(path("m.ckpt.loss.csv"));
  std::string header, row;
  std::getline(hist, header);
  EXPECT_EQ(header, "epoch,mean_loss");
  int rows = 0;
  while (std::getline(hist, row)) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST_F(Cli, PredictIsDeterministic) {
  const CliResult a = run("predict --ckpt " + path("m.ckpt") + " --input " + path("c01.ply") + " --json");
  const CliResult b = run("predict --ckpt " + path("m.ckpt") + " --input " + path("c01.ply") + " --json");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["partition_scores"].size(), 8u);
}

TEST_F(Cli, EvalModes) {
  const CliResult k = run("eval --ckpt " + path("m.ckpt") + " --manifest " + path("m.csv") + " --kfold --json");
  ASSERT_EQ(k.code, 0);
  const auto j = nlohmann::json::parse(k.out);
  EXPECT_EQ(j["mode"], "kfold");
  EXPECT_EQ(j["folds"].size(), 2u);
  const CliResult w = run("eval --ckpt " + path("m.ckpt") + " --manifest " + path("m.csv") + " --whole-set");
  EXPECT_EQ(w.code, 0);
  EXPECT_NE(w.out.find("mean"), std::string::npos);
  EXPECT_EQ(run("eval --ckpt " + path("m.ckpt") + " --manifest " + path("m.csv") + " --kfold --whole-set").code, 1);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("train --manifest " + path("m.csv") + " --out " + path("x.ckpt") + " --partitions 30").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("predict --ckpt " + path("missing.ckpt") + " --input " + path("c00.ply")).code, 2);
  std::ofstream(path("broken.ply")) << "ply\nformat ascii 1.0\nelement vertex 5\n";
  EXPECT_EQ(run("predict --ckpt " + path("m.ckpt") + " --input " + path("broken.ply")).code, 2);
  EXPECT_EQ(run("gradcheck --inject-fault nothing").code, 1);
}

TEST_F(Cli, GradcheckAndNegativeControl) {
  const CliResult ok = run("gradcheck");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  const CliResult bad = run("gradcheck --inject-fault edge_conv");
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("edge_conv          max_rel_error=9.9"), std::string::npos) << bad.out;
}

TEST_F(Cli, GraphDump) {
  const CliResult r = run("graph-dump --input " + path("c00.ply") + " --partitions 8 --patch-size 64 --patch 0");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("0: 0 ", 0), 0u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 64);
}
