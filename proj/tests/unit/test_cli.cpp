#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "roiedit/image_io.hpp"

namespace roiedit {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string err;
};

fs::path work_dir() { return fs::temp_directory_path() / "roiedit_cli_test"; }

Run run(const std::string& args, const std::string& env = "") {
  const fs::path err_file = work_dir() / "stderr.txt";
  const std::string cmd = env + " " + ROIEDIT_CLI_PATH + " " + args + " >/dev/null 2>" + err_file.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_file);
  r.err.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(work_dir());
    fs::create_directories(work_dir());
    const auto d = work_dir().string();
    ASSERT_EQ(run("make-synthetic --out " + d + "/data --count 8 --size 32 --seed 3").code, 0);
    ASSERT_EQ(run("train-smn --dataset " + d + "/data --out " + d + "/ck/smn --steps 2 --batch-size 2 "
                  "--image-size 32 --base-channels 8 --log-every 0 --log " + d + "/smn.jsonl")
                  .code,
              0);
    ASSERT_EQ(run("train-smpn --dataset " + d + "/data --init-checkpoint " + d + "/ck/smn --out " + d +
                  "/ck/smpn --steps 1 --batch-size 2 --log-every 0")
                  .code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(work_dir()); }

  std::string d = work_dir().string();
  std::string image = d + "/data/images/00000.png";
};

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  const auto unknown = run("frobnicate");
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run("edit --checkpoint " + d + "/ck --image " + image + " --roi nose --out x.png --bogus").code, 2);
  EXPECT_EQ(run("edit --checkpoint " + d + "/ck --image " + image + " --roi beard --out " + d + "/x.png").code, 2);
}

TEST_F(Cli, SmpnWithoutInitCheckpoint) {
  const auto r = run("train-smpn --dataset " + d + "/data --out " + d + "/never");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("SMPN requires SMN weights"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d + "/never"));
}

TEST_F(Cli, TrainingLogHasOneLinePerStep) {
  std::ifstream in(d + "/smn.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    EXPECT_NE(line.find("\"l_rec\""), std::string::npos);
    ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST_F(Cli, EditIsBitwiseReproducible) {
  const std::string args = "edit --checkpoint " + d + "/ck --image " + image + " --roi nose --mu 0 --seed 1 --out ";
  ASSERT_EQ(run(args + d + "/e1.png").code, 0);
  ASSERT_EQ(run(args + d + "/e2.png").code, 0);
  EXPECT_EQ(read_file(d + "/e1.png"), read_file(d + "/e2.png"));
  // default checkpoint root from the environment
  ASSERT_EQ(run("edit --image " + image + " --roi nose --mu 0 --seed 1 --out " + d + "/e3.png",
                "ROIEDIT_CHECKPOINT_DIR=" + d + "/ck")
                .code,
            0);
  EXPECT_EQ(read_file(d + "/e1.png"), read_file(d + "/e3.png"));
}

TEST_F(Cli, SegmentWritesBinaryMask) {
  ASSERT_EQ(run("segment --checkpoint " + d + "/ck --image " + image + " --roi hair --out " + d + "/m.png").code, 0);
  const auto r = read_png(d + "/m.png", 1);
  EXPECT_EQ(r.width, 32);
  for (auto p : r.pixels) ASSERT_TRUE(p == 0 || p == 255);
}

TEST_F(Cli, SwapStructureEditAndEval) {
  const std::string ck = " --checkpoint " + d + "/ck";
  EXPECT_EQ(run("swap" + ck + " --image " + image + " --style-image " + d + "/data/images/00001.png --roi skin --out " +
                d + "/s.png --mask-out " + d + "/sm.png")
                .code,
            0);
  EXPECT_TRUE(fs::exists(d + "/sm.png"));
  EXPECT_EQ(run("structure-edit" + ck + " --image " + image + " --roi eyes --mu 2 --seed 4 --out " + d + "/t.png").code,
            0);
  ASSERT_EQ(run("eval" + ck + " --dataset " + d + "/data --out " + d + "/report.json --trials 2 --edits 5").code, 0);
  std::ifstream in(d + "/report.json");
  std::string text(std::istreambuf_iterator<char>(in), {});
  EXPECT_NE(text.find("mean_iou"), std::string::npos);
}

TEST_F(Cli, RuntimeErrorsAreOneLine) {
  write_png(d + "/small.png", Raster8{16, 16, 3, std::vector<std::uint8_t>(16 * 16 * 3, 0)});
  const auto r = run("edit --checkpoint " + d + "/ck --image " + d + "/small.png --roi nose --out " + d + "/x.png");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  EXPECT_NE(r.err.find("model expects 32x32"), std::string::npos);
  const auto missing = run("segment --checkpoint " + d + "/nowhere --image " + image + " --roi nose --out " + d + "/x.png");
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(run("edit --image " + image + " --roi nose --out " + d + "/x.png", "ROIEDIT_CHECKPOINT_DIR=").code, 2);
}

}  // namespace
}  // namespace roiedit
