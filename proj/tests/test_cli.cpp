#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pfdfl/config.hpp"
#include "pfdfl/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "pfdfl_test_cli";

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(const std::string& args, const std::string& env = "") {
  const fs::path out = kDir / "stdout.txt", err = kDir / "stderr.txt";
  const std::string cmd = env + " \"" PFDFL_CLI_PATH "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = pfdfl::read_file(out);
  r.err = pfdfl::read_file(err);
  return r;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
  static std::string path(const std::string& name) { return "\"" + (kDir / name).string() + "\""; }
};

const char* kTinyModel = " --layers 2 --d-model 8 --heads 2 --d-ff 16 --max-len 20 --epochs 2 --batch-size 4 --accum 2 --lr 1e-3";

}  // namespace

TEST_F(Cli, GenDataWritesTwoLinesPerPairDeterministically) {
  ASSERT_EQ(run("gen-data --out " + path("a.jsonl") + " --pairs 100 --seed 5").code, 0);
  ASSERT_EQ(run("gen-data --out " + path("b.jsonl") + " --pairs 100 --seed 5").code, 0);
  EXPECT_EQ(count_lines(kDir / "a.jsonl"), 200u);
  EXPECT_EQ(pfdfl::read_file(kDir / "a.jsonl"), pfdfl::read_file(kDir / "b.jsonl"));
  EXPECT_TRUE(fs::exists(kDir / "a.jsonl.vocab.tsv"));
}

TEST_F(Cli, NullControlWarns) {
  const Result r = run("gen-data --out " + path("null.jsonl") + " --pairs 10 --corrupt 0");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("null-signal control"), std::string::npos) << r.err;
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --out " + path("t")).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  ASSERT_EQ(run("gen-data --out " + path("d.jsonl") + " --pairs 10").code, 0);
  EXPECT_EQ(run("train --data " + path("d.jsonl") + " --out " + path("t") + " --variant mystery").code, 2);
  EXPECT_EQ(run("train --data " + path("d.jsonl") + " --out " + path("t") + " --alpha 0").code, 2);
  EXPECT_EQ(run("gen-data --out " + path("x.jsonl"), "PFDFL_THREADS=zero").code, 2);
}

TEST_F(Cli, MissingInputFilesExitOne) {
  EXPECT_EQ(run("train --data " + path("absent.jsonl") + " --out " + path("t")).code, 1);
  pfdfl::write_file_atomic(kDir / "broken.pfdl", "PFDLgarbage");
  ASSERT_EQ(run("gen-data --out " + path("e.jsonl") + " --pairs 10").code, 0);
  EXPECT_EQ(run("eval --checkpoint " + path("broken.pfdl") + " --data " + path("e.jsonl")).code, 1);
}

TEST_F(Cli, TrainEvalAndAnalyzeProduceArtifacts) {
  ASSERT_EQ(run("gen-data --out " + path("tr.jsonl") + " --pairs 20 --vocab 30 --knowledge-len 4 --response-len 3 "
                "--context-len 2 --corrupt 1")
                .code,
            0);
  const Result t = run("train --data " + path("tr.jsonl") + " --out " + path("run") + kTinyModel + " --alpha 0.2");
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"config.json", "run_record.json", "metrics.csv", "checkpoints/checkpoint_epoch000.pfdl",
                        "checkpoints/checkpoint_epoch002.pfdl"})
    EXPECT_TRUE(fs::exists(kDir / "run" / f)) << f;
  const pfdfl::RunConfig resolved = pfdfl::load_run_config(kDir / "run" / "config.json");
  EXPECT_EQ(resolved.train.alpha, 0.2);
  EXPECT_EQ(resolved.encoder.d_model, 8u);
  EXPECT_EQ(count_lines(kDir / "run" / "metrics.csv"), 3u);

  const Result e = run("eval --checkpoint " + path("run/checkpoints/checkpoint_epoch002.pfdl") + " --data " +
                       path("tr.jsonl") + " --out " + path("eval.json"));
  EXPECT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("accuracy="), std::string::npos);
  EXPECT_TRUE(fs::exists(kDir / "eval.json"));

  ASSERT_EQ(run("analyze weights --run " + path("run/run_record.json") + " --out " + path("w.csv")).code, 0);
  std::istringstream w(pfdfl::read_file(kDir / "w.csv"));
  std::string line;
  std::getline(w, line);
  EXPECT_EQ(line, "layer,weight");
  double total = 0.0;
  std::size_t rows = 0;
  while (std::getline(w, line)) {
    total += std::stod(line.substr(line.find(',') + 1));
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  EXPECT_NEAR(total, 1.0, 1e-5);

  const Result c = run("analyze consistency --run " + path("run/run_record.json") + " --out " + path("c.csv"));
  EXPECT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(count_lines(kDir / "c.csv"), 4u);
}

TEST_F(Cli, ComplexityAndGradcheck) {
  const Result c = run("analyze complexity --out " + path("cx.csv") + " --layers 2 --d-model 8 --heads 2 --d-ff 16 "
                       "--max-len 12 --vocab 40");
  EXPECT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(count_lines(kDir / "cx.csv"), 5u);
  const Result g = run("gradcheck --trials 3");
  EXPECT_EQ(g.code, 0) << g.out;
  EXPECT_EQ(g.out.find("FAIL"), std::string::npos);
}
