#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"

#include "lyra/checkpoint.hpp"
#include "lyra/pipeline.hpp"

using namespace lyra;
namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int status = -1;
  std::string output;
};

CommandResult run(const std::string& args) {
  const std::string cmd = std::string(LYRA_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  CommandResult r;
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// One reduced end-to-end run shared by every test in the file.
class PipelineCli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lyra_pipeline_cli";
    fs::remove_all(root_);
    ASSERT_EQ(run("make-fixture " + root_.string()).status, 0);
    config_ = root_ / "config.json";
    auto j = nlohmann::json::parse(read_text(config_));
    j["runs"] = 2;
    j["seeds"] = {1, 2};
    j["vae"]["steps"] = 600;
    std::ofstream(config_) << j.dump(2);

    for (const char* stage : {"prep-audio", "train-spectro", "train-vae", "evaluate"}) {
      const auto r = run(std::string(stage) + " " + config_.string());
      ASSERT_EQ(r.status, 0) << stage << ": " << r.output;
      if (std::string(stage) == "evaluate") eval_output_ = r.output;
    }
  }

  static fs::path runs() { return root_ / "runs"; }

  static inline fs::path root_;
  static inline fs::path config_;
  static inline std::string eval_output_;
};

}  // namespace

TEST_F(PipelineCli, StagesWriteTheirOutputs) {
  EXPECT_TRUE(fs::exists(runs() / "spectrograms.ckpt"));
  EXPECT_TRUE(fs::exists(runs() / "spectro" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(runs() / "artist_embeddings.tsv"));
  for (int seed : {1, 2}) {
    const auto ckpt = runs() / "vae" / "audioNT" / ("seed-" + std::to_string(seed) + ".ckpt");
    EXPECT_TRUE(fs::exists(ckpt));
    EXPECT_EQ(load_checkpoint(ckpt).seed, static_cast<std::uint64_t>(seed));
  }
  for (const char* m : {"prep-audio", "train-spectro", "train-vae-audioNT", "evaluate-audioNT"}) {
    const auto path = runs() / "manifests" / (std::string(m) + ".json");
    ASSERT_TRUE(fs::exists(path)) << m;
    const auto j = nlohmann::json::parse(read_text(path));
    EXPECT_EQ(j["stage"], m);
    EXPECT_EQ(j["config_hash"].get<std::string>().size(), 40u);
    EXPECT_EQ(j["config_hash"], config_hash(load_run_config(config_)));
  }
}

TEST_F(PipelineCli, EvaluationReportsBothArtists) {
  const auto report = eval_report_from_json(
      nlohmann::json::parse(read_text(runs() / "eval" / "audioNT" / "report.json")));
  EXPECT_EQ(report.runs, 2u);
  EXPECT_EQ(report.seeds, (std::vector<std::uint64_t>{1, 2}));
  ASSERT_EQ(report.nll.rows, 2u);
  ASSERT_EQ(report.nll.cols, 2u);
  EXPECT_EQ(report.diag_argmin, 2.0);
  EXPECT_GE(report.style_accuracy, 0.5);

  std::istringstream tsv(read_text(runs() / "eval" / "audioNT" / "nll.tsv"));
  std::string line;
  int rows = 0;
  while (std::getline(tsv, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 2) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_NE(eval_output_.find("\"diag_argmin_count\""), std::string::npos);

  for (int seed : {1, 2}) {
    const auto dir = runs() / "eval" / "audioNT" / ("seed-" + std::to_string(seed));
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".txt";
    EXPECT_EQ(files, 2u);
  }
}

TEST_F(PipelineCli, GreedyGenerationIsRepeatable) {
  const auto ckpt = (runs() / "vae" / "audioNT" / "seed-1.ckpt").string();
  const auto artist = load_checkpoint(ckpt).artists[0].name;
  const std::string args = "generate " + ckpt + " --artist \"" + artist + "\" --n 4 --temperature 0 --seed 7";
  const auto a = run(args), b = run(args);
  ASSERT_EQ(a.status, 0) << a.output;
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(std::count(a.output.begin(), a.output.end(), '\n'), 4);

  const std::string sampled = "generate " + ckpt + " --artist \"" + artist + "\" --n 10 --seed 3";
  EXPECT_EQ(run(sampled).output, run(sampled).output);
}

TEST_F(PipelineCli, TrainableAudioWithoutEmbeddingsFails) {
  const auto dir = root_ / "no_embeddings";
  fs::create_directories(dir);
  auto j = nlohmann::json::parse(read_text(config_));
  j["corpus_dir"] = (root_ / "corpus").string();
  j["output_dir"] = (dir / "runs").string();
  j["vae"]["steps"] = 1;
  std::ofstream(dir / "config.json") << j.dump();
  const auto r = run("train-vae " + (dir / "config.json").string() + " --mode audioT");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("audio embeddings required"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "runs" / "vae" / "audioT"));
}

TEST_F(PipelineCli, BadArgumentsExitNonZero) {
  const auto ckpt = (runs() / "vae" / "audioNT" / "seed-1.ckpt").string();
  EXPECT_NE(run("generate " + ckpt + " --artist nobody").status, 0);
  EXPECT_NE(run("train-vae " + config_.string() + " --mode sideways").status, 0);
  EXPECT_NE(run("evaluate " + (root_ / "missing.json").string()).status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
  EXPECT_EQ(run("--help").status, 0);
}
