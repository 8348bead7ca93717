#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "autotraces/dataset.hpp"
#include "autotraces/eval.hpp"
#include "autotraces/model.hpp"
#include "autotraces/train.hpp"

namespace autotraces {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(AUTOTRACES_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  CliRun r;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("autotraces_cli_test_" + std::to_string(getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

const std::string kTinyModel = "--width 16 --layers 1 --heads 2 --lora-rank 2";

// dataset -> cot -> train -> generate, shared by the tests below.
const fs::path& pipeline_dir() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "pipeline";
    const std::string out = d.string();
    if (run_cli("dataset --family indoor --episodes 2 --seed 5 --out " + out).code != 0) return fs::path{};
    if (run_cli("cot --in " + (d / "indoor.jsonl").string() + " --out " + out).code != 0) return fs::path{};
    const std::string train = "train --stage 2 --from-scratch --epochs 1 --batch-size 8 --lr 1e-3 " + kTinyModel +
                              " --data " + (d / "indoor_cot.jsonl").string() + " --out " + out;
    if (run_cli(train).code != 0) return fs::path{};
    return d;
  }();
  return dir;
}

TEST(Cli, UsageErrorsExitNonZero) {
  EXPECT_NE(run_cli("").code, 0);
  EXPECT_NE(run_cli("no-such-command").code, 0);
  EXPECT_NE(run_cli("dataset --bogus").code, 0);
  const CliRun cot = run_cli("cot");
  EXPECT_EQ(cot.code, 1);
  EXPECT_NE(cot.output.find("needs --in"), std::string::npos) << cot.output;
  EXPECT_EQ(run_cli("train").code, 1);
  EXPECT_EQ(run_cli("generate --data x.jsonl").code, 1);
  EXPECT_EQ(run_cli("cot --in /nonexistent.jsonl --out " + work_dir().string()).code, 1);
  EXPECT_EQ(run_cli("dataset --family lunar --episodes 1 --out " + work_dir().string()).code, 1);
  EXPECT_EQ(run_cli("eval --checkpoint /nonexistent.ckpt --benchmark a=/nonexistent.jsonl").code, 1);
  EXPECT_EQ(run_cli("eval --benchmark broken").code, 1);
}

TEST(Cli, HelpListsSubcommands) {
  const CliRun r = run_cli("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"dataset", "cot", "train", "generate", "eval", "ablate", "params-count"}) {
    EXPECT_NE(r.output.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, ParamsCountMatchesLibrary) {
  ModelConfig c;
  c.vocab_size = kMaxVocab;
  const CliRun r = run_cli("params-count");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(std::stoull(r.output), parameter_count(init_params(c)));

  ModelConfig small;
  small.width = 16;
  small.n_layers = 1;
  small.n_heads = 2;
  small.lora_rank = 2;
  small.vocab_size = 50;
  const CliRun s = run_cli("params-count " + kTinyModel + " --vocab-size 50");
  ASSERT_EQ(s.code, 0) << s.output;
  EXPECT_EQ(std::stoull(s.output), parameter_count(init_params(small)));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const fs::path cfg = work_dir() / "dataset.json";
  std::ofstream(cfg) << R"({"family": "outdoor", "episodes": 3, "seed": 9, "name": "from_config.jsonl"})";
  const fs::path out = work_dir() / "cfg";
  const CliRun r = run_cli("dataset --config " + cfg.string() + " --episodes 1 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto samples = read_dataset(out / "from_config.jsonl");
  ASSERT_FALSE(samples.empty());
  // One outdoor episode: every sample shares its scene.
  for (const auto& s : samples) {
    EXPECT_EQ(s.scene_id, samples.front().scene_id);
    EXPECT_EQ(s.scene_id.rfind("outdoor", 0), 0u) << s.scene_id;
  }
  EXPECT_EQ(run_cli("dataset --config /nonexistent.json").code, 1);
}

TEST(Cli, DatasetIsDeterministic) {
  const fs::path a = work_dir() / "det_a", b = work_dir() / "det_b";
  ASSERT_EQ(run_cli("dataset --episodes 2 --seed 3 --out " + a.string()).code, 0);
  ASSERT_EQ(run_cli("dataset --episodes 2 --seed 3 --out " + b.string()).code, 0);
  std::ifstream fa(a / "indoor.jsonl"), fb(b / "indoor.jsonl");
  const std::string sa{std::istreambuf_iterator<char>(fa), {}}, sb{std::istreambuf_iterator<char>(fb), {}};
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, sb);
}

TEST(Cli, PipelineProducesArtifacts) {
  const fs::path& d = pipeline_dir();
  ASSERT_FALSE(d.empty()) << "pipeline setup failed";
  const auto raw = read_dataset(d / "indoor.jsonl");
  const auto annotated = read_dataset(d / "indoor_cot.jsonl");
  ASSERT_EQ(raw.size(), annotated.size());
  for (const auto& s : annotated) EXPECT_TRUE(s.cot_text.has_value());

  const fs::path ckpt = d / "stage2_forecast.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  const Checkpoint ck = load_checkpoint(ckpt);
  EXPECT_EQ(ck.stage, 2);
  EXPECT_EQ(ck.params.config.width, 16);
  const fs::path log = d / "stage2_forecast_loss.csv";
  ASSERT_TRUE(fs::exists(log));
  EXPECT_GT(count_lines(log), 1u);
}

TEST(Cli, GenerateWritesOneLinePerSample) {
  const fs::path& d = pipeline_dir();
  ASSERT_FALSE(d.empty());
  const CliRun r = run_cli("generate --checkpoint " + (d / "stage2_forecast.ckpt").string() + " --data " +
                        (d / "indoor_cot.jsonl").string() + " --horizon 5 --max-tokens 12 --out " + d.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const fs::path out = d / "generations.jsonl";
  const auto samples = read_dataset(d / "indoor_cot.jsonl");
  ASSERT_EQ(count_lines(out), samples.size());
  std::ifstream in(out);
  std::string line;
  std::getline(in, line);
  const json j = json::parse(line);
  EXPECT_EQ(j.at("sample_id"), samples.front().sample_id);
  EXPECT_EQ(j.at("requested_T"), 5);
  EXPECT_LE(j.at("emitted_tokens").get<int>(), 12);
  EXPECT_TRUE(j.at("waypoints").is_array());

  EXPECT_EQ(run_cli("generate --checkpoint " + (d / "stage2_forecast.ckpt").string() + " --data " +
                    (d / "indoor_cot.jsonl").string() + " --mode sideways --out " + d.string())
                .code,
            1);
}

TEST(Cli, EvalWritesReport) {
  const fs::path& d = pipeline_dir();
  ASSERT_FALSE(d.empty());
  const fs::path out = d / "eval";
  const CliRun r = run_cli("eval --checkpoint " + (d / "stage2_forecast.ckpt").string() + " --benchmark indoor=" +
                        (d / "indoor_cot.jsonl").string() + " --horizons 5 --max-samples 6 --trunc-from 0 --out " +
                        out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(out / "eval_report.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, kReportHeader);
  EXPECT_EQ(count_lines(out / "eval_report.csv"), 3u);  // header, model, constant velocity
  EXPECT_TRUE(fs::exists(out / "eval_report.txt"));
}

TEST(Cli, StageTwoWithoutInitNeedsExplicitOptIn) {
  const fs::path& d = pipeline_dir();
  ASSERT_FALSE(d.empty());
  const CliRun r = run_cli("train --stage 2 --epochs 1 " + kTinyModel + " --data " + (d / "indoor_cot.jsonl").string() +
                        " --out " + (work_dir() / "refused").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
}

}  // namespace
}  // namespace autotraces
