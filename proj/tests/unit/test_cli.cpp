#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "vtt/manifest_io.hpp"
#include "vtt/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::string& args) {
  static int counter = 0;
  const auto err_path = fs::temp_directory_path() / ("vtt_cli_err_" + std::to_string(counter++));
  const std::string cmd = std::string(VTT_CLI_PATH) + " " + args + " 2>" + err_path.string();
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = pclose(pipe);
  std::ifstream e(err_path);
  std::string err((std::istreambuf_iterator<char>(e)), {});
  fs::remove(err_path);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out, err};
}

json first_line(const std::string& s) { return json::parse(s.substr(0, s.find('\n'))); }

json last_error(const std::string& err) {
  auto trimmed = err;
  while (!trimmed.empty() && trimmed.back() == '\n') trimmed.pop_back();
  return json::parse(trimmed.substr(trimmed.rfind('\n') + 1));
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("vtt_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Cli, BuildDatasetWritesManifestAndStats) {
  const auto dir = scratch("build");
  const auto out = dir / "m.jsonl";
  const auto r = run("build-dataset --annotations " VTT_TEST_DATA_DIR "/golden_annotations.jsonl --out " +
                     out.string() + " --ratios 0.6,0.2,0.2 --seed 3 --stats");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto echo = first_line(r.out);
  EXPECT_EQ(echo["command"], "build-dataset");
  EXPECT_EQ(echo["config"]["seed"], 3);
  EXPECT_NE(r.out.find("total"), std::string::npos);
  EXPECT_EQ(vtt::read_manifest(out.string()).samples.size(), 10u);
}

TEST(Cli, BuildDatasetRejectsInvalidAnnotation) {
  const auto dir = scratch("invalid");
  {
    std::ofstream a(dir / "a.jsonl");
    a << R"({"video_id":"ok","category":"c","topic":"t","segments":[[0,1,"x"]]})" << '\n'
      << R"({"video_id":"broken","category":"c","topic":"t","segments":[[5,1,"x"]]})" << '\n';
  }
  const auto r = run("build-dataset --annotations " + (dir / "a.jsonl").string() + " --out " +
                     (dir / "m.jsonl").string());
  EXPECT_EQ(r.code, 2);
  const auto err = last_error(r.err);
  EXPECT_TRUE(err.contains("error"));
  EXPECT_NE(err["message"].get<std::string>().find("broken"), std::string::npos) << err;
  EXPECT_FALSE(fs::exists(dir / "m.jsonl"));
}

TEST(Cli, ErrorsAreJsonWithNonzeroExit) {
  const auto dir = scratch("errors");
  auto r = run("synth --out " + dir.string() + " -n 0");
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(last_error(r.err)["error"], "config");

  r = run("train --manifest /nonexistent.jsonl --embeddings /nonexistent.bin --out " + dir.string());
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(last_error(r.err)["error"], "io");

  r = run("evaluate --predictions /nonexistent.jsonl --manifest /nonexistent.jsonl");
  EXPECT_NE(r.code, 0);

  r = run("train --manifest a --embeddings b --out c --preset huge");
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(last_error(r.err)["error"], "usage");

  r = run("train --manifest a --embeddings b --out c --preset desk --warmup 5000 --epochs 1");
  EXPECT_NE(r.code, 0);
}

TEST(Cli, SynthTrainGenerateEvaluateDiagnose) {
  const auto dir = scratch("pipeline");
  const auto data = dir / "data";
  auto r = run("synth --out " + data.string() + " -n 24 --seed 5 --ratios 0.75,0,0.25");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"manifest.jsonl", "embeddings.bin", "spec.json"}) EXPECT_TRUE(fs::exists(data / f)) << f;
  const std::string files =
      " --manifest " + (data / "manifest.jsonl").string() + " --embeddings " + (data / "embeddings.bin").string();

  r = run("train" + files + " --out " + (dir / "run").string() +
          " --preset desk --epochs 3 --warmup 2 --d-model 32 --heads 2 --seed 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto echo = first_line(r.out);
  EXPECT_EQ(echo["config"]["train"]["epochs"], 3);
  EXPECT_EQ(echo["config"]["model"]["d_model"], 32);
  for (const char* f : {"best.ckpt", "last.ckpt", "train_log.jsonl", "config.json"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  std::ifstream log(dir / "run" / "train_log.jsonl");
  std::string line;
  int epochs = 0;
  while (std::getline(log, line)) {
    EXPECT_EQ(json::parse(line)["epoch"], ++epochs);
  }
  EXPECT_EQ(epochs, 3);

  const auto preds = (dir / "preds.jsonl").string();
  r = run("generate --checkpoint " + (dir / "run" / "last.ckpt").string() + files + " --split test --greedy --out " +
          preds);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto p = vtt::metrics::read_predictions(preds);
  const auto manifest = vtt::read_manifest((data / "manifest.jsonl").string());
  EXPECT_EQ(p.size(), manifest.split(vtt::Split::kTest).size());

  // Greedy decoding is reproducible across invocations.
  const auto preds2 = (dir / "preds2.jsonl").string();
  r = run("generate --checkpoint " + (dir / "run" / "last.ckpt").string() + files + " --split test --greedy --out " +
          preds2);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(vtt::metrics::read_predictions(preds2), p);

  r = run("evaluate --predictions " + preds + " --manifest " + (data / "manifest.jsonl").string() +
          " --split test --out " + (dir / "report.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream rep(dir / "report.json");
  const auto report = json::parse(rep);
  for (const char* k : {"bleu4", "rougeL", "meteor", "cider"}) EXPECT_TRUE(report["corpus"].contains(k)) << k;

  r = run("diagnose --checkpoint " + (dir / "run" / "last.ckpt").string() + files +
          " --split test --greedy --setting adjacent_only --seen-unseen --out " + (dir / "diag.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("adjacent_only"), std::string::npos);
  std::ifstream dj(dir / "diag.json");
  const auto diag = json::parse(dj);
  EXPECT_EQ(diag["settings"].size(), 2u);
  EXPECT_TRUE(diag.contains("seen_unseen"));
}

TEST(Cli, SplitReassignsManifest) {
  const auto dir = scratch("split");
  ASSERT_EQ(run("synth --out " + dir.string() + " -n 20 --seed 2").code, 0);
  const auto r = run("split --manifest " + (dir / "manifest.jsonl").string() + " --out " +
                     (dir / "resplit.jsonl").string() + " --ratios 0.5,0.25,0.25 --seed 9");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = vtt::read_manifest((dir / "resplit.jsonl").string());
  EXPECT_EQ(m.samples.size(), 20u);
  EXPECT_GT(m.split(vtt::Split::kVal).size(), 0u);
  EXPECT_GT(m.split(vtt::Split::kTest).size(), 0u);
}

TEST(Cli, GridAppendsRowsAndResumes) {
  const auto dir = scratch("grid");
  ASSERT_EQ(run("synth --out " + dir.string() + " -n 16 --seed 4 --ratios 0.5,0,0.5").code, 0);
  const std::string args = "grid --grid fusion --manifest " + (dir / "manifest.jsonl").string() + " --embeddings " +
                           (dir / "embeddings.bin").string() + " --split test --out " +
                           (dir / "grid.jsonl").string() +
                           " --preset desk --epochs 1 --batch-size 4 --warmup 1 --d-model 16 --heads 2";
  auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  auto count_lines = [&] {
    std::ifstream in(dir / "grid.jsonl");
    return std::count(std::istreambuf_iterator<char>(in), {}, '\n');
  };
  EXPECT_EQ(count_lines(), 2);
  r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(), 2);
}
