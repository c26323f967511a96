#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;
using rpdetect::cli::run;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rpdetect");
  std::ostringstream out, err;
  Result r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Numeric key=value lines of a report.
std::map<std::string, double> parse_report(const std::string& text) {
  std::map<std::string, double> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    char* end = nullptr;
    const std::string value = line.substr(eq + 1);
    const double v = std::strtod(value.c_str(), &end);
    if (end != value.c_str() && *end == '\0') kv[line.substr(0, eq)] = v;
  }
  return kv;
}

void expect_single_error_line(const Result& r, const std::string& category) {
  EXPECT_EQ(r.err.rfind("error[" + category + "]: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

void expect_manifest_hashes(const fs::path& manifest, const std::string& command) {
  const auto j = nlohmann::json::parse(slurp(manifest));
  EXPECT_EQ(j.at("command"), command);
  EXPECT_TRUE(j.contains("seed"));
  EXPECT_TRUE(j.contains("started_at"));
  EXPECT_FALSE(j.at("outputs").empty());
  for (const char* list : {"inputs", "outputs"}) {
    for (const auto& f : j.at(list)) {
      EXPECT_EQ(f.at("sha1"), rpdetect::cli::git_blob_sha1_file(f.at("path").get<std::string>()))
          << f.at("path");
    }
  }
}

}  // namespace

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("rpdetect_cli_" + std::to_string(::getpid()));
    fs::create_directories(root_);
    ASSERT_EQ(cli({"gen", "--seed", "1", "--n", "6", "--size", "64", "--out", path("data")}).code, 0);
    std::ofstream(root_ / "model.cfg") << "input_size=64\nbatch_size=3\n";
    const Result t = cli({"train", "--data", path("data"), "--config", path("model.cfg"), "--ablation",
                          "+dbb+head+bifpn", "--epochs", "2", "--seed", "4", "--out", path("run")});
    ASSERT_EQ(t.code, 0) << t.err;
    train_out_ = t.out;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static std::string path(const std::string& name) { return (root_ / name).string(); }

  static fs::path root_;
  static std::string train_out_;
};

fs::path Cli::root_;
std::string Cli::train_out_;

TEST(CliHash, GitBlobIds) {
  EXPECT_EQ(rpdetect::cli::git_blob_sha1({}), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  const std::string hello = "hello\n";
  EXPECT_EQ(rpdetect::cli::git_blob_sha1({hello.begin(), hello.end()}), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(CliUsage, BadInvocationsExitWithUsage) {
  Result r = cli({});
  EXPECT_EQ(r.code, rpdetect::cli::kUsage);
  r = cli({"frobnicate"});
  EXPECT_EQ(r.code, rpdetect::cli::kUsage);
  expect_single_error_line(r, "usage");
  r = cli({"train", "--data", "x", "--out", "y", "--ablation", "+bifpn"});
  EXPECT_EQ(r.code, rpdetect::cli::kUsage);
  expect_single_error_line(r, "usage");
  EXPECT_EQ(cli({"gen", "--n", "-3", "--out", "z"}).code, rpdetect::cli::kUsage);
  r = cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("reparam"), std::string::npos);
}

TEST_F(Cli, TrainWritesArtifacts) {
  EXPECT_NE(train_out_.find("train: +dbb+head+bifpn"), std::string::npos) << train_out_;
  EXPECT_NE(train_out_.find("epoch 2 loss "), std::string::npos) << train_out_;
  for (const char* f : {"weights.rpdt", "epochs.csv", "config.txt", "manifest.json"})
    EXPECT_TRUE(fs::exists(root_ / "run" / f)) << f;
  EXPECT_EQ(slurp(root_ / "run" / "epochs.csv").rfind("epoch,loss,map50,map50_95\n1,", 0), 0u);
  const std::string cfg = slurp(root_ / "run" / "config.txt");
  EXPECT_NE(cfg.find("epochs=2\n"), std::string::npos);
  EXPECT_NE(cfg.find("seed=4\n"), std::string::npos);
  expect_manifest_hashes(root_ / "run" / "manifest.json", "train");
}

TEST_F(Cli, GenIsDeterministic) {
  ASSERT_EQ(cli({"gen", "--seed", "1", "--n", "6", "--size", "64", "--out", path("again")}).code, 0);
  EXPECT_EQ(slurp(root_ / "again" / "annotations.json"), slurp(root_ / "data" / "annotations.json"));
  EXPECT_EQ(slurp(root_ / "again" / "images" / "000003.ppm"), slurp(root_ / "data" / "images" / "000003.ppm"));
  expect_manifest_hashes(root_ / "again" / "manifest.json", "gen");
  const Result empty = cli({"gen", "--n", "0", "--out", path("empty")});
  EXPECT_EQ(empty.code, 0) << empty.err;
  const auto j = nlohmann::json::parse(slurp(root_ / "empty" / "annotations.json"));
  EXPECT_TRUE(j.at("images").empty());
}

TEST_F(Cli, ReparamKeepsMetricsAndShrinksModel) {
  const Result r = cli({"reparam", "--weights-in", path("run/weights.rpdt"), "--weights-out", path("deploy.rpdt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("equivalence max|Δ| "), std::string::npos) << r.out;
  EXPECT_LT(fs::file_size(path("deploy.rpdt")), fs::file_size(path("run/weights.rpdt")));
  expect_manifest_hashes(path("deploy.rpdt.manifest.json"), "reparam");

  const Result a = cli({"eval", "--weights", path("run/weights.rpdt"), "--data", path("data")});
  const Result b = cli({"eval", "--weights", path("deploy.rpdt"), "--data", path("data")});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const auto ka = parse_report(a.out), kb = parse_report(b.out);
  EXPECT_NEAR(ka.at("map50"), kb.at("map50"), 1e-3);
  EXPECT_NEAR(ka.at("map50_95"), kb.at("map50_95"), 1e-3);
  EXPECT_LT(kb.at("params"), ka.at("params"));
  EXPECT_LT(kb.at("gflops"), ka.at("gflops"));

  const Result again = cli({"reparam", "--weights-in", path("deploy.rpdt"), "--weights-out", path("deploy2.rpdt")});
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.err.find("warning:"), std::string::npos);
  EXPECT_EQ(slurp(path("deploy2.rpdt")), slurp(path("deploy.rpdt")));
}

TEST_F(Cli, EvalOracleAndCurves) {
  const Result r = cli({"eval", "--oracle", "--data", path("data"), "--curve-out", path("pr.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = parse_report(r.out);
  EXPECT_EQ(kv.at("precision"), 1.0);
  EXPECT_EQ(kv.at("recall"), 1.0);
  EXPECT_EQ(kv.at("map50"), 1.0);
  EXPECT_EQ(kv.at("map50_95"), 1.0);
  EXPECT_EQ(slurp(path("pr.csv")).rfind("class,iou_threshold,recall,precision\n", 0), 0u);
  expect_manifest_hashes(path("pr.csv.manifest.json"), "eval");
  EXPECT_EQ(cli({"eval", "--data", path("data")}).code, rpdetect::cli::kConfig);
  EXPECT_EQ(cli({"eval", "--oracle", "--iou", "1.5", "--data", path("data")}).code, rpdetect::cli::kConfig);
}

TEST_F(Cli, BrokenInputsMapToCategories) {
  Result r = cli({"eval", "--weights", path("missing.rpdt"), "--data", path("data")});
  EXPECT_EQ(r.code, rpdetect::cli::kIo);
  expect_single_error_line(r, "io");
  const std::string bytes = slurp(path("run/weights.rpdt"));
  std::ofstream(path("cut.rpdt"), std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  r = cli({"eval", "--weights", path("cut.rpdt"), "--data", path("data")});
  EXPECT_EQ(r.code, rpdetect::cli::kFormat);
  expect_single_error_line(r, "format");
  r = cli({"train", "--data", path("nowhere"), "--out", path("x")});
  EXPECT_EQ(r.code, rpdetect::cli::kIo);
  // Images are 64 px but the default model input is 256.
  r = cli({"train", "--data", path("data"), "--epochs", "1", "--out", path("x")});
  EXPECT_EQ(r.code, rpdetect::cli::kValidation);
  expect_single_error_line(r, "validation");
  std::ofstream(path("bad.cfg")) << "input_size=64\nlearning_rat=1\n";
  r = cli({"train", "--data", path("data"), "--config", path("bad.cfg"), "--out", path("x")});
  EXPECT_EQ(r.code, rpdetect::cli::kConfig);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, BenchReportsCostAndSpeed) {
  const Result r = cli({"bench", "--weights", path("run/weights.rpdt"), "--iters", "1", "--warmup", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = parse_report(r.out);
  EXPECT_EQ(kv.at("size"), 64);
  EXPECT_GT(kv.at("params"), 0);
  EXPECT_GT(kv.at("fps_median"), 0);
  EXPECT_LE(kv.at("fps_min"), kv.at("fps_median"));
  EXPECT_NE(r.out.find("form=train"), std::string::npos);
}

TEST_F(Cli, RenderIsDeterministicAndLeavesEmptyImagesAlone) {
  ASSERT_EQ(cli({"render", "--weights", path("run/weights.rpdt"), "--data", path("data"), "--out", path("r1"),
                 "--conf", "0.01"})
                .code,
            0);
  ASSERT_EQ(cli({"render", "--weights", path("run/weights.rpdt"), "--data", path("data"), "--out", path("r2"),
                 "--conf", "0.01"})
                .code,
            0);
  for (int i = 0; i < 6; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.ppm", i);
    EXPECT_EQ(slurp(root_ / "r1" / name), slurp(root_ / "r2" / name)) << name;
  }
  expect_manifest_hashes(root_ / "r1" / "manifest.json", "render");
  const Result none = cli({"render", "--weights", path("run/weights.rpdt"), "--data", path("data"), "--out",
                           path("r3"), "--conf", "1.0"});
  ASSERT_EQ(none.code, 0) << none.err;
  EXPECT_NE(none.out.find(" 0 boxes"), std::string::npos) << none.out;
  for (int i = 0; i < 6; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.ppm", i);
    EXPECT_EQ(slurp(root_ / "r3" / name), slurp(root_ / "data" / name)) << name;
  }
}

TEST(CliBinary, ExitCodesPropagateToTheShell) {
  auto status = [](const std::string& args) {
    const int s = std::system((std::string(RPDETECT_BIN) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("gen --n 1 --size 64 --out " + (fs::temp_directory_path() / "rpdetect_bin_gen").string()), 0);
  fs::remove_all(fs::temp_directory_path() / "rpdetect_bin_gen");
  EXPECT_EQ(status("train --ablation nope --data a --out b"), rpdetect::cli::kUsage);
  EXPECT_EQ(status("bench --weights /nonexistent.rpdt"), rpdetect::cli::kIo);
}
