#include <gtest/gtest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "repdetect/repstore.hpp"
#include "test_util.hpp"

using namespace repdetect;
using repdetect::cli::cli_main;
using testutil::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json load(const std::filesystem::path& file) {
  const auto bytes = read_file_bytes(file);
  return nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const Result r = run({"synth", "--out", (*dir_ / "data").string(), "--seed", "3", "--train", "800", "--test",
                          "500", "--pairs", "150", "--layers", "2", "--lm-examples", "1000",
                          "--fgws-validation", "200", "--fgws-normals", "100", "--fgws-adversaries", "100"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::string data(const std::string& name) { return (*dir_ / "data" / name).string(); }
  static std::string out(const std::string& name) { return (*dir_ / name).string(); }

  static TempDir* dir_;
};

TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, ValidateReportsCounts) {
  const Result r = run({"validate", "--manifest", data("manifest.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("pairs"), 150);
  EXPECT_EQ(j.at("role_rows").at("train"), 800);
}

TEST_F(Cli, MdreRerunIsByteIdentical) {
  const std::vector<std::string> args{"mdre", "--manifest", data("manifest.json"), "--out", out("mdre"), "--ablation"};
  ASSERT_EQ(run(args).code, 0);
  const auto first = read_file_bytes(out("mdre") + "/mdre_eval.json");
  const auto ablation = read_file_bytes(out("mdre") + "/mdre_ablation.json");
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(read_file_bytes(out("mdre") + "/mdre_eval.json"), first);
  EXPECT_EQ(read_file_bytes(out("mdre") + "/mdre_ablation.json"), ablation);
  const auto report = load(out("mdre") + "/mdre_eval.json");
  EXPECT_EQ(report.at("detector"), "mdre");
  EXPECT_EQ(report.at("config").at("run").at("command"), "mdre");
  EXPECT_GE(report.at("accuracy").get<double>(), 0.9);
}

TEST_F(Cli, LidWithTuningAndEval) {
  const Result r = run({"lid", "--manifest", data("manifest.json"), "--out", out("lid"), "--k-grid", "10,12,20",
                        "--layer", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(out("lid") + "/lid_tune.json"));
  const Result e = run({"eval", "--model", out("lid") + "/lid_model.json", "--features",
                        out("lid") + "/lid_features.json"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(nlohmann::json::parse(e.out).at("detector"), "lid");
}

TEST_F(Cli, FgwsAndLmBaseline) {
  const Result f = run({"fgws", "--manifest", data("fgws/fgws_manifest.json"), "--out", out("fgws")});
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_EQ(load(out("fgws") + "/fgws_eval.json").at("tp"), 100);
  const Result l = run({"lm-baseline", "--manifest", data("lm_scores.json"), "--out", out("lm")});
  ASSERT_EQ(l.code, 0) << l.err;
  EXPECT_NEAR(load(out("lm") + "/lm_eval.json").at("accuracy").get<double>(), 0.5, 0.1);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"bogus"}).code, 2);
  EXPECT_EQ(run({"mdre", "--out", out("x")}).code, 2);
  EXPECT_EQ(run({"validate", "--manifest", out("missing.json")}).code, 2);
  EXPECT_EQ(run({"lid", "--manifest", data("manifest.json"), "--out", out("x"), "--k-grid", "10,abc"}).code, 2);
  EXPECT_EQ(run({"lid", "--manifest", data("manifest.json"), "--out", out("x"), "--models", "view0,view1"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, DataErrorsExitOne) {
  const Result r = run({"mdre", "--manifest", data("manifest.json"), "--out", out("x"), "--models", "nope"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope"), std::string::npos) << r.err;
  EXPECT_EQ(run({"fgws", "--manifest", data("fgws/fgws_manifest.json"), "--out", out("x"), "--delta", "15"}).code, 1);
  // A matrix that does not match its recorded checksum.
  TempDir bad("cli_bad");
  std::filesystem::copy(*dir_ / "data", bad.path(), std::filesystem::copy_options::recursive);
  write_matrix(MatrixF(800, 32), bad / "view0_L0_train.repm");
  const Result v = run({"validate", "--manifest", (bad / "manifest.json").string()});
  EXPECT_EQ(v.code, 1);
}
