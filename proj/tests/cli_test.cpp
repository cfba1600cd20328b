#include <gtest/gtest.h>

#include <sys/wait.h>

#include <bit>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "mmae/cli.hpp"

using namespace mmae;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "mmae_cli_test";

// In-process invocation with stdout captured.
struct Run {
  int code;
  std::string out;
};

Run run(std::vector<std::string> args) {
  std::vector<const char*> argv{"mmae"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  auto* saved = std::cout.rdbuf(sink.rdbuf());
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(saved);
  return {code, sink.str()};
}

// Out-of-process invocation of the built binary; returns its exit status.
int run_binary(const std::string& args) {
  const std::string cmd = std::string(MMAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string path(const std::string& rel) { return (kRoot / rel).string(); }

void generate(const std::string& dir, const std::string& samples = "600", const std::string& contamination = "0.1") {
  ASSERT_EQ(run({"generate", "--out", path(dir), "--samples", samples, "--contamination", contamination, "--seed", "3"})
                .code,
            0);
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    log().set_level(spdlog::level::err);
    fs::remove_all(kRoot);
    generate("data");
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
};

std::vector<std::string> train_args(const std::string& out, std::vector<std::string> extra = {},
                                    const std::string& epochs = "10") {
  std::vector<std::string> a{"train", "--data", path("data/manifest.json"), "--out", path(out), "--epochs", epochs};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

}  // namespace

TEST_F(Cli, GenerateCountsAnomalies) {
  auto r = run({"generate", "--out", path("g100"), "--samples", "100", "--contamination", "0.1", "--seed", "7"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("anomalies 10\n"), std::string::npos) << r.out;
  auto ds = load_dataset(path("g100/manifest.json"));
  EXPECT_EQ(ds.size(), 100u);
  EXPECT_EQ(std::count_if(ds.labels.begin(), ds.labels.end(), [](int y) { return y != 0; }), 10);
}

TEST_F(Cli, ExitCodesFromBinary) {
  EXPECT_EQ(run_binary("--help"), 0);
  EXPECT_EQ(run_binary(""), 2);
  EXPECT_EQ(run_binary("train --bogus-flag"), 2);
  EXPECT_EQ(run_binary("generate --out " + path("neg") + " --samples -5"), 2);
  EXPECT_FALSE(fs::exists(path("neg")));
  EXPECT_EQ(run_binary("ensemble --data " + path("data/manifest.json") + " --out " + path("e1") + " --members adam"),
            2);
  EXPECT_EQ(run_binary("train --data " + path("missing/manifest.json") + " --out " + path("m")), 1);
  EXPECT_EQ(run_binary("train --data " + path("data/manifest.json") + " --out " + path("m") + " --split 70-30"), 2);
  EXPECT_EQ(run_binary("train --data " + path("data/manifest.json") + " --out " + path("div.mmae.json") +
                       " --optimizer sgd --lr 1e300 --epochs 2"),
            3);
  EXPECT_FALSE(fs::exists(path("div.mmae.json")));
}

TEST_F(Cli, EmptyDatasetIsUsageError) {
  fs::create_directories(path("empty"));
  DatasetManifest m;
  m.modalities = {{"a", "a.csv", ModalityKind::numeric}, {"b", "b.csv", ModalityKind::numeric}};
  write_text_atomic(path("empty/manifest.json"), manifest_to_json(m).dump(2));
  write_text_atomic(path("empty/a.csv"), "x,y\n");
  write_text_atomic(path("empty/b.csv"), "z\n");
  write_text_atomic(path("empty/labels.csv"), "label\n");
  ASSERT_EQ(run(train_args("ok.mmae.json")).code, 0);
  EXPECT_EQ(run({"detect", "--model", path("ok.mmae.json"), "--data", path("empty/manifest.json"), "--out",
                 path("empty/det.csv")})
                .code,
            2);
  EXPECT_EQ(run_binary("detect --model " + path("ok.mmae.json") + " --data " + path("empty/manifest.json") +
                       " --out " + path("empty/det.csv")),
            2);
}

TEST_F(Cli, CorruptArtifactIsUsageError) {
  write_text_atomic(path("bad.mmae.json"), "{\"format_version\": 1");
  EXPECT_EQ(run({"detect", "--model", path("bad.mmae.json"), "--data", path("data/manifest.json"), "--out",
                 path("bad.csv")})
                .code,
            2);
}

TEST_F(Cli, EveryCommandIsByteReproducible) {
  const std::vector<std::vector<std::string>> commands{
      {"generate", "--out", path("rep/data"), "--samples", "300", "--seed", "5", "--contamination", "0.1"},
      {"preprocess", "--data", path("rep/data/manifest.json"), "--out", path("rep/prep"), "--selection", "ga"},
      {"train", "--data", path("rep/data/manifest.json"), "--out", path("rep/m.mmae.json"), "--epochs", "5",
       "--enhancement", "conv1d"},
      {"detect", "--model", path("rep/m.mmae.json"), "--data", path("rep/data/manifest.json"), "--out",
       path("rep/det.csv"), "--method", "density"},
      {"evaluate", "--model", path("rep/m.mmae.json"), "--data", path("rep/data/manifest.json"), "--out",
       path("rep/ev.json"), "--subset", "test"},
      {"ensemble", "--data", path("rep/data/manifest.json"), "--out", path("rep/e.mmae.json"), "--epochs", "5",
       "--per-modality", "--combination", "majority_vote"},
  };
  auto snapshot = [&] {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(path("rep")))
      if (e.is_regular_file()) files[e.path().string()] = read_text(e.path());
    return files;
  };
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(path("rep"));
    for (const auto& c : commands) ASSERT_EQ(run(c).code, 0) << c[0];
    if (pass == 0) first = snapshot();
  }
  auto second = snapshot();
  EXPECT_EQ(first.size(), second.size());
  for (const auto& [name, bytes] : first) EXPECT_EQ(second[name], bytes) << name;
  EXPECT_EQ(first.count(path("rep/m.curves.csv")), 1u);
  EXPECT_EQ(first.count(path("rep/e.report.csv")), 1u);
  EXPECT_EQ(first.count(path("rep/ev.csv")), 1u);
}

TEST_F(Cli, ZeroLearningRateKeepsInitialisation) {
  ASSERT_EQ(run(train_args("lr0.mmae.json", {"--lr", "0"}, "3")).code, 0);
  auto a = load_artifact(path("lr0.mmae.json"));
  const auto& m = a.ensemble.members[0];
  EXPECT_EQ(m.seed, derive_seed(42, "member", 0));
  auto fresh = FusionModel::make(m.fusion.input_dims, FusionOptions{}, m.seed);
  auto pa = fresh.mm.parameters();
  auto trained = m.fusion;
  auto pb = trained.mm.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i].size(); ++k)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(pa[i][k]), std::bit_cast<std::uint64_t>(pb[i][k]));
  auto curves = read_csv(path("lr0.curves.csv"));
  ASSERT_EQ(curves.rows.size(), 3u);
  for (const auto& row : curves.rows) EXPECT_EQ(row[1], curves.rows[0][1]);
}

TEST_F(Cli, DetectFlagsAboutOnePercentOfNormalTrainingRows) {
  generate("clean", "2000", "0.02");
  ASSERT_EQ(run({"train", "--data", path("clean/manifest.json"), "--out", path("clean.mmae.json"), "--epochs", "20",
                 "--split", "80-20"})
                .code,
            0);
  ASSERT_EQ(run({"preprocess", "--data", path("clean/manifest.json"), "--out", path("clean_prep"), "--split",
                 "80-20"})
                .code,
            0);
  ASSERT_EQ(run({"detect", "--model", path("clean.mmae.json"), "--data", path("clean/manifest.json"), "--out",
                 path("clean_det.csv")})
                .code,
            0);
  auto det = read_csv(path("clean_det.csv"));
  auto split = read_csv(path("clean_prep/split.csv"));
  ASSERT_EQ(det.rows.size(), split.rows.size());
  auto labels = read_csv(path("clean_prep/labels.csv"));
  double train = 0, flagged = 0;
  for (std::size_t i = 0; i < det.rows.size(); ++i) {
    EXPECT_NE(split.rows[i][1], "val");
    if (split.rows[i][1] != "train" || labels.rows[i][0] != "0") continue;
    ++train;
    flagged += det.rows[i][2] == "1";
  }
  EXPECT_NEAR(flagged / train, 0.01, 0.005);
}

TEST_F(Cli, EnsembleReportAndEvaluateFields) {
  ASSERT_EQ(run({"ensemble", "--data", path("data/manifest.json"), "--out", path("ens.mmae.json"), "--epochs", "5",
                 "--members", "adam,rmsprop,sgd"})
                .code,
            0);
  auto report = parse_report_table(read_csv(path("ens.report.csv")));
  ASSERT_EQ(report.size(), 4u);
  EXPECT_EQ(report.back().model, "ensemble");
  EXPECT_EQ(report[0].model, "adam");

  for (const std::string task : {"classify", "detect"}) {
    ASSERT_EQ(run({"evaluate", "--model", path("ens.mmae.json"), "--data", path("data/manifest.json"), "--out",
                   path("ev_" + task + ".json"), "--task", task})
                  .code,
              0);
    auto j = nlohmann::ordered_json::parse(read_text(path("ev_" + task + ".json")));
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    EXPECT_EQ(keys, (std::vector<std::string>{"accuracy", "precision", "recall", "f1", "auc_roc"}));
  }
  auto table = read_csv(path("ev_classify.csv"));
  EXPECT_EQ(table.rows.size(), 4u);
}

TEST_F(Cli, ConfigFileSuppliesDefaultsAndFlagsWin) {
  write_text_atomic(path("cfg.ini"), "[train]\nepochs=2\noptimizer=rmsprop\n");
  ASSERT_EQ(run({"--config", path("cfg.ini"), "train", "--data", path("data/manifest.json"), "--out",
                 path("cfg.mmae.json")})
                .code,
            0);
  EXPECT_EQ(read_csv(path("cfg.curves.csv")).rows.size(), 2u);
  EXPECT_EQ(load_artifact(path("cfg.mmae.json")).ensemble.members[0].tag, "rmsprop");
  ASSERT_EQ(run({"--config", path("cfg.ini"), "train", "--data", path("data/manifest.json"), "--out",
                 path("cfg.mmae.json"), "--epochs", "4"})
                .code,
            0);
  EXPECT_EQ(read_csv(path("cfg.curves.csv")).rows.size(), 4u);
}

TEST_F(Cli, InvalidOptionsRejectedBeforeWork) {
  EXPECT_EQ(run(train_args("v.mmae.json", {"--optimizer", "lbfgs"})).code, 2);
  EXPECT_EQ(run(train_args("v.mmae.json", {"--fusion", "attention"})).code, 2);
  EXPECT_EQ(run(train_args("v.mmae.json", {}, "0")).code, 2);
  EXPECT_EQ(run(train_args("v.mmae.json", {"--threshold-percentile", "100"})).code, 2);
  EXPECT_EQ(run(train_args("v.mmae.json", {"--fusion", "intermediate_cca"})).code, 2);  // 3 modalities
  EXPECT_FALSE(fs::exists(path("v.mmae.json")));
  EXPECT_EQ(run({"evaluate", "--model", path("x"), "--data", path("y"), "--out", path("z"), "--subset", "holdout"})
                .code,
            2);
  EXPECT_EQ(run({"detect", "--model", path("x"), "--data", path("y"), "--out", path("z"), "--method", "svm"}).code, 2);
}

TEST_F(Cli, EvaluateRemapsLabelsToArtifactOrder) {
  ASSERT_EQ(run(train_args("lab.mmae.json")).code, 0);
  auto labels = read_csv(path("data/labels.csv"));
  EXPECT_EQ(run({"evaluate", "--model", path("lab.mmae.json"), "--data", path("data/manifest.json"), "--out",
                 path("lab.json"), "--subset", "val"})
                .code,
            0);
  // A label the model never saw is a validation error.
  fs::copy(path("data"), path("relabel"), fs::copy_options::recursive);
  labels.rows[0][0] = "99";
  write_csv(path("relabel/labels.csv"), labels);
  EXPECT_EQ(run({"evaluate", "--model", path("lab.mmae.json"), "--data", path("relabel/manifest.json"), "--out",
                 path("lab2.json")})
                .code,
            2);
}
