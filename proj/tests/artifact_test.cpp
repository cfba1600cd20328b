#include <gtest/gtest.h>

#include <bit>
#include <filesystem>

#include "mmae/artifact.hpp"

using namespace mmae;
namespace fs = std::filesystem;

namespace {

struct Trained {
  MultiModalDataset ds;
  PreparedData data;
  ModelArtifact artifact;
};

Trained train_artifact(FusionStrategy strategy, EnhancementKind enhancement, std::size_t modalities = 3) {
  Trained t;
  GeneratorSpec g;
  g.n_samples = 400;
  g.contamination = 0.1;
  g.seed = 8;
  g.modalities.resize(modalities);
  t.ds = generate_synthetic(g);
  PipelineOptions opt;
  opt.seed = 4;
  t.data = prepare_data(t.ds, opt);
  ModelConfig cfg;
  cfg.train.epochs = 5;
  cfg.enhancement = enhancement;
  MemberSpec spec{"adam", OptimizerKind::adam, {}};
  spec.fusion.strategy = strategy;
  auto specs = std::vector{spec, MemberSpec{"rmsprop", OptimizerKind::rmsprop, spec.fusion}};
  t.artifact.kind = "ensemble";
  t.artifact.master_seed = opt.seed;
  t.artifact.preprocessor = t.data.preprocessor;
  t.artifact.ensemble = ensemble_train(t.data.train, t.data.val, specs, t.ds.label_names, cfg, opt.seed);
  t.artifact.config = {{"command", "test"}, {"epochs", 5}};
  return t;
}

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace

TEST(Artifact, SaveLoadSaveIsByteIdentical) {
  for (auto strategy : {FusionStrategy::latent_fusion, FusionStrategy::early}) {
    for (auto enh : {EnhancementKind::residual, EnhancementKind::conv1d}) {
      auto t = train_artifact(strategy, enh);
      const auto text = serialize_artifact(t.artifact);
      const auto again = serialize_artifact(parse_artifact(text));
      EXPECT_EQ(text, again) << to_string(strategy);
    }
  }
  auto cca = train_artifact(FusionStrategy::intermediate_cca, EnhancementKind::residual, 2);
  const auto text = serialize_artifact(cca.artifact);
  EXPECT_EQ(serialize_artifact(parse_artifact(text)), text);
}

TEST(Artifact, WeightsRoundTripBitExactly) {
  auto t = train_artifact(FusionStrategy::latent_fusion, EnhancementKind::residual);
  auto back = parse_artifact(serialize_artifact(t.artifact));
  auto& a = t.artifact.ensemble.members[0];
  auto& b = back.ensemble.members[0];
  auto pa = a.fusion.mm.parameters(), pb = b.fusion.mm.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].size(), pb[i].size());
    for (std::size_t k = 0; k < pa[i].size(); ++k) EXPECT_EQ(bits(pa[i][k]), bits(pb[i][k]));
  }
  auto ca = a.classifier.parameters(), cb = b.classifier.parameters();
  for (std::size_t i = 0; i < ca.size(); ++i)
    for (std::size_t k = 0; k < ca[i].size(); ++k) EXPECT_EQ(bits(ca[i][k]), bits(cb[i][k]));
  EXPECT_EQ(bits(a.detector.threshold), bits(b.detector.threshold));
  EXPECT_EQ(a.detector.bands, b.detector.bands);
  EXPECT_EQ(a.weight, b.weight);
  EXPECT_EQ(back.config, t.artifact.config);
}

TEST(Artifact, ReloadedModelPredictsIdentically) {
  auto t = train_artifact(FusionStrategy::latent_fusion, EnhancementKind::residual);
  auto dir = fs::temp_directory_path() / "mmae_artifact_test";
  fs::remove_all(dir);
  save_artifact(t.artifact, dir / "m.mmae.json");
  auto back = load_artifact(dir / "m.mmae.json");
  auto views = back.preprocessor.transform(t.ds);
  auto a = ensemble_predict(t.artifact.ensemble, t.artifact.preprocessor.transform(t.ds));
  auto b = ensemble_predict(back.ensemble, views);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(a.probabilities == b.probabilities);
  for (auto method : {DetectMethod::reconstruction, DetectMethod::density}) {
    auto ra = t.artifact.ensemble.primary().detect(views, method);
    auto rb = back.ensemble.primary().detect(views, method);
    for (std::size_t i = 0; i < ra.size(); ++i) {
      EXPECT_EQ(bits(ra[i].score), bits(rb[i].score));
      EXPECT_EQ(ra[i].severity, rb[i].severity);
    }
  }
}

TEST(Artifact, TruncatedOrCorruptIsSchemaError) {
  auto t = train_artifact(FusionStrategy::latent_fusion, EnhancementKind::residual);
  const auto text = serialize_artifact(t.artifact);
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, text.size() / 2, text.size() - 3})
    EXPECT_THROW(parse_artifact(text.substr(0, cut)), SchemaError) << cut;

  auto j = nlohmann::ordered_json::parse(text);
  auto bump = j;
  bump["format_version"] = 2;
  EXPECT_THROW(parse_artifact(bump.dump()), SchemaError);

  auto shape = j;
  shape["members"][0]["classifier"]["weights"]["shape"][0] = 7;
  EXPECT_THROW(parse_artifact(shape.dump()), SchemaError);

  auto chain = j;
  auto& data = chain["members"][0]["fusion"]["fusion"]["weights"];
  data["shape"] = {1, data["data"].size()};
  EXPECT_THROW(parse_artifact(chain.dump()), SchemaError);

  auto weights = j;
  weights["members"][0]["weight"] = 0.9;
  EXPECT_THROW(parse_artifact(weights.dump()), SchemaError);

  auto mask = j;
  mask["preprocessing"]["modalities"][0]["mask"]["kept"].push_back(1);
  EXPECT_THROW(parse_artifact(mask.dump()), SchemaError);

  EXPECT_THROW(load_artifact("/nonexistent/dir/x.mmae.json"), IoError);
}

TEST(Tables, CurvesAndAnomalyReport) {
  History h{{1, 2.5, 3.0}, {2, 1.25, std::nullopt}};
  auto c = format_csv(curves_table(h));
  EXPECT_EQ(c, "epoch,train_loss,val_loss\n1,2.5,3\n2,1.25,\n");
  std::vector<AnomalyRecord> recs{{0, 0.5, false, Severity::none, -1}, {1, 9.0, true, Severity::high, 1}};
  auto a = format_csv(anomaly_table(recs, {"net", "res"}));
  EXPECT_EQ(a, "index,score,is_anomaly,severity,dominant_modality\n0,0.5,0,none,\n1,9,1,high,res\n");
  auto j = metrics_json({1, 1, 1, 1, 1});
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"accuracy", "precision", "recall", "f1", "auc_roc"}));
}
