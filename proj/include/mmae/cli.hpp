#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmae/artifact.hpp"
#include "mmae/dataio.hpp"
#include "mmae/ensemble.hpp"
#include "mmae/error.hpp"
#include "mmae/log.hpp"
#include "mmae/metrics.hpp"
#include "mmae/preprocess.hpp"

namespace mmae::cli {

enum ExitCode : int { kOk = 0, kIo = 1, kUsage = 2, kDivergence = 3 };

// ---------------------------------------------------------------------------
// Option sets; each validates fully before any data is touched.

struct SplitOption {
  std::string text = "80-10-10";

  SplitRatios ratios() const {
    if (text == "80-10-10") return {0.8, 0.1, 0.1};
    if (text == "80-20") return {0.8, 0.0, 0.2};
    throw ValidationError("--split must be 80-10-10 or 80-20, got '" + text + "'");
  }
};

struct PreprocessFlags {
  std::string impute = "mean";
  std::string selection = "none";
  double variance_threshold = kDefaultVarianceThreshold;
  double correlation_threshold = 0.9;
  SplitOption split;

  PreprocessOptions options() const {
    PreprocessOptions o;
    o.impute = parse_impute(impute);
    o.selection = parse_selection(selection);
    if (!(variance_threshold >= 0.0)) throw ValidationError("--variance-threshold must be >= 0");
    if (!(correlation_threshold > 0.0 && correlation_threshold <= 1.0)) {
      throw ValidationError("--correlation-threshold must lie in (0, 1]");
    }
    o.variance_threshold = variance_threshold;
    o.correlation_threshold = correlation_threshold;
    return o;
  }

  void add_to(CLI::App& app) {
    app.add_option("--impute", impute, "Imputation statistic: mean or median")->capture_default_str();
    app.add_option("--selection", selection, "Feature selection: none, variance, correlation, ga or harmony")
        ->capture_default_str();
    app.add_option("--variance-threshold", variance_threshold, "Variance filter cutoff")->capture_default_str();
    app.add_option("--correlation-threshold", correlation_threshold, "Pairwise |r| cutoff")->capture_default_str();
    app.add_option("--split", split.text, "Split ratios: 80-10-10 or 80-20 (no validation split)")
        ->capture_default_str();
  }
};

struct ModelFlags {
  std::size_t epochs = 100;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t latent = 2;
  std::size_t modality_latent = 2;
  std::string fusion = "latent_fusion";
  std::size_t cca_k = 2;
  std::string enhancement = "residual";
  std::size_t blocks = 1;
  bool no_class_weights = false;
  double threshold_percentile = kDefaultThresholdPercentile;
  double epsilon_percentile = kDefaultEpsilonPercentile;

  ModelConfig config() const {
    ModelConfig c;
    c.train.epochs = epochs;
    c.train.learning_rate = lr;
    c.train.batch_size = batch_size;
    c.train.validate();
    if (latent < 1 || modality_latent < 1) throw ValidationError("--latent and --modality-latent must be >= 1");
    if (cca_k < 1) throw ValidationError("--cca-k must be >= 1");
    c.fusion.strategy = parse_fusion(fusion);
    if (c.fusion.strategy == FusionStrategy::single_modality) {
      throw ValidationError("--fusion single_modality is selected through `ensemble --per-modality`");
    }
    c.fusion.arch.shared_dim = latent;
    c.fusion.arch.latent_dim = modality_latent;
    c.fusion.cca_k = cca_k;
    c.enhancement = parse_enhancement(enhancement);
    c.enhancement_blocks = blocks;
    c.class_weighting = !no_class_weights;
    for (double p : {threshold_percentile, epsilon_percentile})
      if (!(p > 0.0 && p < 100.0)) throw ValidationError("percentiles must lie in (0, 100)");
    c.detector.threshold_percentile = threshold_percentile;
    c.detector.epsilon_percentile = epsilon_percentile;
    return c;
  }

  void add_to(CLI::App& app) {
    app.add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    app.add_option("--lr", lr, "Learning rate")->capture_default_str();
    app.add_option("--batch-size", batch_size, "Mini-batch size")->capture_default_str();
    app.add_option("--latent", latent, "Width of the fused latent representation")->capture_default_str();
    app.add_option("--modality-latent", modality_latent, "Per-modality code width (capped at the modality width)")
        ->capture_default_str();
    app.add_option("--fusion", fusion, "latent_fusion, early or intermediate_cca")->capture_default_str();
    app.add_option("--cca-k", cca_k, "Canonical pairs kept by intermediate_cca")->capture_default_str();
    app.add_option("--enhancement", enhancement, "Enhancement stack before the classifier: residual or conv1d")
        ->capture_default_str();
    app.add_option("--blocks", blocks, "Enhancement blocks (0 disables)")->capture_default_str();
    app.add_flag("--no-class-weights", no_class_weights, "Use uniform class weights");
    app.add_option("--threshold-percentile", threshold_percentile, "Reconstruction threshold percentile")
        ->capture_default_str();
    app.add_option("--epsilon-percentile", epsilon_percentile, "Log-density cutoff percentile")
        ->capture_default_str();
  }

  nlohmann::ordered_json echo() const {
    return {{"epochs", epochs},
            {"lr", lr},
            {"batch_size", batch_size},
            {"latent", latent},
            {"modality_latent", modality_latent},
            {"fusion", fusion},
            {"cca_k", cca_k},
            {"enhancement", enhancement},
            {"blocks", blocks},
            {"class_weights", !no_class_weights},
            {"threshold_percentile", threshold_percentile},
            {"epsilon_percentile", epsilon_percentile}};
  }
};

inline nlohmann::ordered_json preprocess_echo(const PreprocessFlags& p) {
  return {{"impute", p.impute},
          {"selection", p.selection},
          {"variance_threshold", p.variance_threshold},
          {"correlation_threshold", p.correlation_threshold},
          {"split", p.split.text}};
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    out.push_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

inline fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  auto s = p.string();
  for (const char* ext : {".mmae.json", ".json", ".csv"}) {
    const std::string e(ext);
    if (s.size() > e.size() && s.compare(s.size() - e.size(), e.size(), e) == 0) {
      s.resize(s.size() - e.size());
      break;
    }
  }
  return s + suffix;
}

// ---------------------------------------------------------------------------
// Commands

struct GenerateCmd {
  std::string out;
  long long samples = 2000;
  double contamination = 0.05;
  double magnitude = 6.0;
  long long classes = 3;
  std::string modalities = "network:8,resource:6,behavior:4";
  double noise = 0.3;
  std::uint64_t seed = 42;

  int run() const {
    if (samples < 1) throw ValidationError("--samples must be >= 1");
    if (classes < 2) throw ValidationError("--classes must be >= 2");
    GeneratorSpec spec;
    spec.modalities = parse_modality_spec(modalities);
    spec.n_samples = static_cast<std::size_t>(samples);
    spec.contamination = contamination;
    spec.magnitude = magnitude;
    spec.n_classes = static_cast<std::size_t>(classes);
    spec.noise = noise;
    spec.seed = seed;
    spec.validate();
    auto ds = generate_synthetic(spec);
    auto manifest = write_dataset(ds, out);
    const auto anomalies = std::count_if(ds.labels.begin(), ds.labels.end(), [](int y) { return y != 0; });
    std::cout << "rows " << ds.size() << "\nanomalies " << anomalies << "\nmanifest " << manifest.string() << "\n";
    return kOk;
  }
};

struct PreprocessCmd {
  std::string data;
  std::string out;
  std::uint64_t seed = 42;
  PreprocessFlags flags;

  int run() const {
    PipelineOptions opt;
    opt.preprocess = flags.options();
    opt.ratios = flags.split.ratios();
    opt.seed = seed;
    auto ds = load_dataset(data);
    auto prepared = prepare_data(ds, opt);
    MultiModalDataset out_ds;
    out_ds.labels = prepared.deduped.labels;
    out_ds.label_names = prepared.deduped.label_names;
    auto views = prepared.preprocessor.transform(prepared.deduped);
    for (std::size_t m = 0; m < views.size(); ++m) {
      Modality mod;
      mod.name = prepared.preprocessor.modalities[m].name;
      for (std::size_t j = 0; j < views[m].cols(); ++j) mod.columns.push_back(mod.name + "_f" + std::to_string(j));
      mod.values = std::move(views[m]);
      out_ds.modalities.push_back(std::move(mod));
    }
    auto manifest = write_dataset(out_ds, out);
    CsvTable split{{"index", "split"}, {}};
    std::vector<std::string> role(prepared.deduped.size());
    for (auto i : prepared.split.train) role[i] = "train";
    for (auto i : prepared.split.val) role[i] = "val";
    for (auto i : prepared.split.test) role[i] = "test";
    for (std::size_t i = 0; i < role.size(); ++i) split.rows.push_back({std::to_string(i), role[i]});
    write_csv(fs::path(out) / "split.csv", split);
    nlohmann::ordered_json pre = detail::preprocessor_json(prepared.preprocessor);
    write_text_atomic(fs::path(out) / "preprocessing.json", pre.dump(1) + "\n");
    std::cout << "rows " << ds.size() << " (" << prepared.deduped.size() << " after dedupe)\n";
    for (const auto& m : prepared.preprocessor.modalities) {
      std::cout << m.name << ": kept " << m.mask.kept_count() << " of " << m.mask.kept.size() << " features\n";
    }
    std::cout << "manifest " << manifest.string() << "\n";
    return kOk;
  }
};

struct TrainCmd {
  std::string data;
  std::string optimizer = "adam";
  std::string out;
  std::string curves;
  std::uint64_t seed = 42;
  PreprocessFlags pre;
  ModelFlags model;

  int run() const {
    PipelineOptions opt;
    opt.preprocess = pre.options();
    opt.ratios = pre.split.ratios();
    opt.model = model.config();
    opt.seed = seed;
    const auto kind = parse_optimizer(optimizer);
    auto ds = load_dataset(data);
    auto prepared = prepare_data(ds, opt);
    MemberSpec spec{optimizer, kind, opt.model.fusion};
    ModelArtifact a;
    a.kind = "model";
    a.master_seed = seed;
    a.split = opt.ratios;
    a.preprocessor = prepared.preprocessor;
    a.ensemble.label_names = ds.label_names;
    a.ensemble.members.push_back(train_member(spec, prepared.train, prepared.val, ds.label_names, opt.model,
                                              derive_seed(seed, "member", 0)));
    a.ensemble.members.back().weight = 1.0;
    a.config = {{"command", "train"}, {"optimizer", optimizer}, {"seed", seed}};
    a.config["preprocess"] = preprocess_echo(pre);
    a.config["model"] = model.echo();
    save_artifact(a, out);
    const auto& h = a.ensemble.members.back().ae_history;
    const fs::path curves_path = curves.empty() ? with_suffix(out, ".curves.csv") : fs::path(curves);
    write_csv(curves_path, curves_table(h));
    std::cout << "final train_loss " << format_double(h.back().train_loss) << "\n";
    std::cout << "final val_loss " << (h.back().val_loss ? format_double(*h.back().val_loss) : "n/a") << "\n";
    std::cout << "artifact " << out << "\ncurves " << curves_path.string() << "\n";
    return kOk;
  }
};

struct DetectCmd {
  std::string model;
  std::string data;
  std::string method = "reconstruction";
  std::string out;

  int run() const {
    const auto m = parse_detect_method(method);
    auto a = load_artifact(model);
    auto ds = load_dataset(data);
    auto views = a.preprocessor.transform(ds);
    const auto& member = a.ensemble.primary();
    auto records = member.detect(views, m);
    std::vector<std::string> names;
    for (const auto& p : a.preprocessor.modalities) names.push_back(p.name);
    write_csv(out, anomaly_table(records, scored_modality_names(member, names)));
    const auto flagged = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.is_anomaly; });
    std::cout << "rows " << records.size() << "\nanomalies " << flagged << "\nmember " << member.tag << "\n";
    return kOk;
  }
};

struct EvaluateCmd {
  std::string model;
  std::string data;
  std::string out;
  std::string table;
  std::string subset = "all";
  std::string task = "classify";
  std::string method = "reconstruction";

  int run() const {
    if (subset != "all" && subset != "train" && subset != "val" && subset != "test") {
      throw ValidationError("--subset must be all, train, val or test");
    }
    if (task != "classify" && task != "detect") throw ValidationError("--task must be classify or detect");
    const auto dm = parse_detect_method(method);
    auto a = load_artifact(model);
    auto ds = remap_labels(load_dataset(data), a.ensemble.label_names);
    if (subset != "all") {
      ds = dedupe(ds);
      auto s = split_indices(ds.size(), a.split, a.master_seed);
      const auto& idx = subset == "train" ? s.train : subset == "val" ? s.val : s.test;
      if (idx.empty()) throw ValidationError("the " + subset + " split is empty for this artifact");
      ds = ds.subset(idx);
    }
    LabeledViews test{a.preprocessor.transform(ds), ds.labels};
    std::vector<ReportRow> rows;
    if (task == "classify") {
      if (a.ensemble.members.size() > 1) {
        rows = member_report(a.ensemble, test);
      } else {
        auto p = a.ensemble.members[0].predict(test.x);
        rows.push_back({a.ensemble.members[0].tag, classification_report(test.y, p.labels, p.probabilities)});
      }
    } else {
      const auto& member = a.ensemble.primary();
      auto records = member.detect(test.x, dm);
      std::vector<int> flags;
      std::vector<double> scores;
      for (const auto& r : records) {
        flags.push_back(r.is_anomaly);
        scores.push_back(r.score);
      }
      rows.push_back({member.tag, detection_report(test.y, flags, scores)});
    }
    const auto headline = metrics_json(rows.back().metrics);
    write_text_atomic(out, headline.dump(2) + "\n");
    const fs::path table_path = table.empty() ? with_suffix(out, ".csv") : fs::path(table);
    write_csv(table_path, report_table(rows));
    std::cout << "rows " << test.size() << "\n";
    for (const auto& [k, v] : headline.items()) std::cout << k << " " << format_double(v.get<double>()) << "\n";
    return kOk;
  }
};

struct EnsembleCmd {
  std::string data;
  std::string members = "sgd,adam,adadelta,adagrad,rmsprop";
  bool per_modality = false;
  std::string optimizer = "adam";
  std::string combination = "weighted_average";
  std::string out;
  std::string report;
  std::uint64_t seed = 42;
  PreprocessFlags pre;
  ModelFlags model;

  int run() const {
    PipelineOptions opt;
    opt.preprocess = pre.options();
    opt.ratios = pre.split.ratios();
    opt.model = model.config();
    opt.seed = seed;
    const auto comb = parse_combination(combination);
    std::vector<OptimizerKind> kinds;
    if (!per_modality) {
      for (const auto& name : split_list(members)) kinds.push_back(parse_optimizer(name));
      if (kinds.size() < 2) throw ValidationError("--members needs at least 2 optimizers");
    }
    const auto pm_kind = parse_optimizer(optimizer);
    auto ds = load_dataset(data);
    std::vector<MemberSpec> specs;
    if (per_modality) {
      std::vector<std::string> names;
      for (const auto& m : ds.modalities) names.push_back(m.name);
      specs = per_modality_specs(names, pm_kind, opt.model.fusion);
    } else {
      specs = roster_specs(kinds, opt.model.fusion);
    }
    if (specs.size() < 2) throw ValidationError("an ensemble needs at least 2 members");
    auto prepared = prepare_data(ds, opt);
    ModelArtifact a;
    a.kind = "ensemble";
    a.master_seed = seed;
    a.split = opt.ratios;
    a.preprocessor = prepared.preprocessor;
    a.ensemble = ensemble_train(prepared.train, prepared.val, specs, ds.label_names, opt.model, seed, comb);
    a.config = {{"command", "ensemble"},
                {"members", members},
                {"per_modality", per_modality},
                {"optimizer", optimizer},
                {"combination", combination},
                {"seed", seed}};
    a.config["preprocess"] = preprocess_echo(pre);
    a.config["model"] = model.echo();
    save_artifact(a, out);
    auto rows = member_report(a.ensemble, prepared.test);
    const fs::path report_path = report.empty() ? with_suffix(out, ".report.csv") : fs::path(report);
    write_csv(report_path, report_table(rows));
    for (const auto& m : a.ensemble.members) {
      std::cout << m.tag << " validation_f1 " << format_double(m.validation_f1) << " weight "
                << format_double(m.weight) << "\n";
    }
    std::cout << "ensemble test f1 " << format_double(rows.back().metrics.f1) << "\n";
    std::cout << "artifact " << out << "\nreport " << report_path.string() << "\n";
    return kOk;
  }
};

// ---------------------------------------------------------------------------
// Entry point

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return kDivergence;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const Error*>(&e)) return kUsage;
  return kIo;
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Multi-modal autoencoder toolkit for anomaly detection and classification", "mmae"};
  app.set_config("--config", "", "TOML or INI file with default option values; flags override it");
  app.require_subcommand(1);

  GenerateCmd gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic multi-modal dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--samples", gen.samples, "Row count")->capture_default_str();
  g->add_option("--contamination", gen.contamination, "Anomaly fraction in [0, 0.5)")->capture_default_str();
  g->add_option("--magnitude", gen.magnitude, "Anomaly shift in feature standard deviations")->capture_default_str();
  g->add_option("--classes", gen.classes, "Class count including normal")->capture_default_str();
  g->add_option("--modalities", gen.modalities, "name:dim list")->capture_default_str();
  g->add_option("--noise", gen.noise, "Per-feature noise standard deviation")->capture_default_str();
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();

  PreprocessCmd prep;
  auto* p = app.add_subcommand("preprocess", "Fit preprocessing on the training split and write the transformed data");
  p->add_option("--data", prep.data, "Dataset manifest")->required();
  p->add_option("--out", prep.out, "Output directory")->required();
  p->add_option("--seed", prep.seed, "Master seed")->capture_default_str();
  prep.flags.add_to(*p);

  TrainCmd tr;
  auto* t = app.add_subcommand("train", "Train one model and write its artifact and loss curves");
  t->add_option("--data", tr.data, "Dataset manifest")->required();
  t->add_option("--optimizer", tr.optimizer, "sgd, adam, adadelta, adagrad or rmsprop")->capture_default_str();
  t->add_option("--out", tr.out, "Artifact path (.mmae.json)")->required();
  t->add_option("--curves", tr.curves, "Curves CSV path (default: next to the artifact)");
  t->add_option("--seed", tr.seed, "Master seed")->capture_default_str();
  tr.pre.add_to(*t);
  tr.model.add_to(*t);

  DetectCmd det;
  auto* d = app.add_subcommand("detect", "Score rows with a trained artifact and write the anomaly report");
  d->add_option("--model", det.model, "Artifact path")->required();
  d->add_option("--data", det.data, "Dataset manifest")->required();
  d->add_option("--method", det.method, "reconstruction or density")->capture_default_str();
  d->add_option("--out", det.out, "Report CSV path")->required();

  EvaluateCmd ev;
  auto* e = app.add_subcommand("evaluate", "Compute accuracy, precision, recall, F1 and AUC-ROC");
  e->add_option("--model", ev.model, "Artifact path")->required();
  e->add_option("--data", ev.data, "Dataset manifest")->required();
  e->add_option("--out", ev.out, "Metrics JSON path")->required();
  e->add_option("--table", ev.table, "Table CSV path (default: next to --out)");
  e->add_option("--subset", ev.subset, "all, train, val or test (splits replay the artifact's seed)")
      ->capture_default_str();
  e->add_option("--task", ev.task, "classify or detect")->capture_default_str();
  e->add_option("--method", ev.method, "Detection method for --task detect")->capture_default_str();

  EnsembleCmd ens;
  auto* en = app.add_subcommand("ensemble", "Train one member per optimizer and combine them");
  en->add_option("--data", ens.data, "Dataset manifest")->required();
  en->add_option("--members", ens.members, "Comma-separated optimizers")->capture_default_str();
  en->add_flag("--per-modality", ens.per_modality, "One single-modality member per modality instead");
  en->add_option("--optimizer", ens.optimizer, "Optimizer for --per-modality members")->capture_default_str();
  en->add_option("--combination", ens.combination, "weighted_average or majority_vote")->capture_default_str();
  en->add_option("--out", ens.out, "Artifact path (.mmae.json)")->required();
  en->add_option("--report", ens.report, "Member report CSV path (default: next to the artifact)");
  en->add_option("--seed", ens.seed, "Master seed")->capture_default_str();
  ens.pre.add_to(*en);
  ens.model.add_to(*en);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (g->parsed()) return gen.run();
    if (p->parsed()) return prep.run();
    if (t->parsed()) return tr.run();
    if (d->parsed()) return det.run();
    if (e->parsed()) return ev.run();
    if (en->parsed()) return ens.run();
  } catch (const std::exception& ex) {
    const int code = exit_code_for(ex);
    std::cerr << "error: " << ex.what() << "\n";
    if (code == kUsage) std::cerr << "run with --help for usage\n";
    return code;
  }
  return kUsage;
}

}  // namespace mmae::cli
