#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mmae/dataset.hpp"
#include "mmae/error.hpp"
#include "mmae/fusion_ae.hpp"
#include "mmae/heads.hpp"
#include "mmae/linalg.hpp"
#include "mmae/log.hpp"
#include "mmae/metrics.hpp"
#include "mmae/optim.hpp"
#include "mmae/preprocess.hpp"
#include "mmae/random.hpp"

namespace mmae {

// ---------------------------------------------------------------------------
// One member: fusion autoencoder, anomaly detector and classification head

struct MemberSpec {
  std::string tag;
  OptimizerKind optimizer = OptimizerKind::adam;
  FusionOptions fusion;
};

struct ModelConfig {
  TrainConfig train;  // seed is replaced by each member's derived seed
  FusionOptions fusion;
  DetectorOptions detector;
  EnhancementKind enhancement = EnhancementKind::residual;
  std::size_t enhancement_blocks = 1;
  bool class_weighting = true;
};

struct LabeledViews {
  Views x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

inline LabeledViews select_labeled(const LabeledViews& d, std::span<const std::size_t> idx) {
  if (idx.empty()) return {};
  return {detail::select_view_rows(d.x, idx), [&] {
            std::vector<int> y;
            for (auto i : idx) y.push_back(d.y[i]);
            return y;
          }()};
}

/// Rows labelled 0, the normal class.
inline LabeledViews normal_rows(const LabeledViews& d) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.y.size(); ++i)
    if (d.y[i] == 0) idx.push_back(i);
  return select_labeled(d, idx);
}

struct Member {
  std::string tag;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  FusionModel fusion;
  AnomalyDetector detector;
  ClassifierModel classifier;
  double validation_f1 = 0.0;
  double weight = 0.0;
  History ae_history;
  History clf_history;

  /// Classifier input: the fused latent code next to log(1 + error) per
  /// scored modality.
  Matrix features(const Views& x, const FusionScores& scores) const {
    Matrix err = scores.per_modality;
    for (double& v : err.data()) v = std::log1p(v);
    return hstack(std::vector<Matrix>{fusion.encode(x), std::move(err)});
  }

  Matrix features(const Views& x) const { return features(x, fusion.score(x)); }

  Prediction predict(const Views& x) const { return clf_predict(classifier, features(x)); }

  std::vector<AnomalyRecord> detect(const Views& x, DetectMethod method) const {
    auto scores = fusion.score(x);
    if (method == DetectMethod::reconstruction) {
      return detect_reconstruction(detector, scores.errors, scores.per_modality);
    }
    return detect_density(detector, fusion.encode(x), scores.per_modality);
  }
};

/// Fits the autoencoder and detector on the normal training rows, then the
/// classifier on every training row.  `val` may be empty, in which case the
/// training split stands in for it.
inline Member train_member(const MemberSpec& spec, const LabeledViews& train_set, const LabeledViews& val_set,
                           const std::vector<std::string>& label_names, const ModelConfig& cfg,
                           std::uint64_t seed) {
  if (label_names.size() < 2) throw ValidationError("classification needs at least 2 classes");
  const LabeledViews& val = val_set.size() == 0 ? train_set : val_set;
  auto normal_train = normal_rows(train_set);
  if (normal_train.size() == 0) throw ValidationError("training split has no normal (label 0) rows");
  auto normal_val = normal_rows(val);

  Member m;
  m.tag = spec.tag;
  m.optimizer = spec.optimizer;
  m.seed = seed;
  std::vector<std::size_t> dims;
  for (const auto& v : train_set.x) dims.push_back(v.cols());
  m.fusion = FusionModel::make(dims, spec.fusion, seed);

  TrainConfig ae_cfg = cfg.train;
  ae_cfg.seed = seed;
  ae_cfg.batch_size = std::min(ae_cfg.batch_size, normal_train.size());
  m.ae_history = m.fusion.fit(normal_train.x, normal_val.size() > 0 ? &normal_val.x : nullptr, spec.optimizer,
                              ae_cfg);

  auto train_scores = m.fusion.score(normal_train.x);
  m.detector = fit_detector(train_scores.errors, m.fusion.encode(normal_train.x), cfg.detector);

  LabeledData clf_train_data{m.features(train_set.x), train_set.y};
  LabeledData clf_val_data{m.features(val.x), val.y};
  Rng rng = make_rng(seed, "classifier");
  const std::size_t in_dim = clf_train_data.x.cols();
  m.classifier.enhancement = make_enhancement(in_dim, cfg.enhancement_blocks, cfg.enhancement, rng);
  m.classifier.head = SoftmaxClassifier::make(m.classifier.enhancement.output_dim(in_dim), label_names, rng);
  TrainConfig clf_cfg = cfg.train;
  clf_cfg.seed = derive_seed(seed, "classifier");
  clf_cfg.batch_size = std::min(clf_cfg.batch_size, train_set.size());
  std::optional<std::vector<double>> weights;
  if (!cfg.class_weighting) weights = std::vector<double>(label_names.size(), 1.0);
  m.clf_history = clf_train(m.classifier, clf_train_data, &clf_val_data, spec.optimizer, clf_cfg, weights);

  auto pred = clf_predict(m.classifier, clf_val_data.x);
  m.validation_f1 = prf(confusion(val.y, pred.labels, label_names.size()), default_averaging(label_names.size())).f1;
  return m;
}

// ---------------------------------------------------------------------------
// Ensemble

enum class Combination { weighted_average, majority_vote };

inline std::string_view to_string(Combination c) {
  return c == Combination::weighted_average ? "weighted_average" : "majority_vote";
}

inline Combination parse_combination(std::string_view s) {
  if (s == "weighted_average") return Combination::weighted_average;
  if (s == "majority_vote") return Combination::majority_vote;
  throw ValidationError("unknown combination '" + std::string(s) + "' (expected weighted_average or majority_vote)");
}

/// weight_i = f1_i / sum f1; all-zero scores fall back to uniform weights.
inline std::vector<double> f1_weights(std::span<const double> f1) {
  if (f1.empty()) throw ValidationError("f1_weights: no members");
  double total = 0.0;
  for (double v : f1) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("f1_weights: scores must be finite and >= 0");
    total += v;
  }
  std::vector<double> w(f1.size(), 1.0 / static_cast<double>(f1.size()));
  if (total > 0.0)
    for (std::size_t i = 0; i < f1.size(); ++i) w[i] = f1[i] / total;
  return w;
}

struct EnsembleModel {
  std::vector<Member> members;
  Combination combination = Combination::weighted_average;
  std::vector<std::string> label_names;

  std::vector<double> weights() const {
    std::vector<double> w;
    for (const auto& m : members) w.push_back(m.weight);
    return w;
  }

  void validate() const {
    if (members.empty()) throw ValidationError("ensemble is not fitted");
    double sum = 0.0;
    for (const auto& m : members) {
      if (!(m.weight >= 0.0)) throw ValidationError("member '" + m.tag + "' has a negative weight");
      sum += m.weight;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("ensemble weights must sum to 1");
  }

  /// Highest-weight member; ties go to the earliest.
  const Member& primary() const {
    validate();
    std::size_t best = 0;
    for (std::size_t i = 1; i < members.size(); ++i)
      if (members[i].weight > members[best].weight) best = i;
    return members[best];
  }
};

inline std::vector<MemberSpec> roster_specs(std::span<const OptimizerKind> optimizers, const FusionOptions& fusion) {
  std::vector<MemberSpec> specs;
  for (auto k : optimizers) specs.push_back({std::string(to_string(k)), k, fusion});
  return specs;
}

inline std::vector<MemberSpec> default_roster(const FusionOptions& fusion = {}) {
  return roster_specs(kAllOptimizers, fusion);
}

/// One single-modality member per modality, all with the same optimizer.
inline std::vector<MemberSpec> per_modality_specs(std::span<const std::string> modality_names,
                                                  OptimizerKind optimizer, const FusionOptions& base = {}) {
  std::vector<MemberSpec> specs;
  for (std::size_t i = 0; i < modality_names.size(); ++i) {
    FusionOptions f = base;
    f.strategy = FusionStrategy::single_modality;
    f.modality = i;
    specs.push_back({modality_names[i], optimizer, f});
  }
  return specs;
}

/// Members train concurrently, each from derive_seed(master_seed, "member", i).
/// A diverged member is dropped with a warning.
inline EnsembleModel ensemble_train(const LabeledViews& train_set, const LabeledViews& val_set,
                                    const std::vector<MemberSpec>& specs,
                                    const std::vector<std::string>& label_names, const ModelConfig& cfg,
                                    std::uint64_t master_seed,
                                    Combination combination = Combination::weighted_average) {
  if (specs.size() < 2) {
    throw ValidationError("an ensemble needs at least 2 members, got " + std::to_string(specs.size()));
  }
  std::set<std::string> tags;
  for (const auto& s : specs)
    if (!tags.insert(s.tag).second) throw ValidationError("duplicate ensemble member '" + s.tag + "'");

  std::vector<std::future<Member>> jobs;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      return train_member(specs[i], train_set, val_set, label_names, cfg, derive_seed(master_seed, "member", i));
    }));
  }
  EnsembleModel e;
  e.combination = combination;
  e.label_names = label_names;
  std::vector<std::string> diverged;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    try {
      e.members.push_back(jobs[i].get());
    } catch (const DivergenceError& err) {
      log().warn("member '{}' diverged and is excluded: {}", specs[i].tag, err.what());
      diverged.push_back(specs[i].tag);
    }
  }
  if (e.members.empty()) {
    throw DivergenceError("every ensemble member diverged", 0, 0);
  }
  std::vector<double> f1;
  for (const auto& m : e.members) f1.push_back(m.validation_f1);
  auto w = f1_weights(f1);
  for (std::size_t i = 0; i < w.size(); ++i) e.members[i].weight = w[i];
  return e;
}

inline Prediction ensemble_predict(const EnsembleModel& e, const Views& x) {
  e.validate();
  std::vector<Prediction> preds;
  for (const auto& m : e.members) preds.push_back(m.predict(x));
  const auto w = e.weights();
  if (e.combination == Combination::weighted_average) {
    std::vector<Matrix> probs;
    for (auto& p : preds) probs.push_back(std::move(p.probabilities));
    return argmax_rows(fuse_late(probs, w));
  }
  const std::size_t n = sample_count(x), k = e.label_names.size();
  Matrix votes(n, k);
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t r = 0; r < n; ++r) votes(r, static_cast<std::size_t>(preds[i].labels[r])) += w[i];
  return argmax_rows(std::move(votes));
}

struct ReportRow {
  std::string model;
  MetricReport metrics;
};

/// One row per member followed by the combined "ensemble" row.
inline std::vector<ReportRow> member_report(const EnsembleModel& e, const LabeledViews& test) {
  e.validate();
  std::vector<ReportRow> rows;
  for (const auto& m : e.members) {
    auto p = m.predict(test.x);
    rows.push_back({m.tag, classification_report(test.y, p.labels, p.probabilities)});
  }
  auto p = ensemble_predict(e, test.x);
  rows.push_back({"ensemble", classification_report(test.y, p.labels, p.probabilities)});
  return rows;
}

// ---------------------------------------------------------------------------
// Dataset-level pipeline: dedupe, split, preprocess, train

struct PipelineOptions {
  PreprocessOptions preprocess;
  SplitRatios ratios;
  ModelConfig model;
  Combination combination = Combination::weighted_average;
  std::uint64_t seed = 42;
};

struct PreparedData {
  MultiModalDataset deduped;
  SplitIndices split;
  Preprocessor preprocessor;
  LabeledViews train;
  LabeledViews val;
  LabeledViews test;
};

/// Dedupe, seeded split, then preprocessing fitted on the training split.
inline PreparedData prepare_data(const MultiModalDataset& ds, const PipelineOptions& opt) {
  ds.validate();
  PreparedData p;
  p.deduped = dedupe(ds);
  if (p.deduped.size() < ds.size()) {
    log().info("dropped {} duplicate rows", ds.size() - p.deduped.size());
  }
  p.split = split_indices(p.deduped.size(), opt.ratios, opt.seed);
  auto train = p.deduped.subset(p.split.train);
  auto preprocess = opt.preprocess;
  preprocess.seed = opt.seed;
  p.preprocessor = fit_preprocessor(train, preprocess);
  auto views = [&](const std::vector<std::size_t>& idx) {
    auto part = p.deduped.subset(idx);
    return LabeledViews{p.preprocessor.transform(part), part.labels};
  };
  p.train = views(p.split.train);
  p.val = p.split.val.empty() ? LabeledViews{} : views(p.split.val);
  p.test = views(p.split.test);
  return p;
}

}  // namespace mmae
