#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mmae/dataio.hpp"
#include "mmae/ensemble.hpp"
#include "mmae/error.hpp"
#include "mmae/fusion_ae.hpp"
#include "mmae/heads.hpp"
#include "mmae/layers.hpp"
#include "mmae/preprocess.hpp"

namespace mmae {

inline constexpr int kArtifactFormatVersion = 1;

/// Everything `detect` and `evaluate` need to replay a training run.
/// kind is "model" for a single trained member or "ensemble".
struct ModelArtifact {
  int format_version = kArtifactFormatVersion;
  std::string kind = "model";
  std::uint64_t master_seed = 42;
  SplitRatios split;
  Preprocessor preprocessor;
  EnsembleModel ensemble;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

namespace detail {

using Json = nlohmann::ordered_json;

inline Json tensor_json(const Matrix& m) {
  Json j;
  j["shape"] = {m.rows(), m.cols()};
  j["data"] = m.data();
  return j;
}

inline Matrix read_tensor(const Json& j, const std::string& what) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2) throw SchemaError(what + ": tensor shape must have 2 entries");
  if (shape[0] * shape[1] != data.size()) {
    throw SchemaError(what + ": declared shape " + std::to_string(shape[0]) + "x" + std::to_string(shape[1]) +
                      " does not match " + std::to_string(data.size()) + " values");
  }
  if (data.empty()) return {};
  return Matrix(shape[0], shape[1], std::move(data));
}

inline std::vector<double> read_vector(const Json& j, std::size_t expected, const std::string& what) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != expected) {
    throw SchemaError(what + ": expected " + std::to_string(expected) + " values, found " + std::to_string(v.size()));
  }
  return v;
}

inline Json dense_json(const DenseLayer& l) {
  Json j;
  j["type"] = "dense";
  j["activation"] = std::string(to_string(l.activation));
  j["weights"] = tensor_json(l.weights);
  j["bias"] = l.bias;
  return j;
}

inline DenseLayer read_dense(const Json& j, const std::string& what) {
  DenseLayer l;
  l.activation = parse_activation(j.at("activation").get<std::string>());
  l.weights = read_tensor(j.at("weights"), what + ".weights");
  if (l.weights.empty()) throw SchemaError(what + ": dense layer without weights");
  l.bias = read_vector(j.at("bias"), l.weights.rows(), what + ".bias");
  return l;
}

inline Json layer_json(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> Json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          return dense_json(l);
        } else if constexpr (std::is_same_v<T, Conv1DLayer>) {
          Json j;
          j["type"] = "conv1d";
          j["activation"] = std::string(to_string(l.activation));
          j["n_filters"] = l.n_filters;
          j["kernel_width"] = l.kernel_width;
          j["in_channels"] = l.in_channels;
          j["filters"] = l.filters;
          j["bias"] = l.bias;
          return j;
        } else {
          Json j;
          j["type"] = "residual";
          j["first"] = dense_json(l.first);
          j["second"] = dense_json(l.second);
          return j;
        }
      },
      layer);
}

inline Layer read_layer(const Json& j, const std::string& what) {
  const auto type = j.at("type").get<std::string>();
  if (type == "dense") return read_dense(j, what);
  if (type == "conv1d") {
    Conv1DLayer l;
    l.activation = parse_activation(j.at("activation").get<std::string>());
    l.n_filters = j.at("n_filters").get<std::size_t>();
    l.kernel_width = j.at("kernel_width").get<std::size_t>();
    l.in_channels = j.at("in_channels").get<std::size_t>();
    if (l.n_filters == 0 || l.kernel_width == 0 || l.in_channels == 0) {
      throw SchemaError(what + ": conv1d dims must be >= 1");
    }
    l.filters = read_vector(j.at("filters"), l.n_filters * l.kernel_width * l.in_channels, what + ".filters");
    l.bias = read_vector(j.at("bias"), l.n_filters, what + ".bias");
    return l;
  }
  if (type == "residual") {
    ResidualBlock b{read_dense(j.at("first"), what + ".first"), read_dense(j.at("second"), what + ".second")};
    b.validate();
    return b;
  }
  throw SchemaError(what + ": unknown layer type '" + type + "'");
}

inline Json sequential_json(const Sequential& s) {
  Json j = Json::array();
  for (const auto& l : s.layers()) j.push_back(layer_json(l));
  return j;
}

inline Sequential read_sequential(const Json& j, const std::string& what) {
  Sequential s;
  std::size_t i = 0;
  for (const auto& l : j) s.push_back(read_layer(l, what + "[" + std::to_string(i++) + "]"));
  return s;
}

inline Json preprocessor_json(const Preprocessor& p) {
  Json mods = Json::array();
  for (const auto& m : p.modalities) {
    Json j;
    j["name"] = m.name;
    j["columns"] = m.columns;
    j["impute_fill"] = m.impute_fill;
    j["categorical_columns"] = m.categorical_columns;
    j["vocabularies"] = m.vocabularies;
    std::vector<int> kept(m.mask.kept.begin(), m.mask.kept.end());
    j["mask"] = {{"kept", kept}, {"provenance", m.mask.provenance}};
    j["scaler"] = {{"min", m.scaler.min}, {"max", m.scaler.max}};
    mods.push_back(std::move(j));
  }
  return Json{{"modalities", mods}};
}

inline Preprocessor read_preprocessor(const Json& j) {
  Preprocessor p;
  for (const auto& m : j.at("modalities")) {
    ModalityPreprocessor mp;
    mp.name = m.at("name").get<std::string>();
    const std::string what = "preprocessing '" + mp.name + "'";
    mp.columns = m.at("columns").get<std::vector<std::string>>();
    mp.impute_fill = read_vector(m.at("impute_fill"), mp.columns.size(), what + ".impute_fill");
    mp.categorical_columns = m.at("categorical_columns").get<std::vector<std::string>>();
    mp.vocabularies = m.at("vocabularies").get<std::vector<std::vector<std::string>>>();
    if (mp.vocabularies.size() != mp.categorical_columns.size()) {
      throw SchemaError(what + ": one vocabulary per categorical column is required");
    }
    std::size_t encoded = mp.columns.size();
    for (const auto& v : mp.vocabularies) encoded += v.size();
    const auto kept = m.at("mask").at("kept").get<std::vector<int>>();
    if (kept.size() != encoded) {
      throw SchemaError(what + ": mask covers " + std::to_string(kept.size()) + " features, encoding yields " +
                        std::to_string(encoded));
    }
    mp.mask.kept.assign(kept.begin(), kept.end());
    mp.mask.provenance = m.at("mask").at("provenance").get<std::string>();
    try {
      mp.mask.validate();
    } catch (const ValidationError& e) {
      throw SchemaError(what + ": " + e.what());
    }
    mp.scaler.min = read_vector(m.at("scaler").at("min"), mp.mask.kept_count(), what + ".scaler.min");
    mp.scaler.max = read_vector(m.at("scaler").at("max"), mp.mask.kept_count(), what + ".scaler.max");
    p.modalities.push_back(std::move(mp));
  }
  if (p.modalities.empty()) throw SchemaError("preprocessing lists no modalities");
  return p;
}

inline Json fusion_json(const FusionModel& f) {
  Json j;
  j["strategy"] = std::string(to_string(f.strategy));
  j["input_dims"] = f.input_dims;
  if (f.strategy == FusionStrategy::latent_fusion) {
    Json enc = Json::array(), dec = Json::array();
    for (const auto& e : f.mm.encoders()) enc.push_back(sequential_json(e));
    for (const auto& d : f.mm.decoders()) dec.push_back(sequential_json(d));
    j["encoders"] = enc;
    j["fusion"] = dense_json(f.mm.fusion());
    j["defusion"] = dense_json(f.mm.defusion());
    j["decoders"] = dec;
    return j;
  }
  if (f.strategy == FusionStrategy::single_modality) j["modality"] = f.modality;
  if (f.strategy == FusionStrategy::intermediate_cca) {
    j["cca"] = {{"mean_a", f.cca.mean_a},
                {"mean_b", f.cca.mean_b},
                {"weights_a", tensor_json(f.cca.weights_a)},
                {"weights_b", tensor_json(f.cca.weights_b)},
                {"correlations", f.cca.correlations}};
  }
  j["latent_dim"] = f.ae.latent_dim;
  j["encoder"] = sequential_json(f.ae.encoder);
  j["decoder"] = sequential_json(f.ae.decoder);
  return j;
}

inline FusionModel read_fusion(const Json& j, const std::string& what) {
  FusionModel f;
  f.strategy = parse_fusion(j.at("strategy").get<std::string>());
  f.input_dims = j.at("input_dims").get<std::vector<std::size_t>>();
  if (f.strategy == FusionStrategy::latent_fusion) {
    std::vector<Sequential> enc, dec;
    for (const auto& e : j.at("encoders")) enc.push_back(read_sequential(e, what + ".encoders"));
    for (const auto& d : j.at("decoders")) dec.push_back(read_sequential(d, what + ".decoders"));
    f.mm = MultiModalAE(std::move(enc), read_dense(j.at("fusion"), what + ".fusion"),
                        read_dense(j.at("defusion"), what + ".defusion"), std::move(dec), f.input_dims);
    return f;
  }
  std::size_t ae_in = 0;
  switch (f.strategy) {
    case FusionStrategy::early:
      for (auto d : f.input_dims) ae_in += d;
      break;
    case FusionStrategy::single_modality:
      f.modality = j.at("modality").get<std::size_t>();
      if (f.modality >= f.input_dims.size()) throw SchemaError(what + ": modality index out of range");
      ae_in = f.input_dims[f.modality];
      break;
    case FusionStrategy::intermediate_cca: {
      const auto& c = j.at("cca");
      if (f.input_dims.size() != 2) throw SchemaError(what + ": cca fusion needs 2 modalities");
      f.cca.correlations = c.at("correlations").get<std::vector<double>>();
      const std::size_t k = f.cca.k();
      f.cca.mean_a = read_vector(c.at("mean_a"), f.input_dims[0], what + ".cca.mean_a");
      f.cca.mean_b = read_vector(c.at("mean_b"), f.input_dims[1], what + ".cca.mean_b");
      f.cca.weights_a = read_tensor(c.at("weights_a"), what + ".cca.weights_a");
      f.cca.weights_b = read_tensor(c.at("weights_b"), what + ".cca.weights_b");
      if (k == 0 || f.cca.weights_a.rows() != f.input_dims[0] || f.cca.weights_a.cols() != k ||
          f.cca.weights_b.rows() != f.input_dims[1] || f.cca.weights_b.cols() != k) {
        throw SchemaError(what + ": cca projection shapes do not match the input dims");
      }
      ae_in = 2 * k;
      break;
    }
    case FusionStrategy::latent_fusion: break;
  }
  f.ae.input_dim = ae_in;
  f.ae.latent_dim = j.at("latent_dim").get<std::size_t>();
  f.ae.encoder = read_sequential(j.at("encoder"), what + ".encoder");
  f.ae.decoder = read_sequential(j.at("decoder"), what + ".decoder");
  f.ae.validate();
  return f;
}

inline Json detector_json(const AnomalyDetector& d) {
  Json j;
  j["threshold"] = d.threshold;
  j["bands"] = d.bands;
  j["density_mean"] = d.density.mean;
  j["density_variance"] = d.density.variance;
  j["density_epsilon"] = d.density_epsilon;
  j["density_bands"] = d.density_bands;
  return j;
}

inline AnomalyDetector read_detector(const Json& j, std::size_t latent_width, const std::string& what) {
  AnomalyDetector d;
  d.threshold = j.at("threshold").get<double>();
  d.bands = read_vector(j.at("bands"), 3, what + ".bands");
  d.density.mean = read_vector(j.at("density_mean"), latent_width, what + ".density_mean");
  d.density.variance = read_vector(j.at("density_variance"), latent_width, what + ".density_variance");
  d.density_epsilon = j.at("density_epsilon").get<double>();
  d.density_bands = read_vector(j.at("density_bands"), 3, what + ".density_bands");
  d.fitted = true;
  d.validate();
  return d;
}

inline Json member_json(const Member& m) {
  Json j;
  j["tag"] = m.tag;
  j["optimizer"] = std::string(to_string(m.optimizer));
  j["seed"] = m.seed;
  j["validation_f1"] = m.validation_f1;
  j["weight"] = m.weight;
  j["fusion"] = fusion_json(m.fusion);
  j["detector"] = detector_json(m.detector);
  j["classifier"] = {{"enhancement", sequential_json(m.classifier.enhancement)},
                     {"weights", tensor_json(m.classifier.head.weights)},
                     {"bias", m.classifier.head.bias},
                     {"class_weights", m.classifier.head.class_weights},
                     {"class_labels", m.classifier.head.class_labels}};
  return j;
}

inline Member read_member(const Json& j, const std::vector<std::size_t>& dims,
                          const std::vector<std::string>& label_names) {
  Member m;
  m.tag = j.at("tag").get<std::string>();
  const std::string what = "member '" + m.tag + "'";
  m.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.validation_f1 = j.at("validation_f1").get<double>();
  m.weight = j.at("weight").get<double>();
  m.fusion = read_fusion(j.at("fusion"), what + ".fusion");
  if (m.fusion.input_dims != dims) throw SchemaError(what + ": input dims differ from the preprocessing output");
  m.detector = read_detector(j.at("detector"), m.fusion.latent_width(), what + ".detector");
  const auto& c = j.at("classifier");
  m.classifier.enhancement = read_sequential(c.at("enhancement"), what + ".enhancement");
  auto& h = m.classifier.head;
  h.weights = read_tensor(c.at("weights"), what + ".classifier.weights");
  h.class_labels = c.at("class_labels").get<std::vector<std::string>>();
  h.bias = read_vector(c.at("bias"), h.class_labels.size(), what + ".classifier.bias");
  h.class_weights = read_vector(c.at("class_weights"), h.class_labels.size(), what + ".classifier.class_weights");
  h.validate();
  if (h.class_labels != label_names) throw SchemaError(what + ": classifier labels differ from the artifact's");
  const std::size_t feature_dim = m.fusion.latent_width() + m.fusion.modalities_scored();
  if (m.classifier.enhancement.output_dim(feature_dim) != h.in_dim()) {
    throw SchemaError(what + ": classifier input width does not match the enhancement output");
  }
  return m;
}

}  // namespace detail

inline std::string serialize_artifact(const ModelArtifact& a) {
  a.ensemble.validate();
  detail::Json j;
  j["format_version"] = a.format_version;
  j["kind"] = a.kind;
  j["master_seed"] = a.master_seed;
  j["split"] = {{"train", a.split.train}, {"val", a.split.val}, {"test", a.split.test}};
  j["label_names"] = a.ensemble.label_names;
  j["preprocessing"] = detail::preprocessor_json(a.preprocessor);
  j["combination"] = std::string(to_string(a.ensemble.combination));
  j["members"] = detail::Json::array();
  for (const auto& m : a.ensemble.members) j["members"].push_back(detail::member_json(m));
  j["config"] = a.config;
  return j.dump(1) + "\n";
}

/// Any parse failure, unknown version or inconsistent shape is a SchemaError.
inline ModelArtifact parse_artifact(std::string_view text, const std::string& source = "<artifact>") {
  try {
    const auto j = detail::Json::parse(text);
    ModelArtifact a;
    a.format_version = j.at("format_version").get<int>();
    if (a.format_version != kArtifactFormatVersion) {
      throw SchemaError(source + ": artifact format_version " + std::to_string(a.format_version) +
                        " is not supported (expected " + std::to_string(kArtifactFormatVersion) + ")");
    }
    a.kind = j.at("kind").get<std::string>();
    if (a.kind != "model" && a.kind != "ensemble") throw SchemaError(source + ": unknown artifact kind '" + a.kind + "'");
    a.master_seed = j.at("master_seed").get<std::uint64_t>();
    a.split = {j.at("split").at("train").get<double>(), j.at("split").at("val").get<double>(),
               j.at("split").at("test").get<double>()};
    a.ensemble.label_names = j.at("label_names").get<std::vector<std::string>>();
    a.preprocessor = detail::read_preprocessor(j.at("preprocessing"));
    a.ensemble.combination = parse_combination(j.at("combination").get<std::string>());
    const auto dims = a.preprocessor.output_dims();
    for (const auto& m : j.at("members")) a.ensemble.members.push_back(detail::read_member(m, dims, a.ensemble.label_names));
    a.ensemble.validate();
    a.config = j.at("config");
    return a;
  } catch (const SchemaError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(source + ": malformed artifact: " + e.what());
  } catch (const Error& e) {
    throw SchemaError(source + ": inconsistent artifact: " + e.what());
  }
}

inline void save_artifact(const ModelArtifact& a, const fs::path& path) { write_text_atomic(path, serialize_artifact(a)); }

inline ModelArtifact load_artifact(const fs::path& path) { return parse_artifact(read_text(path), path.string()); }

// ---------------------------------------------------------------------------
// Output tables

inline CsvTable curves_table(const History& h) {
  CsvTable t{{"epoch", "train_loss", "val_loss"}, {}};
  for (const auto& r : h) {
    t.rows.push_back({std::to_string(r.epoch), format_double(r.train_loss),
                      r.val_loss ? format_double(*r.val_loss) : std::string()});
  }
  return t;
}

/// Names of the modalities behind a member's per-modality error columns.
inline std::vector<std::string> scored_modality_names(const Member& m, const std::vector<std::string>& names) {
  switch (m.fusion.strategy) {
    case FusionStrategy::intermediate_cca: return {names.at(0), names.at(1)};
    case FusionStrategy::single_modality: return {names.at(m.fusion.modality)};
    default: return names;
  }
}

inline CsvTable anomaly_table(const std::vector<AnomalyRecord>& records, const std::vector<std::string>& modality_names) {
  CsvTable t{{"index", "score", "is_anomaly", "severity", "dominant_modality"}, {}};
  for (const auto& r : records) {
    t.rows.push_back({std::to_string(r.index), format_double(r.score), r.is_anomaly ? "1" : "0",
                      std::string(to_string(r.severity)),
                      r.dominant_modality < 0 ? std::string() : modality_names.at(static_cast<std::size_t>(r.dominant_modality))});
  }
  return t;
}

inline CsvTable report_table(const std::vector<ReportRow>& rows) {
  CsvTable t{{"model", "accuracy", "precision", "recall", "f1", "auc_roc"}, {}};
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    t.rows.push_back({r.model, format_double(m.accuracy), format_double(m.precision), format_double(m.recall),
                      format_double(m.f1), format_double(m.auc_roc)});
  }
  return t;
}

inline std::vector<ReportRow> parse_report_table(const CsvTable& t) {
  if (t.header != std::vector<std::string>{"model", "accuracy", "precision", "recall", "f1", "auc_roc"}) {
    throw SchemaError("report table has unexpected columns");
  }
  std::vector<ReportRow> rows;
  for (const auto& r : t.rows) {
    std::vector<double> v;
    for (std::size_t c = 1; c < 6; ++c) {
      auto x = parse_double(r[c]);
      if (!x) throw SchemaError("report table: cannot parse '" + r[c] + "'");
      v.push_back(*x);
    }
    rows.push_back({r[0], {v[0], v[1], v[2], v[3], v[4]}});
  }
  return rows;
}

inline nlohmann::ordered_json metrics_json(const MetricReport& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"auc_roc", m.auc_roc}};
}

}  // namespace mmae
