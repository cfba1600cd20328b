#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmae/error.hpp"
#include "mmae/layers.hpp"
#include "mmae/linalg.hpp"
#include "mmae/optim.hpp"
#include "mmae/random.hpp"

namespace mmae {

// ---------------------------------------------------------------------------
// Percentiles and anomaly detection

/// Linear interpolation between closest ranks: position p/100 * (n-1) in the
/// sorted values.
inline double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty sequence");
  if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile must lie in [0, 100]");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double pos = p / 100.0 * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline constexpr double kDefaultThresholdPercentile = 99.0;
inline constexpr double kDefaultEpsilonPercentile = 1.0;
inline constexpr double kVarianceFloor = 1e-9;

inline double fit_threshold(std::span<const double> train_errors,
                            double pct = kDefaultThresholdPercentile) {
  if (train_errors.empty()) throw ValidationError("fit_threshold: no training errors");
  if (!(pct > 0.0 && pct < 100.0)) throw ValidationError("fit_threshold: percentile must lie in (0, 100)");
  return percentile(train_errors, pct);
}

/// Diagonal Gaussian over the latent space.
struct DensityParams {
  std::vector<double> mean;
  std::vector<double> variance;

  double log_density(std::span<const double> x) const {
    if (x.size() != mean.size()) {
      throw ShapeError("log_density: " + std::to_string(x.size()) + " dims, density fitted on " +
                       std::to_string(mean.size()));
    }
    double lp = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - mean[j];
      lp -= 0.5 * (std::log(2.0 * std::numbers::pi * variance[j]) + d * d / variance[j]);
    }
    return lp;
  }

  std::vector<double> log_densities(const Matrix& x) const {
    std::vector<double> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = log_density(x.row(r));
    return out;
  }
};

struct DensityFit {
  DensityParams params;
  double epsilon = 0.0;  // log-density cutoff
};

inline DensityFit fit_density(const Matrix& latents, double epsilon_percentile = kDefaultEpsilonPercentile) {
  if (latents.rows() < 2) throw ValidationError("fit_density: need at least 2 samples");
  DensityFit f;
  f.params.mean = column_means(latents);
  f.params.variance.assign(latents.cols(), 0.0);
  for (std::size_t r = 0; r < latents.rows(); ++r)
    for (std::size_t j = 0; j < latents.cols(); ++j) {
      const double d = latents(r, j) - f.params.mean[j];
      f.params.variance[j] += d * d;
    }
  for (double& v : f.params.variance) v = std::max(v / static_cast<double>(latents.rows()), kVarianceFloor);
  f.epsilon = percentile(f.params.log_densities(latents), epsilon_percentile);
  return f;
}

enum class Severity { none, low, medium, high, critical };

inline std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::none: return "none";
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    case Severity::critical: return "critical";
  }
  return "none";
}

enum class DetectMethod { reconstruction, density };

inline std::string_view to_string(DetectMethod m) {
  return m == DetectMethod::reconstruction ? "reconstruction" : "density";
}

inline DetectMethod parse_detect_method(std::string_view s) {
  if (s == "reconstruction") return DetectMethod::reconstruction;
  if (s == "density") return DetectMethod::density;
  throw ValidationError("unknown detection method '" + std::string(s) + "' (expected reconstruction or density)");
}

struct DetectorOptions {
  double threshold_percentile = kDefaultThresholdPercentile;
  double epsilon_percentile = kDefaultEpsilonPercentile;
  std::vector<double> band_percentiles{99.5, 99.9, 99.99};
};

/// Scores are oriented so that larger is more anomalous: the reconstruction
/// error, or the negated log-density.
struct AnomalyDetector {
  bool fitted = false;
  double threshold = 0.0;
  std::vector<double> bands;  // over training reconstruction errors
  DensityParams density;
  double density_epsilon = 0.0;
  std::vector<double> density_bands;  // over training negated log-densities

  void validate() const {
    if (!fitted) throw ValidationError("anomaly detector is not fitted");
    if (!(threshold >= 0.0)) throw ValidationError("detector threshold must be >= 0");
    for (const auto* b : {&bands, &density_bands}) {
      if (b->size() != 3) throw ValidationError("detector needs 3 severity bands");
      if (!((*b)[0] < (*b)[1] && (*b)[1] < (*b)[2])) throw ValidationError("severity bands must increase strictly");
    }
    for (double v : density.variance)
      if (!(v > 0.0)) throw ValidationError("detector density variance must be > 0");
  }
};

namespace detail {

inline std::vector<double> strict_bands(std::span<const double> scores, std::span<const double> pcts) {
  if (pcts.size() != 3) throw ValidationError("exactly 3 severity band percentiles are required");
  std::vector<double> b;
  for (double p : pcts) b.push_back(percentile(scores, p));
  for (std::size_t i = 1; i < b.size(); ++i)
    if (b[i] <= b[i - 1]) b[i] = std::nextafter(b[i - 1], std::numeric_limits<double>::infinity());
  return b;
}

}  // namespace detail

inline AnomalyDetector fit_detector(std::span<const double> train_errors, const Matrix& train_latents,
                                    const DetectorOptions& opt = {}) {
  AnomalyDetector d;
  d.threshold = std::max(0.0, fit_threshold(train_errors, opt.threshold_percentile));
  d.bands = detail::strict_bands(train_errors, opt.band_percentiles);
  auto fit = fit_density(train_latents, opt.epsilon_percentile);
  d.density = std::move(fit.params);
  d.density_epsilon = fit.epsilon;
  auto neg = d.density.log_densities(train_latents);
  for (double& v : neg) v = -v;
  d.density_bands = detail::strict_bands(neg, opt.band_percentiles);
  d.fitted = true;
  return d;
}

struct AnomalyRecord {
  std::size_t index = 0;
  double score = 0.0;
  bool is_anomaly = false;
  Severity severity = Severity::none;
  int dominant_modality = -1;  // argmax per-modality error; -1 when normal
};

inline Severity severity_for(double score, std::span<const double> bands) {
  if (score <= bands[0]) return Severity::low;
  if (score <= bands[1]) return Severity::medium;
  if (score <= bands[2]) return Severity::high;
  return Severity::critical;
}

/// Flags score > cutoff (strict).  per_modality may be empty; otherwise one
/// row per sample.
inline std::vector<AnomalyRecord> detect_scores(std::span<const double> scores, double cutoff,
                                                std::span<const double> bands, const Matrix& per_modality) {
  if (!per_modality.empty() && per_modality.rows() != scores.size()) {
    throw ShapeError("detect: per-modality errors have " + std::to_string(per_modality.rows()) + " rows for " +
                     std::to_string(scores.size()) + " scores");
  }
  std::vector<AnomalyRecord> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& r = out[i];
    r.index = i;
    r.score = scores[i];
    r.is_anomaly = scores[i] > cutoff;
    if (!r.is_anomaly) continue;
    r.severity = severity_for(scores[i], bands);
    if (!per_modality.empty()) {
      auto row = per_modality.row(i);
      r.dominant_modality = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return out;
}

inline std::vector<AnomalyRecord> detect_reconstruction(const AnomalyDetector& d, std::span<const double> errors,
                                                        const Matrix& per_modality = {}) {
  d.validate();
  return detect_scores(errors, d.threshold, d.bands, per_modality);
}

/// Flags log-density < density_epsilon; the reported score is the negated
/// log-density.
inline std::vector<AnomalyRecord> detect_density(const AnomalyDetector& d, const Matrix& latents,
                                                 const Matrix& per_modality = {}) {
  d.validate();
  auto scores = d.density.log_densities(latents);
  for (double& v : scores) v = -v;
  return detect_scores(scores, -d.density_epsilon, d.density_bands, per_modality);
}

// ---------------------------------------------------------------------------
// Class-weighted softmax classifier

/// w_c = n / (k n_c); classes absent from y get weight 1.
inline std::vector<double> inverse_frequency_weights(std::span<const int> y, std::size_t n_classes) {
  std::vector<double> counts(n_classes, 0.0);
  for (int v : y) {
    if (v < 0 || static_cast<std::size_t>(v) >= n_classes) {
      throw ValidationError("label " + std::to_string(v) + " outside 0.." + std::to_string(n_classes - 1));
    }
    counts[static_cast<std::size_t>(v)] += 1.0;
  }
  std::vector<double> w(n_classes, 1.0);
  const double n = static_cast<double>(y.size()), k = static_cast<double>(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c)
    if (counts[c] > 0.0) w[c] = n / (k * counts[c]);
  return w;
}

struct SoftmaxClassifier {
  Matrix weights;  // classes x input dim
  std::vector<double> bias;
  std::vector<double> class_weights;
  std::vector<std::string> class_labels;

  static SoftmaxClassifier make(std::size_t in_dim, std::vector<std::string> labels, Rng& rng) {
    if (labels.size() < 2) throw ValidationError("classifier needs at least 2 classes");
    SoftmaxClassifier c;
    c.weights = glorot_uniform(labels.size(), in_dim, rng);
    c.bias.assign(labels.size(), 0.0);
    c.class_weights.assign(labels.size(), 1.0);
    c.class_labels = std::move(labels);
    return c;
  }

  std::size_t classes() const { return class_labels.size(); }
  std::size_t in_dim() const { return weights.cols(); }

  void validate() const {
    if (weights.rows() != class_labels.size() || bias.size() != class_labels.size() ||
        class_weights.size() != class_labels.size()) {
      throw ShapeError("classifier: weights, bias and class weights must have one entry per class");
    }
    for (double w : class_weights)
      if (!(w > 0.0)) throw ValidationError("class weights must be > 0");
  }

  ParamList parameters() { return {weights.data(), std::span<double>(bias)}; }

  Matrix logits(const Matrix& x) const {
    if (x.cols() != in_dim()) {
      throw ShapeError("classifier expects " + std::to_string(in_dim()) + " features, got " +
                       std::to_string(x.cols()));
    }
    auto z = matmul_bt(x, weights);
    add_row_vector(z, bias);
    return z;
  }
};

struct LabeledData {
  Matrix x;
  std::vector<int> y;
};

inline std::size_t sample_count(const LabeledData& d) { return d.y.size(); }

/// Enhancement stack followed by the softmax head, trained jointly on
/// class-weighted cross-entropy  -sum w_{y_i} log p_i[y_i] / sum w_{y_i}.
struct ClassifierModel {
  Sequential enhancement;
  SoftmaxClassifier head;

  ParamList parameters() {
    auto p = enhancement.parameters();
    auto h = head.parameters();
    p.insert(p.end(), h.begin(), h.end());
    return p;
  }

  Matrix probabilities(const Matrix& x) const { return softmax_rows(head.logits(enhancement.forward(x))); }

  LossAndGrad loss_and_grad(const Matrix& x, std::span<const int> y) const {
    auto trace = enhancement.forward_trace(x);
    auto p = softmax_rows(head.logits(trace.output));
    double wsum = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto c = static_cast<std::size_t>(y[i]);
      const double w = head.class_weights[c];
      wsum += w;
      loss -= w * std::log(std::max(p(i, c), 1e-300));
    }
    loss /= wsum;
    // d loss / d logits = w_{y_i} (p_i - onehot_i) / sum w
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto c = static_cast<std::size_t>(y[i]);
      const double w = head.class_weights[c] / wsum;
      for (std::size_t k = 0; k < p.cols(); ++k) p(i, k) = w * (p(i, k) - (k == c ? 1.0 : 0.0));
    }
    auto gw = matmul_at(p, trace.output);
    auto gb = column_sums(p);
    auto [grads, gin] = enhancement.backward(trace, matmul(p, head.weights));
    grads.emplace_back(gw.data().begin(), gw.data().end());
    grads.push_back(std::move(gb));
    return {loss, std::move(grads)};
  }

  double loss(const Matrix& x, std::span<const int> y) const {
    auto p = probabilities(x);
    double wsum = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto c = static_cast<std::size_t>(y[i]);
      wsum += head.class_weights[c];
      loss -= head.class_weights[c] * std::log(std::max(p(i, c), 1e-300));
    }
    return loss / wsum;
  }

  LossAndGrad batch_loss_and_grad(const LabeledData& d, std::span<const std::size_t> idx) const {
    std::vector<int> y;
    y.reserve(idx.size());
    for (auto i : idx) y.push_back(d.y[i]);
    return loss_and_grad(select_rows(d.x, idx), y);
  }

  double dataset_loss(const LabeledData& d) const { return loss(d.x, d.y); }
};

namespace detail {

inline void check_labels(std::span<const int> y, std::size_t n_classes) {
  for (int v : y)
    if (v < 0 || static_cast<std::size_t>(v) >= n_classes) {
      throw ValidationError("unseen label index " + std::to_string(v) + " (classifier has " +
                            std::to_string(n_classes) + " classes)");
    }
}

}  // namespace detail

/// `class_weights` empty selects inverse-frequency weights from y.
inline History clf_train(ClassifierModel& model, const LabeledData& train_data, const LabeledData* val,
                         OptimizerKind kind, const TrainConfig& cfg,
                         std::optional<std::vector<double>> class_weights = std::nullopt) {
  detail::check_labels(train_data.y, model.head.classes());
  if (val != nullptr) detail::check_labels(val->y, model.head.classes());
  if (train_data.x.rows() != train_data.y.size()) throw ShapeError("clf_train: feature/label row mismatch");
  model.head.class_weights =
      class_weights ? *class_weights : inverse_frequency_weights(train_data.y, model.head.classes());
  model.head.validate();
  return train(model, train_data, val, kind, cfg);
}

struct Prediction {
  std::vector<int> labels;
  Matrix probabilities;
};

/// Argmax of the softmax probabilities; ties go to the lowest class index.
inline Prediction argmax_rows(Matrix probs) {
  Prediction p;
  p.labels.reserve(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto row = probs.row(r);
    p.labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  p.probabilities = std::move(probs);
  return p;
}

inline Prediction clf_predict(const ClassifierModel& model, const Matrix& x) {
  return argmax_rows(model.probabilities(x));
}

}  // namespace mmae
