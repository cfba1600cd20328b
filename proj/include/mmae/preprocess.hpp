#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "mmae/dataset.hpp"
#include "mmae/error.hpp"
#include "mmae/features.hpp"
#include "mmae/linalg.hpp"
#include "mmae/random.hpp"

namespace mmae {

// ---------------------------------------------------------------------------
// Cleaning

/// Drops exact duplicate rows (every modality cell, missing flag and label
/// equal), keeping the first occurrence in order.
inline MultiModalDataset dedupe(const MultiModalDataset& ds) {
  ds.validate();
  auto row_key = [&](std::size_t r) {
    std::string key = std::to_string(ds.labels[r]);
    for (const auto& m : ds.modalities) {
      key += '|';
      if (!m.values.empty()) {
        for (std::size_t c = 0; c < m.values.cols(); ++c) {
          const double v = m.values(r, c);
          key.append(reinterpret_cast<const char*>(&v), sizeof v);
          key += m.is_missing(r, c) ? 'm' : 'v';
        }
      }
      for (const auto& col : m.categorical) {
        key += std::to_string(col.values[r].size());
        key += ':';
        key += col.values[r];
      }
    }
    return key;
  };
  std::unordered_set<std::string> seen;
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < ds.size(); ++r)
    if (seen.insert(row_key(r)).second) keep.push_back(r);
  return ds.subset(keep);
}

enum class ImputeStrategy { mean, median };

inline std::string_view to_string(ImputeStrategy s) {
  return s == ImputeStrategy::mean ? "mean" : "median";
}

inline ImputeStrategy parse_impute(std::string_view s) {
  if (s == "mean") return ImputeStrategy::mean;
  if (s == "median") return ImputeStrategy::median;
  throw ValidationError("unknown impute strategy '" + std::string(s) + "'");
}

/// Per-column statistic over non-missing cells.
inline std::vector<double> fit_impute(const Modality& m, ImputeStrategy strategy) {
  std::vector<double> fills(m.values.empty() ? 0 : m.values.cols());
  for (std::size_t c = 0; c < fills.size(); ++c) {
    std::vector<double> present;
    for (std::size_t r = 0; r < m.values.rows(); ++r)
      if (!m.is_missing(r, c)) present.push_back(m.values(r, c));
    if (present.empty()) {
      throw ValidationError("unimputable column '" +
                            (c < m.columns.size() ? m.columns[c] : std::to_string(c)) +
                            "' in modality '" + m.name + "': every value is missing");
    }
    if (strategy == ImputeStrategy::mean) {
      fills[c] = std::accumulate(present.begin(), present.end(), 0.0) / static_cast<double>(present.size());
    } else {
      std::sort(present.begin(), present.end());
      const std::size_t n = present.size();
      fills[c] = n % 2 ? present[n / 2] : 0.5 * (present[n / 2 - 1] + present[n / 2]);
    }
  }
  return fills;
}

inline void apply_impute(Modality& m, std::span<const double> fills) {
  if (m.missing.empty()) return;
  for (std::size_t r = 0; r < m.values.rows(); ++r)
    for (std::size_t c = 0; c < m.values.cols(); ++c)
      if (m.is_missing(r, c)) m.values(r, c) = fills[c];
  m.missing.clear();
}

inline MultiModalDataset impute(MultiModalDataset ds, ImputeStrategy strategy) {
  for (auto& m : ds.modalities) {
    if (m.has_missing()) apply_impute(m, fit_impute(m, strategy));
    m.missing.clear();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Scaling and encoding

struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
};

inline ScalerParams minmax_fit(const Matrix& train) {
  ScalerParams p{std::vector<double>(train.row(0).begin(), train.row(0).end()),
                 std::vector<double>(train.row(0).begin(), train.row(0).end())};
  for (std::size_t r = 1; r < train.rows(); ++r)
    for (std::size_t c = 0; c < train.cols(); ++c) {
      p.min[c] = std::min(p.min[c], train(r, c));
      p.max[c] = std::max(p.max[c], train(r, c));
    }
  return p;
}

/// (x - min) / (max - min); a constant training feature maps to 0.
inline Matrix minmax_transform(const Matrix& x, const ScalerParams& p) {
  if (x.cols() != p.min.size()) {
    throw ShapeError("minmax_transform: " + std::to_string(x.cols()) + " columns, scaler fitted on " +
                     std::to_string(p.min.size()));
  }
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double range = p.max[c] - p.min[c];
      out(r, c) = range > 0.0 ? (x(r, c) - p.min[c]) / range : 0.0;
    }
  return out;
}

inline Matrix minmax_inverse(const Matrix& x, const ScalerParams& p) {
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = p.min[c] + x(r, c) * (p.max[c] - p.min[c]);
  return out;
}

/// Sorted distinct non-empty categories.
inline std::vector<std::string> build_vocabulary(std::span<const std::string> values) {
  std::set<std::string> s;
  for (const auto& v : values)
    if (!v.empty()) s.insert(v);
  return {s.begin(), s.end()};
}

/// One column per category; unknown or missing values give an all-zero row.
inline Matrix onehot_encode(std::span<const std::string> values,
                            std::span<const std::string> vocabulary) {
  if (vocabulary.empty()) throw ValidationError("onehot_encode: empty vocabulary");
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) index.emplace(vocabulary[i], i);
  Matrix out(values.size(), vocabulary.size());
  for (std::size_t r = 0; r < values.size(); ++r) {
    auto it = index.find(values[r]);
    if (it != index.end()) out(r, it->second) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature masks and filters

struct FeatureMask {
  std::vector<bool> kept;
  std::string provenance = "none";

  static FeatureMask all(std::size_t n, std::string provenance = "none") {
    return {std::vector<bool>(n, true), std::move(provenance)};
  }

  std::size_t kept_count() const { return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true)); }

  std::vector<std::size_t> kept_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < kept.size(); ++i)
      if (kept[i]) idx.push_back(i);
    return idx;
  }

  void validate() const {
    if (kept_count() == 0) throw ValidationError("feature selection (" + provenance + ") kept no features");
  }
};

/// Kept columns in their original order.
inline Matrix apply_mask(const Matrix& x, const FeatureMask& mask) {
  if (mask.kept.size() != x.cols()) {
    throw ShapeError("apply_mask: mask over " + std::to_string(mask.kept.size()) + " features, matrix has " +
                     std::to_string(x.cols()));
  }
  mask.validate();
  auto idx = mask.kept_indices();
  return select_cols(x, idx);
}

inline constexpr double kDefaultVarianceThreshold = 0.8;

/// Keeps features whose population variance is >= threshold.
inline FeatureMask variance_filter(const Matrix& x, double threshold = kDefaultVarianceThreshold) {
  if (threshold < 0.0) throw ValidationError("variance_filter: threshold must be >= 0");
  FeatureMask mask{std::vector<bool>(x.cols(), false), "variance"};
  auto means = column_means(x);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double v = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) v += (x(r, c) - means[c]) * (x(r, c) - means[c]);
    mask.kept[c] = v / static_cast<double>(x.rows()) >= threshold;
  }
  if (mask.kept_count() == 0) {
    throw ValidationError("variance_filter: no feature reaches variance " + std::to_string(threshold));
  }
  return mask;
}

/// For every feature pair with |r| > pair_threshold (visited in ascending
/// index order, skipping already-dropped features) drops the member whose
/// |r| against the target is smaller; ties drop the higher index.
inline FeatureMask correlation_filter(const Matrix& x, std::span<const double> y,
                                      double pair_threshold = 0.9) {
  if (!(pair_threshold > 0.0 && pair_threshold <= 1.0)) {
    throw ValidationError("correlation_filter: pair_threshold must be in (0, 1]");
  }
  if (y.size() != x.rows()) throw ShapeError("correlation_filter: label length mismatch");
  const std::size_t d = x.cols();
  std::vector<std::vector<double>> cols(d);
  for (std::size_t c = 0; c < d; ++c) cols[c] = x.column(c);
  std::vector<double> target_r(d);
  for (std::size_t c = 0; c < d; ++c) target_r[c] = std::abs(pearson(cols[c], y).r);
  FeatureMask mask = FeatureMask::all(d, "correlation");
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d && mask.kept[i]; ++j) {
      if (!mask.kept[j]) continue;
      if (std::abs(pearson(cols[i], cols[j]).r) <= pair_threshold) continue;
      if (target_r[j] > target_r[i]) mask.kept[i] = false;
      else mask.kept[j] = false;
    }
  }
  mask.validate();
  return mask;
}

// ---------------------------------------------------------------------------
// Metaheuristic selection

using MaskFitness = std::function<double(const std::vector<bool>&)>;

struct SelectionResult {
  FeatureMask mask;
  double fitness = 0.0;
  std::vector<double> best_history;  // best-ever fitness after each generation/iteration
};

struct GaConfig {
  std::size_t population = 20;
  std::size_t generations = 30;
  double crossover_rate = 0.9;
  double mutation_rate = 0.05;
  std::uint64_t seed = 42;
};

namespace detail {

inline void repair_mask(std::vector<bool>& m, Rng& rng) {
  if (std::find(m.begin(), m.end(), true) == m.end()) m[uniform_index(rng, m.size())] = true;
}

inline std::vector<bool> random_mask(std::size_t n, Rng& rng) {
  std::vector<bool> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = uniform01(rng) < 0.5;
  repair_mask(m, rng);
  return m;
}

}  // namespace detail

/// Bitmask GA: tournament (k = 2) selection, single-point crossover,
/// per-bit mutation, all-zero repair.  Returns the best mask ever seen.
inline SelectionResult ga_select(std::size_t n_features, const MaskFitness& fitness,
                                 const GaConfig& cfg = {}) {
  if (cfg.population < 2) throw ValidationError("ga_select: population must be >= 2");
  if (n_features == 0) throw ValidationError("ga_select: no features");
  Rng rng = make_rng(cfg.seed, "ga");
  std::vector<std::vector<bool>> pop(cfg.population);
  std::vector<double> fit(cfg.population);
  SelectionResult best;
  best.fitness = -INFINITY;
  auto consider = [&](const std::vector<bool>& m, double f) {
    if (f > best.fitness) {
      best.fitness = f;
      best.mask.kept = m;
    }
  };
  for (std::size_t i = 0; i < cfg.population; ++i) {
    pop[i] = detail::random_mask(n_features, rng);
    fit[i] = fitness(pop[i]);
    consider(pop[i], fit[i]);
  }
  auto tournament = [&]() -> const std::vector<bool>& {
    const std::size_t a = uniform_index(rng, pop.size());
    const std::size_t b = uniform_index(rng, pop.size());
    return fit[a] >= fit[b] ? pop[a] : pop[b];
  };
  for (std::size_t g = 0; g < cfg.generations; ++g) {
    std::vector<std::vector<bool>> next;
    next.reserve(cfg.population);
    while (next.size() < cfg.population) {
      auto a = tournament();
      auto b = tournament();
      if (n_features > 1 && uniform01(rng) < cfg.crossover_rate) {
        const std::size_t cut = 1 + uniform_index(rng, n_features - 1);
        for (std::size_t k = cut; k < n_features; ++k) {
          const bool t = a[k];
          a[k] = b[k];
          b[k] = t;
        }
      }
      for (auto* child : {&a, &b}) {
        for (std::size_t k = 0; k < n_features; ++k)
          if (uniform01(rng) < cfg.mutation_rate) (*child)[k] = !(*child)[k];
        detail::repair_mask(*child, rng);
        if (next.size() < cfg.population) next.push_back(*child);
      }
    }
    pop = std::move(next);
    for (std::size_t i = 0; i < pop.size(); ++i) {
      fit[i] = fitness(pop[i]);
      consider(pop[i], fit[i]);
    }
    best.best_history.push_back(best.fitness);
  }
  best.mask.provenance = "ga";
  return best;
}

struct HarmonyConfig {
  std::size_t memory_size = 10;
  std::size_t iterations = 300;
  double hmcr = 0.9;
  double par = 0.3;
  std::uint64_t seed = 42;
};

/// Harmony search over bitmasks.  Each bit of a new harmony is taken from a
/// random memory entry with probability hmcr (then flipped with probability
/// par), otherwise drawn uniformly.  The worst memory entry is replaced when
/// the new harmony beats it.
inline SelectionResult harmony_select(std::size_t n_features, const MaskFitness& fitness,
                                      const HarmonyConfig& cfg = {}) {
  if (cfg.memory_size < 1) throw ValidationError("harmony_select: memory_size must be >= 1");
  if (cfg.hmcr < 0 || cfg.hmcr > 1 || cfg.par < 0 || cfg.par > 1) {
    throw ValidationError("harmony_select: hmcr and par must lie in [0, 1]");
  }
  if (n_features == 0) throw ValidationError("harmony_select: no features");
  Rng rng = make_rng(cfg.seed, "harmony");
  std::vector<std::vector<bool>> memory(cfg.memory_size);
  std::vector<double> fit(cfg.memory_size);
  SelectionResult best;
  best.fitness = -INFINITY;
  for (std::size_t i = 0; i < cfg.memory_size; ++i) {
    memory[i] = detail::random_mask(n_features, rng);
    fit[i] = fitness(memory[i]);
    if (fit[i] > best.fitness) {
      best.fitness = fit[i];
      best.mask.kept = memory[i];
    }
  }
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<bool> h(n_features);
    for (std::size_t k = 0; k < n_features; ++k) {
      if (uniform01(rng) < cfg.hmcr) {
        h[k] = memory[uniform_index(rng, memory.size())][k];
        if (uniform01(rng) < cfg.par) h[k] = !h[k];
      } else {
        h[k] = uniform01(rng) < 0.5;
      }
    }
    detail::repair_mask(h, rng);
    const double f = fitness(h);
    const auto worst = static_cast<std::size_t>(std::min_element(fit.begin(), fit.end()) - fit.begin());
    if (f > fit[worst]) {
      memory[worst] = h;
      fit[worst] = f;
    }
    if (f > best.fitness) {
      best.fitness = f;
      best.mask.kept = h;
    }
    best.best_history.push_back(best.fitness);
  }
  best.mask.provenance = "harmony";
  return best;
}

/// Default mask fitness: validation accuracy of a one-layer softmax probe
/// trained on a seeded 70/30 split of (x, y), minus 0.01 x fraction of
/// features kept.  The probe is full-batch gradient descent.
inline MaskFitness probe_fitness(const Matrix& x, std::span<const int> y, std::size_t n_classes,
                                 std::uint64_t seed = 42, std::size_t iterations = 60,
                                 double learning_rate = 0.5) {
  if (y.size() != x.rows()) throw ShapeError("probe_fitness: label length mismatch");
  if (x.rows() < 4) throw ValidationError("probe_fitness: need at least 4 samples");
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "probe");
  shuffle(order, rng);
  const std::size_t n_fit = std::max<std::size_t>(1, order.size() * 7 / 10);
  std::vector<std::size_t> fit_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_fit));
  std::vector<std::size_t> val_idx(order.begin() + static_cast<std::ptrdiff_t>(n_fit), order.end());
  auto xf = select_rows(x, fit_idx);
  auto xv = select_rows(x, val_idx);
  std::vector<int> yf, yv;
  for (auto i : fit_idx) yf.push_back(y[i]);
  for (auto i : val_idx) yv.push_back(y[i]);
  const double d = static_cast<double>(x.cols());

  return [=](const std::vector<bool>& kept) {
    FeatureMask m{kept, "probe"};
    auto a = apply_mask(xf, m);
    auto b = apply_mask(xv, m);
    Matrix w(n_classes, a.cols());
    std::vector<double> bias(n_classes, 0.0);
    const double n = static_cast<double>(a.rows());
    for (std::size_t it = 0; it < iterations; ++it) {
      auto logits = matmul_bt(a, w);
      add_row_vector(logits, bias);
      auto p = softmax_rows(logits);
      for (std::size_t r = 0; r < p.rows(); ++r) p(r, static_cast<std::size_t>(yf[r])) -= 1.0;
      auto gw = matmul_at(p, a);
      auto gb = column_sums(p);
      for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] -= learning_rate * gw.data()[i] / n;
      for (std::size_t k = 0; k < n_classes; ++k) bias[k] -= learning_rate * gb[k] / n;
    }
    auto logits = matmul_bt(b, w);
    add_row_vector(logits, bias);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      auto row = logits.row(r);
      const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += pred == yv[r];
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(logits.rows());
    return acc - 0.01 * static_cast<double>(m.kept_count()) / d;
  };
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then val = floor(n * r_val) and test = floor(n * r_test)
/// rows; train takes the remainder.  Only a val ratio of exactly 0 may
/// leave a split empty.  Order in the permutation: train, val,
/// test.
inline SplitIndices split_indices(std::size_t n, const SplitRatios& r, std::uint64_t seed) {
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ValidationError("split: ratios must be non-negative and sum to 1");
  }
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r.val));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r.test));
  // An explicit val ratio of 0 selects a train/test split without validation.
  if ((n_val == 0 && r.val != 0.0) || n_test == 0 || n_val + n_test >= n) {
    throw ValidationError("split: ratios (" + std::to_string(r.train) + ", " + std::to_string(r.val) +
                          ", " + std::to_string(r.test) + ") leave an empty split for n=" +
                          std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "split");
  shuffle(order, rng);
  const std::size_t n_train = n - n_val - n_test;
  auto it = order.begin();
  SplitIndices s;
  s.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(it + static_cast<std::ptrdiff_t>(n_train), it + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

inline std::tuple<MultiModalDataset, MultiModalDataset, MultiModalDataset> split(
    const MultiModalDataset& ds, const SplitRatios& r, std::uint64_t seed) {
  auto s = split_indices(ds.size(), r, seed);
  return {ds.subset(s.train), ds.subset(s.val), ds.subset(s.test)};
}

// ---------------------------------------------------------------------------
// Fitted per-modality chain: impute -> one-hot -> mask -> min-max.

enum class SelectionMethod { none, variance, correlation, ga, harmony };

inline std::string_view to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::none: return "none";
    case SelectionMethod::variance: return "variance";
    case SelectionMethod::correlation: return "correlation";
    case SelectionMethod::ga: return "ga";
    case SelectionMethod::harmony: return "harmony";
  }
  return "none";
}

inline SelectionMethod parse_selection(std::string_view s) {
  for (auto m : {SelectionMethod::none, SelectionMethod::variance, SelectionMethod::correlation,
                 SelectionMethod::ga, SelectionMethod::harmony})
    if (to_string(m) == s) return m;
  throw ValidationError("unknown selection method '" + std::string(s) + "'");
}

struct PreprocessOptions {
  ImputeStrategy impute = ImputeStrategy::mean;
  SelectionMethod selection = SelectionMethod::none;
  double variance_threshold = kDefaultVarianceThreshold;
  double correlation_threshold = 0.9;
  GaConfig ga;
  HarmonyConfig harmony;
  std::uint64_t seed = 42;
};

struct ModalityPreprocessor {
  std::string name;
  std::vector<std::string> columns;  // numeric column names expected on input
  std::vector<double> impute_fill;
  std::vector<std::string> categorical_columns;
  std::vector<std::vector<std::string>> vocabularies;
  FeatureMask mask;
  ScalerParams scaler;

  std::size_t output_dim() const { return mask.kept_count(); }

  /// Numeric block followed by one-hot blocks, before masking.
  Matrix encode(const Modality& m) const {
    if (m.columns != columns) {
      throw ValidationError("modality '" + m.name + "': numeric columns differ from the fitted schema");
    }
    if (m.categorical.size() != categorical_columns.size()) {
      throw ValidationError("modality '" + m.name + "': categorical columns differ from the fitted schema");
    }
    std::vector<Matrix> blocks;
    if (!columns.empty()) {
      Modality filled = m;
      apply_impute(filled, impute_fill);
      blocks.push_back(std::move(filled.values));
    }
    for (std::size_t k = 0; k < categorical_columns.size(); ++k) {
      if (m.categorical[k].name != categorical_columns[k]) {
        throw ValidationError("modality '" + m.name + "': categorical column '" + m.categorical[k].name +
                              "' does not match fitted '" + categorical_columns[k] + "'");
      }
      blocks.push_back(onehot_encode(m.categorical[k].values, vocabularies[k]));
    }
    if (blocks.empty()) throw ValidationError("modality '" + m.name + "' has no columns");
    return hstack(blocks);
  }

  Matrix transform(const Modality& m) const { return minmax_transform(apply_mask(encode(m), mask), scaler); }
};

inline ModalityPreprocessor fit_modality_preprocessor(const Modality& m, std::span<const int> labels,
                                                      std::size_t n_classes, const PreprocessOptions& opt,
                                                      std::size_t modality_index) {
  ModalityPreprocessor p;
  p.name = m.name;
  p.columns = m.columns;
  p.impute_fill = fit_impute(m, opt.impute);
  for (const auto& c : m.categorical) {
    p.categorical_columns.push_back(c.name);
    auto vocab = build_vocabulary(c.values);
    if (vocab.empty()) throw ValidationError("categorical column '" + c.name + "' has no values");
    p.vocabularies.push_back(std::move(vocab));
  }
  p.mask = FeatureMask::all(0);
  Matrix enc = p.encode(m);
  std::vector<double> y(labels.begin(), labels.end());
  switch (opt.selection) {
    case SelectionMethod::none: p.mask = FeatureMask::all(enc.cols()); break;
    case SelectionMethod::variance: p.mask = variance_filter(enc, opt.variance_threshold); break;
    case SelectionMethod::correlation: p.mask = correlation_filter(enc, y, opt.correlation_threshold); break;
    case SelectionMethod::ga: {
      auto cfg = opt.ga;
      cfg.seed = derive_seed(opt.seed, "ga", modality_index);
      auto scaled = minmax_transform(enc, minmax_fit(enc));
      p.mask = ga_select(enc.cols(), probe_fitness(scaled, labels, n_classes, cfg.seed), cfg).mask;
      break;
    }
    case SelectionMethod::harmony: {
      auto cfg = opt.harmony;
      cfg.seed = derive_seed(opt.seed, "harmony", modality_index);
      auto scaled = minmax_transform(enc, minmax_fit(enc));
      p.mask = harmony_select(enc.cols(), probe_fitness(scaled, labels, n_classes, cfg.seed), cfg).mask;
      break;
    }
  }
  p.scaler = minmax_fit(apply_mask(enc, p.mask));
  return p;
}

struct Preprocessor {
  std::vector<ModalityPreprocessor> modalities;

  std::vector<std::size_t> output_dims() const {
    std::vector<std::size_t> d;
    for (const auto& m : modalities) d.push_back(m.output_dim());
    return d;
  }

  std::vector<Matrix> transform(const MultiModalDataset& ds) const {
    ds.validate();
    if (ds.modalities.size() != modalities.size()) {
      throw ValidationError("dataset has " + std::to_string(ds.modalities.size()) +
                            " modalities, preprocessing was fitted on " + std::to_string(modalities.size()));
    }
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      if (ds.modalities[i].name != modalities[i].name) {
        throw ValidationError("modality " + std::to_string(i) + " is '" + ds.modalities[i].name +
                              "', expected '" + modalities[i].name + "'");
      }
      out.push_back(modalities[i].transform(ds.modalities[i]));
    }
    return out;
  }
};

/// Fits every statistic on `train` only.
inline Preprocessor fit_preprocessor(const MultiModalDataset& train, const PreprocessOptions& opt = {}) {
  train.validate();
  Preprocessor p;
  for (std::size_t i = 0; i < train.modalities.size(); ++i) {
    p.modalities.push_back(
        fit_modality_preprocessor(train.modalities[i], train.labels, train.n_classes(), opt, i));
  }
  return p;
}

}  // namespace mmae
