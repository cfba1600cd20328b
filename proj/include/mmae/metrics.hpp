#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmae/error.hpp"
#include "mmae/linalg.hpp"

namespace mmae {

/// counts[i][j] = samples with true label i predicted as j.
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  std::size_t classes() const { return counts.size(); }

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts)
      for (auto c : row) t += c;
    return t;
  }
};

inline ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred,
                                 std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) {
    throw ShapeError("confusion: " + std::to_string(y_true.size()) + " labels vs " +
                     std::to_string(y_pred.size()) + " predictions");
  }
  ConfusionMatrix cm{std::vector<std::vector<std::size_t>>(n_classes, std::vector<std::size_t>(n_classes, 0))};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= n_classes || static_cast<std::size_t>(p) >= n_classes) {
      throw ValidationError("confusion: label " + std::to_string(t < 0 || static_cast<std::size_t>(t) >= n_classes ? t : p) +
                            " outside 0.." + std::to_string(n_classes - 1));
    }
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

/// macro: unweighted class mean; weighted: mean weighted by true-class
/// support; binary: class 1 treated as the positive class.
enum class Averaging { macro, weighted, binary };

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct Prf {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace detail

inline std::vector<ClassScores> per_class_scores(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  std::vector<ClassScores> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(cm.counts[c][c]), pred = 0.0, actual = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
      pred += static_cast<double>(cm.counts[o][c]);
      actual += static_cast<double>(cm.counts[c][o]);
    }
    auto& s = out[c];
    s.precision = detail::safe_ratio(tp, pred);
    s.recall = detail::safe_ratio(tp, actual);
    s.f1 = detail::safe_ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
    s.support = static_cast<std::size_t>(actual);
  }
  return out;
}

inline Prf prf(const ConfusionMatrix& cm, Averaging averaging = Averaging::macro) {
  const std::size_t total = cm.total();
  if (total == 0) throw ValidationError("prf: empty confusion matrix");
  Prf out;
  std::size_t diag = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) diag += cm.counts[c][c];
  out.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  auto scores = per_class_scores(cm);
  if (averaging == Averaging::binary) {
    if (cm.classes() != 2) throw ValidationError("prf: binary averaging needs exactly 2 classes");
    out.precision = scores[1].precision;
    out.recall = scores[1].recall;
    out.f1 = scores[1].f1;
    return out;
  }
  for (const auto& s : scores) {
    const double w = averaging == Averaging::macro
                         ? 1.0 / static_cast<double>(scores.size())
                         : static_cast<double>(s.support) / static_cast<double>(total);
    out.precision += w * s.precision;
    out.recall += w * s.recall;
    out.f1 += w * s.f1;
  }
  return out;
}

/// Area under the ROC curve for `positive` scores ranked high.  Equal scores
/// move FPR and TPR together, which equals the tie-adjusted Mann-Whitney U.
inline double roc_auc(std::span<const double> scores, std::span<const int> y_true) {
  if (scores.size() != y_true.size()) throw ShapeError("roc_auc: length mismatch");
  std::size_t n_pos = 0;
  for (int y : y_true) n_pos += y != 0;
  const std::size_t n_neg = y_true.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("roc_auc: undefined with a single class present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0.0, tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    double dtp = 0.0, dfp = 0.0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (y_true[order[i]] != 0 ? dtp : dfp) += 1.0;
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
  }
  return area / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// One-vs-rest AUC averaged over classes present with both outcomes;
/// probs has one column per class.
inline double macro_auc_ovr(const Matrix& probs, std::span<const int> y_true) {
  if (probs.rows() != y_true.size()) throw ShapeError("macro_auc_ovr: length mismatch");
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < probs.cols(); ++c) {
    std::vector<int> bin(y_true.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) pos += bin[i] = y_true[i] == static_cast<int>(c);
    if (pos == 0 || pos == y_true.size()) continue;
    auto col = probs.column(c);
    sum += roc_auc(col, bin);
    ++used;
  }
  if (used == 0) throw ValidationError("macro_auc_ovr: undefined with a single class present");
  return sum / static_cast<double>(used);
}

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc_roc = 0.0;
};

/// Binary scoring (class 1 positive) for two classes, macro otherwise.
inline Averaging default_averaging(std::size_t n_classes) {
  return n_classes == 2 ? Averaging::binary : Averaging::macro;
}

/// Label metrics plus one-vs-rest macro AUC over the class probabilities.
inline MetricReport classification_report(std::span<const int> y_true, std::span<const int> y_pred,
                                          const Matrix& probs) {
  const auto k = probs.cols();
  auto m = prf(confusion(y_true, y_pred, k), default_averaging(k));
  return {m.accuracy, m.precision, m.recall, m.f1, macro_auc_ovr(probs, y_true)};
}

/// Normal (0) vs anomalous (any other label) scoring of detector flags;
/// AUC ranks the raw anomaly scores.
inline MetricReport detection_report(std::span<const int> y_true, std::span<const int> flagged,
                                     std::span<const double> scores) {
  std::vector<int> truth(y_true.size());
  for (std::size_t i = 0; i < y_true.size(); ++i) truth[i] = y_true[i] != 0;
  auto m = prf(confusion(truth, flagged, 2), Averaging::binary);
  return {m.accuracy, m.precision, m.recall, m.f1, roc_auc(scores, truth)};
}

}  // namespace mmae
