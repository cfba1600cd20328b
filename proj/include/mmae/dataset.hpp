#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmae/error.hpp"
#include "mmae/linalg.hpp"

namespace mmae {

/// Raw categorical column; an empty string marks a missing cell.
struct CategoricalColumn {
  std::string name;
  std::vector<std::string> values;
};

/// One modality: numeric columns plus optional categorical columns.
/// Missing numeric cells are flagged in `missing` (row-major, same shape as
/// `values`) and hold 0 in `values`; an empty mask means nothing is missing.
/// A modality without numeric columns has an empty `values` matrix.
struct Modality {
  std::string name;
  std::vector<std::string> columns;
  Matrix values;
  std::vector<std::uint8_t> missing;
  std::vector<CategoricalColumn> categorical;

  std::size_t rows() const {
    if (!values.empty()) return values.rows();
    return categorical.empty() ? 0 : categorical.front().values.size();
  }

  bool is_missing(std::size_t r, std::size_t c) const {
    return !missing.empty() && missing[r * values.cols() + c] != 0;
  }

  bool has_missing() const {
    for (auto m : missing)
      if (m) return true;
    return false;
  }
};

/// Aligned modalities with one integer label per row.  labels[i] indexes
/// label_names; label index 0 is the normal class.
struct MultiModalDataset {
  std::vector<Modality> modalities;
  std::vector<int> labels;
  std::vector<std::string> label_names;

  std::size_t size() const { return labels.size(); }
  std::size_t n_classes() const { return label_names.size(); }

  void validate() const {
    if (modalities.empty()) throw ValidationError("dataset has no modalities");
    for (const auto& m : modalities) {
      if (m.rows() != labels.size()) {
        throw ValidationError("modality '" + m.name + "' has " + std::to_string(m.rows()) +
                              " rows, labels have " + std::to_string(labels.size()));
      }
      for (const auto& c : m.categorical)
        if (c.values.size() != labels.size())
          throw ValidationError("categorical column '" + c.name + "' length mismatch");
    }
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= label_names.size())
        throw ValidationError("label index out of range");
  }

  /// Numeric matrices in modality order.
  std::vector<Matrix> matrices() const {
    std::vector<Matrix> out;
    out.reserve(modalities.size());
    for (const auto& m : modalities) out.push_back(m.values);
    return out;
  }

  MultiModalDataset subset(std::span<const std::size_t> idx) const {
    MultiModalDataset out;
    out.label_names = label_names;
    out.labels.reserve(idx.size());
    for (auto i : idx) out.labels.push_back(labels.at(i));
    for (const auto& m : modalities) {
      Modality s;
      s.name = m.name;
      s.columns = m.columns;
      if (!m.values.empty() && !idx.empty()) s.values = select_rows(m.values, idx);
      if (!m.missing.empty()) {
        const std::size_t c = m.values.cols();
        s.missing.reserve(idx.size() * c);
        for (auto i : idx)
          s.missing.insert(s.missing.end(), m.missing.begin() + static_cast<std::ptrdiff_t>(i * c),
                           m.missing.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
      }
      for (const auto& col : m.categorical) {
        CategoricalColumn cc{col.name, {}};
        cc.values.reserve(idx.size());
        for (auto i : idx) cc.values.push_back(col.values.at(i));
        s.categorical.push_back(std::move(cc));
      }
      out.modalities.push_back(std::move(s));
    }
    return out;
  }

  /// Label vector as doubles, for correlation-style statistics.
  std::vector<double> label_values() const { return {labels.begin(), labels.end()}; }
};

}  // namespace mmae
