#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmae/error.hpp"

namespace mmae {

/// Dense row-major matrix of doubles.  Samples are rows, features are
/// columns throughout the library.
///
/// A default-constructed Matrix is the empty 0x0 placeholder; every other
/// construction requires positive dimensions and finite values.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    check_dims();
    if (!std::isfinite(fill)) throw ValidationError("Matrix: non-finite fill value");
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_dims();
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw ValidationError("Matrix: non-finite value in data");
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    check_dims();
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      for (double v : r) {
        if (!std::isfinite(v)) throw ValidationError("Matrix: non-finite value in data");
        data_.push_back(v);
      }
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  static Matrix column_vector(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    if ((rows_ == 0) != (cols_ == 0) || (rows_ == 0 && !data_.empty())) {
      throw ShapeError("Matrix: dimensions must both be positive");
    }
    if (rows_ == 0) throw ShapeError("Matrix: dimensions must both be positive");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, std::string_view op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// a * b^T without materializing the transpose.
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

/// a^T * b.
inline Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at: " + a.shape_string() + "^T x " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto arow = a.row(r);
    auto brow = b.row(r);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const double ai = arow[i];
      if (ai == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) orow[j] += ai * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  return out;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "hadamard");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

/// Adds `v` to every row.
inline void add_row_vector(Matrix& m, std::span<const double> v) {
  if (v.size() != m.cols()) {
    throw ShapeError("add_row_vector: vector length " + std::to_string(v.size()) +
                     " vs matrix " + m.shape_string());
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < v.size(); ++c) row[c] += v[c];
  }
}

inline std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
  return out;
}

inline std::vector<double> column_means(const Matrix& m) {
  auto s = column_sums(m);
  for (double& v : s) v /= static_cast<double>(m.rows());
  return s;
}

/// Column-wise concatenation.  All blocks must share a row count.
inline Matrix hstack(std::span<const Matrix> blocks) {
  if (blocks.empty()) throw ShapeError("hstack: no blocks");
  const std::size_t rows = blocks.front().rows();
  std::size_t cols = 0;
  for (const auto& b : blocks) {
    if (b.rows() != rows) {
      throw ShapeError("hstack: row-count mismatch " + blocks.front().shape_string() + " vs " +
                       b.shape_string());
    }
    cols += b.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto orow = out.row(r);
    std::size_t off = 0;
    for (const auto& b : blocks) {
      auto brow = b.row(r);
      std::copy(brow.begin(), brow.end(), orow.begin() + static_cast<std::ptrdiff_t>(off));
      off += b.cols();
    }
  }
  return out;
}

/// Columns [begin, begin + count).
inline Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols() || count == 0) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + m.shape_string());
  }
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m.rows()) throw ShapeError("select_rows: index out of range");
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline Matrix select_cols(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(m.rows(), idx.size());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < idx.size(); ++j) out(r, j) = m(r, idx[j]);
  return out;
}

/// Squared L2 norm of each row.
inline std::vector<double> row_squared_norms(const Matrix& m) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (double v : m.row(r)) out[r] += v * v;
  return out;
}

/// Samples are rows; lets a bare Matrix serve as a training set.
inline std::size_t sample_count(const Matrix& m) { return m.rows(); }

// ---------------------------------------------------------------------------
// Activations

enum class Activation { sigmoid, relu, tanh, linear };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
  }
  return "linear";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "linear") return Activation::linear;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}

inline double activate(double x, Activation kind) {
  switch (kind) {
    case Activation::sigmoid:
      // Split form avoids exp overflow for large |x|.
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::linear: return x;
  }
  return x;
}

/// Derivative at the pre-activation value.  relu'(0) is 0.
inline double activate_grad(double x, Activation kind) {
  switch (kind) {
    case Activation::sigmoid: {
      const double s = activate(x, Activation::sigmoid);
      return s * (1.0 - s);
    }
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::linear: return 1.0;
  }
  return 1.0;
}

inline Matrix activate(const Matrix& x, Activation kind) {
  Matrix out = x;
  for (double& v : out.data()) v = activate(v, kind);
  return out;
}

inline Matrix activate_grad(const Matrix& x, Activation kind) {
  Matrix out = x;
  for (double& v : out.data()) v = activate_grad(v, kind);
  return out;
}

// ---------------------------------------------------------------------------
// Losses.  `target` is the reference x, `pred` the reconstruction z.  Both
// reduce by summing over features and averaging over rows.

enum class Loss { mse, bce };

inline std::string_view to_string(Loss l) { return l == Loss::mse ? "mse" : "bce"; }

inline Loss parse_loss(std::string_view s) {
  if (s == "mse") return Loss::mse;
  if (s == "bce") return Loss::bce;
  throw ValidationError("unknown loss '" + std::string(s) + "'");
}

inline constexpr double kBceEpsilon = 1e-12;

inline double mse_loss(const Matrix& target, const Matrix& pred) {
  detail::require_same_shape(target, pred, "mse_loss");
  double total = 0.0;
  for (std::size_t r = 0; r < target.rows(); ++r) {
    double row = 0.0;
    auto t = target.row(r);
    auto p = pred.row(r);
    for (std::size_t c = 0; c < t.size(); ++c) {
      const double d = t[c] - p[c];
      row += d * d;
    }
    total += row;
  }
  return total / static_cast<double>(target.rows());
}

/// d mse_loss / d pred.
inline Matrix mse_grad(const Matrix& target, const Matrix& pred) {
  detail::require_same_shape(target, pred, "mse_grad");
  Matrix g = pred;
  auto gd = g.data();
  auto td = target.data();
  const double scale = 2.0 / static_cast<double>(target.rows());
  for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = scale * (gd[i] - td[i]);
  return g;
}

inline double bce_loss(const Matrix& target, const Matrix& pred) {
  detail::require_same_shape(target, pred, "bce_loss");
  double total = 0.0;
  auto td = target.data();
  auto pd = pred.data();
  for (std::size_t i = 0; i < td.size(); ++i) {
    const double z = std::clamp(pd[i], kBceEpsilon, 1.0 - kBceEpsilon);
    total -= td[i] * std::log(z) + (1.0 - td[i]) * std::log(1.0 - z);
  }
  return total / static_cast<double>(target.rows());
}

/// d bce_loss / d pred, evaluated at the clamped prediction.
inline Matrix bce_grad(const Matrix& target, const Matrix& pred) {
  detail::require_same_shape(target, pred, "bce_grad");
  Matrix g = pred;
  auto gd = g.data();
  auto td = target.data();
  const double n = static_cast<double>(target.rows());
  for (std::size_t i = 0; i < gd.size(); ++i) {
    const double z = std::clamp(gd[i], kBceEpsilon, 1.0 - kBceEpsilon);
    gd[i] = (-td[i] / z + (1.0 - td[i]) / (1.0 - z)) / n;
  }
  return g;
}

inline double loss_value(Loss kind, const Matrix& target, const Matrix& pred) {
  return kind == Loss::mse ? mse_loss(target, pred) : bce_loss(target, pred);
}

inline Matrix loss_grad(Loss kind, const Matrix& target, const Matrix& pred) {
  return kind == Loss::mse ? mse_grad(target, pred) : bce_grad(target, pred);
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi).

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // column i is the eigenvector of values[i]
};

inline SymmetricEigen symmetric_eigen(const Matrix& sym, double tol = 1e-12,
                                      std::size_t max_sweeps = 100) {
  if (sym.rows() != sym.cols()) throw ShapeError("symmetric_eigen: non-square " + sym.shape_string());
  const std::size_t n = sym.rows();
  Matrix a = sym;
  Matrix v = Matrix::identity(n);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  for (std::size_t sweep = 0; sweep < max_sweeps && off_norm() >= tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

}  // namespace mmae
