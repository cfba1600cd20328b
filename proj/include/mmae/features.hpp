#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mmae/error.hpp"
#include "mmae/linalg.hpp"

namespace mmae {

// ---------------------------------------------------------------------------
// Window statistics

struct WindowStats {
  double mean = 0.0;
  double variance = 0.0;  // population (divide by n)
  double stddev = 0.0;
};

inline WindowStats stat_features(std::span<const double> window) {
  if (window.size() < 2) throw ValidationError("stat_features: window length must be >= 2");
  const double n = static_cast<double>(window.size());
  double mean = 0.0;
  for (double v : window) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : window) var += (v - mean) * (v - mean);
  var /= n;
  return {mean, var, std::sqrt(var)};
}

struct Correlation {
  double r = 0.0;
  bool degenerate = false;  // one input had zero variance; r reported as 0
};

inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  if (x.size() < 2) throw ValidationError("pearson: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

// ---------------------------------------------------------------------------
// FFT

using ComplexSample = std::complex<double>;

/// Iterative radix-2 Cooley-Tukey DFT, X[k] = sum_n x[n] e^{-2 pi i k n / N}.
inline std::vector<ComplexSample> fft_radix2(std::vector<ComplexSample> a) {
  const std::size_t n = a.size();
  if (n == 0 || !std::has_single_bit(n)) {
    throw ValidationError("fft_radix2: length " + std::to_string(n) + " is not a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Direct twiddles; a running product accumulates rounding error.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const ComplexSample w(std::cos(angle), std::sin(angle));
      for (std::size_t i = 0; i < n; i += len) {
        const ComplexSample u = a[i + k];
        const ComplexSample v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  return a;
}

/// Inverse via conjugate-forward-conjugate divided by N.
inline std::vector<ComplexSample> ifft_radix2(std::vector<ComplexSample> a) {
  for (auto& v : a) v = std::conj(v);
  a = fft_radix2(std::move(a));
  const double n = static_cast<double>(a.size());
  for (auto& v : a) v = std::conj(v) / n;
  return a;
}

/// Banded magnitude spectrum.  The window is zero-padded to the next power
/// of two N; the first max(1, N/2) magnitudes are averaged into `n_bins`
/// equal-width bands.
inline std::vector<double> fft_features(std::span<const double> window, std::size_t n_bins) {
  if (window.empty()) throw ValidationError("fft_features: empty window");
  if (n_bins == 0) throw ValidationError("fft_features: n_bins must be >= 1");
  const std::size_t n = std::bit_ceil(window.size());
  std::vector<ComplexSample> buf(n);
  for (std::size_t i = 0; i < window.size(); ++i) buf[i] = window[i];
  auto spec = fft_radix2(std::move(buf));
  const std::size_t m = std::max<std::size_t>(1, n / 2);
  std::vector<double> out(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    std::size_t lo = b * m / n_bins;
    std::size_t hi = (b + 1) * m / n_bins;
    if (hi <= lo) hi = lo + 1;  // more bands than spectrum lines
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += std::abs(spec[k]);
    out[b] = s / static_cast<double>(hi - lo);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Information measures, in bits

inline double shannon_entropy(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (c < 0.0 || !std::isfinite(c)) throw ValidationError("shannon_entropy: negative or non-finite count");
    total += c;
  }
  if (total <= 0.0) throw ValidationError("shannon_entropy: histogram is all zero");
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log2(p);
    }
  }
  return std::max(h, 0.0);
}

namespace detail {

struct JointMarginals {
  std::vector<double> rows;  // X
  std::vector<double> cols;  // Y
};

inline JointMarginals joint_marginals(const Matrix& joint) {
  JointMarginals m{std::vector<double>(joint.rows(), 0.0), std::vector<double>(joint.cols(), 0.0)};
  double total = 0.0;
  for (std::size_t i = 0; i < joint.rows(); ++i)
    for (std::size_t j = 0; j < joint.cols(); ++j) {
      const double c = joint(i, j);
      if (c < 0.0) throw ValidationError("joint histogram: negative count");
      m.rows[i] += c;
      m.cols[j] += c;
      total += c;
    }
  if (total <= 0.0) throw ValidationError("joint histogram: degenerate (all zero)");
  return m;
}

}  // namespace detail

/// Joint histogram with X on rows and Y on columns.
inline double mutual_information(const Matrix& joint) {
  auto m = detail::joint_marginals(joint);
  const double i = shannon_entropy(m.rows) + shannon_entropy(m.cols) - shannon_entropy(joint.data());
  return i < 0.0 ? std::max(i, -1e-12) : i;
}

/// H(X | Y) with X on rows and Y on columns.
inline double conditional_entropy(const Matrix& joint) {
  auto m = detail::joint_marginals(joint);
  return std::max(shannon_entropy(joint.data()) - shannon_entropy(m.cols), 0.0);
}

/// Equal-width bin index of each value; `bins` = 0 selects ceil(sqrt(n)).
inline std::vector<std::size_t> equal_width_bins(std::span<const double> x, std::size_t bins = 0) {
  if (x.empty()) throw ValidationError("equal_width_bins: empty input");
  if (bins == 0) bins = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(x.size()))));
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double width = (*hi - *lo) / static_cast<double>(bins);
  std::vector<std::size_t> out(x.size(), 0);
  if (width <= 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto b = static_cast<std::size_t>((x[i] - *lo) / width);
    out[i] = std::min(b, bins - 1);
  }
  return out;
}

inline Matrix joint_histogram(std::span<const double> x, std::span<const double> y,
                              std::size_t bins = 0) {
  if (x.size() != y.size()) throw ShapeError("joint_histogram: length mismatch");
  if (bins == 0) bins = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(x.size()))));
  auto bx = equal_width_bins(x, bins);
  auto by = equal_width_bins(y, bins);
  Matrix joint(bins, bins);
  for (std::size_t i = 0; i < x.size(); ++i) joint(bx[i], by[i]) += 1.0;
  return joint;
}

/// Appends per-row window features: [mean, variance, std] when `stats`,
/// then `fft_bins` banded magnitudes when fft_bins > 0.
inline Matrix extract_row_features(const Matrix& x, bool stats, std::size_t fft_bins) {
  std::vector<Matrix> blocks{x};
  if (stats) {
    if (x.cols() < 2) throw ValidationError("extract_row_features: stats need >= 2 columns");
    Matrix s(x.rows(), 3);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto w = stat_features(x.row(r));
      s(r, 0) = w.mean;
      s(r, 1) = w.variance;
      s(r, 2) = w.stddev;
    }
    blocks.push_back(std::move(s));
  }
  if (fft_bins > 0) {
    Matrix f(x.rows(), fft_bins);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto band = fft_features(x.row(r), fft_bins);
      std::copy(band.begin(), band.end(), f.row(r).begin());
    }
    blocks.push_back(std::move(f));
  }
  return hstack(blocks);
}

}  // namespace mmae
