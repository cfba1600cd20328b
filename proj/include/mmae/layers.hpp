#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mmae/error.hpp"
#include "mmae/linalg.hpp"
#include "mmae/random.hpp"

namespace mmae {

/// Views onto a model's trainable tensors, in a fixed order.
using ParamList = std::vector<std::span<double>>;
/// Gradients aligned with a ParamList.
using GradList = std::vector<std::vector<double>>;

struct LossAndGrad {
  double loss = 0.0;
  GradList grads;
};

/// Glorot-uniform weights, zero bias.
inline Matrix glorot_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_out, fan_in);
  for (double& v : w.data()) v = uniform(rng, -limit, limit);
  return w;
}

// ---------------------------------------------------------------------------
// Dense

/// Fully connected layer: output = act(x W^T + b).  `weights` is out x in.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;
  Activation activation = Activation::linear;

  static DenseLayer make(std::size_t in_dim, std::size_t out_dim, Activation act, Rng& rng) {
    return {glorot_uniform(out_dim, in_dim, rng), std::vector<double>(out_dim, 0.0), act};
  }

  static DenseLayer identity(std::size_t dim, Activation act = Activation::linear) {
    return {Matrix::identity(dim), std::vector<double>(dim, 0.0), act};
  }

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }

  ParamList parameters() { return {weights.data(), bias}; }
};

struct DenseCache {
  Matrix input;
  Matrix pre;
};

struct DenseOutput {
  Matrix output;
  DenseCache cache;
};

struct DenseGrads {
  Matrix weights;
  std::vector<double> bias;
  Matrix input;
};

inline DenseOutput dense_forward(const DenseLayer& layer, const Matrix& x) {
  if (x.cols() != layer.in_dim()) {
    throw ShapeError("dense_forward: input " + x.shape_string() + " vs weights " +
                     layer.weights.shape_string());
  }
  Matrix pre = matmul_bt(x, layer.weights);
  add_row_vector(pre, layer.bias);
  Matrix out = activate(pre, layer.activation);
  return {std::move(out), {x, std::move(pre)}};
}

inline DenseGrads dense_backward(const DenseLayer& layer, const DenseCache& cache,
                                 const Matrix& upstream) {
  if (upstream.rows() != cache.pre.rows() || upstream.cols() != cache.pre.cols()) {
    throw ShapeError("dense_backward: upstream " + upstream.shape_string() + " vs output " +
                     cache.pre.shape_string());
  }
  Matrix delta = hadamard(upstream, activate_grad(cache.pre, layer.activation));
  return {matmul_at(delta, cache.input), column_sums(delta), matmul(delta, layer.weights)};
}

// ---------------------------------------------------------------------------
// Conv1D

/// Valid 1-D cross-correlation, stride 1.  A sequence is a (length x
/// in_channels) matrix; filters are stored [filter][tap][channel].
struct Conv1DLayer {
  std::size_t n_filters = 0;
  std::size_t kernel_width = 0;
  std::size_t in_channels = 0;
  std::vector<double> filters;
  std::vector<double> bias;
  Activation activation = Activation::linear;

  static Conv1DLayer make(std::size_t in_channels, std::size_t n_filters,
                          std::size_t kernel_width, Activation act, Rng& rng) {
    Conv1DLayer l{n_filters, kernel_width, in_channels,
                  std::vector<double>(n_filters * kernel_width * in_channels),
                  std::vector<double>(n_filters, 0.0), act};
    const double fan_in = static_cast<double>(kernel_width * in_channels);
    const double fan_out = static_cast<double>(kernel_width * n_filters);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : l.filters) v = uniform(rng, -limit, limit);
    return l;
  }

  double& tap(std::size_t f, std::size_t k, std::size_t c) {
    return filters[(f * kernel_width + k) * in_channels + c];
  }
  double tap(std::size_t f, std::size_t k, std::size_t c) const {
    return filters[(f * kernel_width + k) * in_channels + c];
  }

  std::size_t output_length(std::size_t input_length) const {
    return input_length - kernel_width + 1;
  }

  ParamList parameters() { return {filters, bias}; }
};

struct Conv1DCache {
  Matrix input;
  Matrix pre;
};

struct Conv1DOutput {
  Matrix output;
  Conv1DCache cache;
};

struct Conv1DGrads {
  std::vector<double> filters;
  std::vector<double> bias;
  Matrix input;
};

inline Conv1DOutput conv1d_forward(const Conv1DLayer& layer, const Matrix& seq) {
  if (seq.cols() != layer.in_channels) {
    throw ShapeError("conv1d_forward: sequence " + seq.shape_string() + " has " +
                     std::to_string(seq.cols()) + " channels, layer expects " +
                     std::to_string(layer.in_channels));
  }
  if (seq.rows() < layer.kernel_width) {
    throw ShapeError("conv1d_forward: input length " + std::to_string(seq.rows()) +
                     " shorter than kernel width " + std::to_string(layer.kernel_width));
  }
  const std::size_t out_len = layer.output_length(seq.rows());
  Matrix pre(out_len, layer.n_filters);
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t f = 0; f < layer.n_filters; ++f) {
      double s = layer.bias[f];
      for (std::size_t k = 0; k < layer.kernel_width; ++k)
        for (std::size_t c = 0; c < layer.in_channels; ++c) s += layer.tap(f, k, c) * seq(t + k, c);
      pre(t, f) = s;
    }
  }
  Matrix out = activate(pre, layer.activation);
  return {std::move(out), {seq, std::move(pre)}};
}

inline Conv1DGrads conv1d_backward(const Conv1DLayer& layer, const Conv1DCache& cache,
                                   const Matrix& upstream) {
  if (upstream.rows() != cache.pre.rows() || upstream.cols() != cache.pre.cols()) {
    throw ShapeError("conv1d_backward: upstream " + upstream.shape_string() + " vs output " +
                     cache.pre.shape_string());
  }
  Matrix delta = hadamard(upstream, activate_grad(cache.pre, layer.activation));
  Conv1DGrads g{std::vector<double>(layer.filters.size(), 0.0), column_sums(delta),
                Matrix(cache.input.rows(), cache.input.cols())};
  for (std::size_t t = 0; t < delta.rows(); ++t) {
    for (std::size_t f = 0; f < layer.n_filters; ++f) {
      const double d = delta(t, f);
      if (d == 0.0) continue;
      for (std::size_t k = 0; k < layer.kernel_width; ++k) {
        for (std::size_t c = 0; c < layer.in_channels; ++c) {
          g.filters[(f * layer.kernel_width + k) * layer.in_channels + c] += d * cache.input(t + k, c);
          g.input(t + k, c) += d * layer.tap(f, k, c);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Residual block: x + second(first(x)).

struct ResidualBlock {
  DenseLayer first;
  DenseLayer second;

  static ResidualBlock make(std::size_t dim, std::size_t hidden, Activation act, Rng& rng) {
    return {DenseLayer::make(dim, hidden, act, rng), DenseLayer::make(hidden, dim, Activation::linear, rng)};
  }

  std::size_t dim() const { return first.in_dim(); }

  void validate() const {
    if (first.out_dim() != second.in_dim() || second.out_dim() != first.in_dim()) {
      throw ShapeError("residual block: inner stack maps " + std::to_string(first.in_dim()) +
                       " -> " + std::to_string(second.out_dim()) + ", needs equal dims");
    }
  }

  ParamList parameters() {
    auto a = first.parameters();
    auto b = second.parameters();
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
};

struct ResidualCache {
  DenseCache first;
  DenseCache second;
};

struct ResidualOutput {
  Matrix output;
  ResidualCache cache;
};

inline ResidualOutput residual_forward(const ResidualBlock& block, const Matrix& x) {
  block.validate();
  auto a = dense_forward(block.first, x);
  auto b = dense_forward(block.second, a.output);
  return {x + b.output, {std::move(a.cache), std::move(b.cache)}};
}

struct ResidualGrads {
  DenseGrads first;
  DenseGrads second;
  Matrix input;
};

inline ResidualGrads residual_backward(const ResidualBlock& block, const ResidualCache& cache,
                                       const Matrix& upstream) {
  auto gb = dense_backward(block.second, cache.second, upstream);
  auto ga = dense_backward(block.first, cache.first, gb.input);
  Matrix gin = upstream + ga.input;
  return {std::move(ga), std::move(gb), std::move(gin)};
}

// ---------------------------------------------------------------------------
// Sequential stack over a batch.  A Conv1D layer inside a stack reads each
// row as a (cols / in_channels) x in_channels sequence and emits the
// flattened (out_len x n_filters) result.

using Layer = std::variant<DenseLayer, Conv1DLayer, ResidualBlock>;

inline ParamList layer_parameters(Layer& layer) {
  return std::visit([](auto& l) { return l.parameters(); }, layer);
}

inline std::size_t layer_output_dim(const Layer& layer, std::size_t in_dim) {
  if (auto* d = std::get_if<DenseLayer>(&layer)) return d->out_dim();
  if (auto* c = std::get_if<Conv1DLayer>(&layer)) {
    return c->output_length(in_dim / c->in_channels) * c->n_filters;
  }
  return in_dim;
}

namespace detail {

inline Matrix row_as_sequence(const Matrix& x, std::size_t r, std::size_t channels) {
  if (x.cols() % channels != 0) {
    throw ShapeError("conv1d: row width " + std::to_string(x.cols()) +
                     " not divisible by channel count " + std::to_string(channels));
  }
  auto row = x.row(r);
  return Matrix(x.cols() / channels, channels, std::vector<double>(row.begin(), row.end()));
}

}  // namespace detail

class Sequential {
 public:
  using Cache = std::variant<DenseCache, std::vector<Conv1DCache>, ResidualCache>;

  struct Trace {
    std::vector<Cache> caches;
    Matrix output;
  };

  Sequential() = default;
  explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }

  void push_back(Layer l) { layers_.push_back(std::move(l)); }

  std::size_t output_dim(std::size_t in_dim) const {
    for (const auto& l : layers_) in_dim = layer_output_dim(l, in_dim);
    return in_dim;
  }

  Trace forward_trace(const Matrix& x) const {
    Trace t;
    t.output = x;
    t.caches.reserve(layers_.size());
    for (const auto& layer : layers_) {
      if (auto* d = std::get_if<DenseLayer>(&layer)) {
        auto r = dense_forward(*d, t.output);
        t.output = std::move(r.output);
        t.caches.emplace_back(std::move(r.cache));
      } else if (auto* c = std::get_if<Conv1DLayer>(&layer)) {
        std::vector<Conv1DCache> per_row;
        per_row.reserve(t.output.rows());
        Matrix out;
        for (std::size_t r = 0; r < t.output.rows(); ++r) {
          auto res = conv1d_forward(*c, detail::row_as_sequence(t.output, r, c->in_channels));
          if (out.empty()) out = Matrix(t.output.rows(), res.output.size());
          auto src = res.output.data();
          std::copy(src.begin(), src.end(), out.row(r).begin());
          per_row.push_back(std::move(res.cache));
        }
        t.output = std::move(out);
        t.caches.emplace_back(std::move(per_row));
      } else {
        auto r = residual_forward(std::get<ResidualBlock>(layer), t.output);
        t.output = std::move(r.output);
        t.caches.emplace_back(std::move(r.cache));
      }
    }
    return t;
  }

  Matrix forward(const Matrix& x) const { return forward_trace(x).output; }

  /// Gradients in parameters() order, plus the gradient w.r.t. the input.
  std::pair<GradList, Matrix> backward(const Trace& trace, Matrix upstream) const {
    std::vector<GradList> per_layer(layers_.size());
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const auto& layer = layers_[i];
      if (auto* d = std::get_if<DenseLayer>(&layer)) {
        auto g = dense_backward(*d, std::get<DenseCache>(trace.caches[i]), upstream);
        per_layer[i] = {std::vector<double>(g.weights.data().begin(), g.weights.data().end()),
                        std::move(g.bias)};
        upstream = std::move(g.input);
      } else if (auto* c = std::get_if<Conv1DLayer>(&layer)) {
        const auto& caches = std::get<std::vector<Conv1DCache>>(trace.caches[i]);
        std::vector<double> gf(c->filters.size(), 0.0), gb(c->bias.size(), 0.0);
        Matrix gin;
        for (std::size_t r = 0; r < caches.size(); ++r) {
          auto row = upstream.row(r);
          Matrix up(caches[r].pre.rows(), caches[r].pre.cols(),
                    std::vector<double>(row.begin(), row.end()));
          auto g = conv1d_backward(*c, caches[r], up);
          for (std::size_t k = 0; k < gf.size(); ++k) gf[k] += g.filters[k];
          for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += g.bias[k];
          if (gin.empty()) gin = Matrix(caches.size(), g.input.size());
          auto src = g.input.data();
          std::copy(src.begin(), src.end(), gin.row(r).begin());
        }
        per_layer[i] = {std::move(gf), std::move(gb)};
        upstream = std::move(gin);
      } else {
        auto g = residual_backward(std::get<ResidualBlock>(layer),
                                   std::get<ResidualCache>(trace.caches[i]), upstream);
        auto flat = [](const Matrix& m) { return std::vector<double>(m.data().begin(), m.data().end()); };
        per_layer[i] = {flat(g.first.weights), std::move(g.first.bias), flat(g.second.weights),
                        std::move(g.second.bias)};
        upstream = std::move(g.input);
      }
    }
    GradList all;
    for (auto& gl : per_layer)
      for (auto& g : gl) all.push_back(std::move(g));
    return {std::move(all), std::move(upstream)};
  }

  ParamList parameters() {
    ParamList all;
    for (auto& l : layers_) {
      auto p = layer_parameters(l);
      all.insert(all.end(), p.begin(), p.end());
    }
    return all;
  }

  /// Loss of forward(x) against target, and its parameter gradients.
  LossAndGrad loss_and_grad(Loss loss, const Matrix& x, const Matrix& target) const {
    auto trace = forward_trace(x);
    double value = loss_value(loss, target, trace.output);
    auto [grads, gin] = backward(trace, loss_grad(loss, target, trace.output));
    return {value, std::move(grads)};
  }

  double loss(Loss loss, const Matrix& x, const Matrix& target) const {
    return loss_value(loss, target, forward(x));
  }

 private:
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  bool passed = true;
};

/// Compares `analytic` against central differences of `loss` perturbing
/// every entry of `params`.  Relative error is |a-n| / max(|a|, |n|, 1e-8).
inline GradCheckReport gradient_check(const ParamList& params, const GradList& analytic,
                                      const std::function<double()>& loss, double h = 1e-5,
                                      double tolerance = 1e-4) {
  if (h <= 0.0) throw ValidationError("gradient_check: step must be positive");
  if (params.size() != analytic.size()) throw ShapeError("gradient_check: tensor count mismatch");
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != analytic[t].size()) {
      throw ShapeError("gradient_check: tensor " + std::to_string(t) + " size mismatch");
    }
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      double& p = params[t][i];
      const double saved = p;
      p = saved + h;
      const double up = loss();
      p = saved - h;
      const double down = loss();
      p = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = t;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

/// Gradient check for any model exposing parameters(), loss_and_grad() and
/// loss() over (loss-kind, input, target).
template <class Model>
GradCheckReport gradient_check(Model& model, Loss loss, const Matrix& x, const Matrix& target,
                               double h = 1e-5, double tolerance = 1e-4) {
  auto analytic = model.loss_and_grad(loss, x, target).grads;
  return gradient_check(model.parameters(), analytic,
                        [&] { return model.loss(loss, x, target); }, h, tolerance);
}

}  // namespace mmae
