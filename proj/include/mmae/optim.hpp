#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmae/error.hpp"
#include "mmae/layers.hpp"
#include "mmae/log.hpp"
#include "mmae/random.hpp"

namespace mmae {

enum class OptimizerKind { sgd, adam, adagrad, adadelta, rmsprop };

inline constexpr OptimizerKind kAllOptimizers[] = {OptimizerKind::sgd, OptimizerKind::adam,
                                                   OptimizerKind::adadelta, OptimizerKind::adagrad,
                                                   OptimizerKind::rmsprop};

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adagrad: return "adagrad";
    case OptimizerKind::adadelta: return "adadelta";
    case OptimizerKind::rmsprop: return "rmsprop";
  }
  return "sgd";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  for (auto k : kAllOptimizers)
    if (to_string(k) == s) return k;
  throw ValidationError("unknown optimizer '" + std::string(s) +
                        "' (expected sgd, adam, adadelta, adagrad or rmsprop)");
}

struct Hyperparameters {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.9;
  double epsilon = 1e-8;

  static Hyperparameters defaults(OptimizerKind kind, double learning_rate = 0.001) {
    Hyperparameters h;
    h.learning_rate = learning_rate;
    if (kind == OptimizerKind::adadelta) {
      h.rho = 0.95;
      h.epsilon = 1e-6;
    }
    return h;
  }
};

/// Per-parameter accumulators.  `first`/`second` hold, by kind:
///   adam     m, v
///   adagrad  G (first only)
///   adadelta E[g^2], E[dx^2]
///   rmsprop  E[g^2] (first only)
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  Hyperparameters hyper;
  std::uint64_t step_count = 0;
  GradList first;
  GradList second;

  static OptimizerState make(OptimizerKind kind, double learning_rate = 0.001) {
    return {kind, Hyperparameters::defaults(kind, learning_rate), 0, {}, {}};
  }
};

namespace detail {

inline void check_step_shapes(const ParamList& params, const GradList& grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer step: " + std::to_string(params.size()) + " parameter tensors vs " +
                     std::to_string(grads.size()) + " gradient tensors");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size()) {
      throw ShapeError("optimizer step: tensor " + std::to_string(t) + " has " +
                       std::to_string(params[t].size()) + " values, gradient has " +
                       std::to_string(grads[t].size()));
    }
  }
}

inline void ensure_buffer(GradList& buf, const ParamList& params) {
  if (buf.empty()) {
    buf.reserve(params.size());
    for (const auto& p : params) buf.emplace_back(p.size(), 0.0);
    return;
  }
  if (buf.size() != params.size()) throw ShapeError("optimizer state does not match parameters");
  for (std::size_t t = 0; t < params.size(); ++t)
    if (buf[t].size() != params[t].size()) throw ShapeError("optimizer state does not match parameters");
}

}  // namespace detail

inline void sgd_step(const ParamList& params, const GradList& grads, OptimizerState& s) {
  detail::check_step_shapes(params, grads);
  ++s.step_count;
  const double lr = s.hyper.learning_rate;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].size(); ++i) params[t][i] -= lr * grads[t][i];
}

inline void adam_step(const ParamList& params, const GradList& grads, OptimizerState& s) {
  detail::check_step_shapes(params, grads);
  detail::ensure_buffer(s.first, params);
  detail::ensure_buffer(s.second, params);
  ++s.step_count;
  const auto& h = s.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.step_count));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = s.first[t];
    auto& v = s.second[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      params[t][i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
    }
  }
}

inline void adagrad_step(const ParamList& params, const GradList& grads, OptimizerState& s) {
  detail::check_step_shapes(params, grads);
  detail::ensure_buffer(s.first, params);
  ++s.step_count;
  const auto& h = s.hyper;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& acc = s.first[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      acc[i] += g * g;
      params[t][i] -= h.learning_rate * g / (std::sqrt(acc[i]) + h.epsilon);
    }
  }
}

/// Adadelta has no learning rate; `hyper.learning_rate` is ignored.
inline void adadelta_step(const ParamList& params, const GradList& grads, OptimizerState& s) {
  detail::check_step_shapes(params, grads);
  detail::ensure_buffer(s.first, params);
  detail::ensure_buffer(s.second, params);
  ++s.step_count;
  const auto& h = s.hyper;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& eg = s.first[t];
    auto& edx = s.second[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      eg[i] = h.rho * eg[i] + (1.0 - h.rho) * g * g;
      const double dx = -(std::sqrt(edx[i] + h.epsilon) / std::sqrt(eg[i] + h.epsilon)) * g;
      edx[i] = h.rho * edx[i] + (1.0 - h.rho) * dx * dx;
      params[t][i] += dx;
    }
  }
}

inline void rmsprop_step(const ParamList& params, const GradList& grads, OptimizerState& s) {
  detail::check_step_shapes(params, grads);
  detail::ensure_buffer(s.first, params);
  ++s.step_count;
  const auto& h = s.hyper;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& eg = s.first[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      eg[i] = h.rho * eg[i] + (1.0 - h.rho) * g * g;
      params[t][i] -= h.learning_rate * g / (std::sqrt(eg[i]) + h.epsilon);
    }
  }
}

inline void optimizer_step(const ParamList& params, const GradList& grads, OptimizerState& s) {
  switch (s.kind) {
    case OptimizerKind::sgd: sgd_step(params, grads, s); break;
    case OptimizerKind::adam: adam_step(params, grads, s); break;
    case OptimizerKind::adagrad: adagrad_step(params, grads, s); break;
    case OptimizerKind::adadelta: adadelta_step(params, grads, s); break;
    case OptimizerKind::rmsprop: rmsprop_step(params, grads, s); break;
  }
}

// ---------------------------------------------------------------------------
// Mini-batch training loop

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  std::uint64_t seed = 42;
  bool shuffle = true;

  void validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("learning_rate must be finite and non-negative");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

using History = std::vector<EpochRecord>;

/// Index batches for one epoch: an optional permutation cut into
/// consecutive chunks; the last chunk may be short.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           Rng& rng, bool shuffle_rows) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle_rows) shuffle(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return batches;
}

namespace detail {

inline bool all_finite(const ParamList& params) {
  for (const auto& p : params)
    for (double v : p)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

/// Trains `model` on `data` for cfg.epochs epochs of ceil(n / batch_size)
/// steps.  The model provides
///   ParamList parameters();
///   LossAndGrad batch_loss_and_grad(const Data&, std::span<const std::size_t>) const;
///   double dataset_loss(const Data&) const;
/// and `sample_count(const Data&)` must be findable.  History losses are the
/// full-split losses evaluated after each epoch.
template <class Model, class Data>
History train(Model& model, const Data& data, const Data* val, OptimizerKind kind,
              const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = sample_count(data);
  if (n == 0) throw ValidationError("train: empty dataset");
  if (cfg.batch_size > n) {
    throw ValidationError("train: batch_size " + std::to_string(cfg.batch_size) +
                          " exceeds sample count " + std::to_string(n));
  }
  if (kind == OptimizerKind::adadelta) {
    log().info("adadelta ignores learning_rate ({})", cfg.learning_rate);
  }
  auto state = OptimizerState::make(kind, cfg.learning_rate);
  Rng rng = make_rng(cfg.seed, "shuffle");
  History history;
  history.reserve(cfg.epochs);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = epoch_batches(n, cfg.batch_size, rng, cfg.shuffle);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto lg = model.batch_loss_and_grad(data, std::span<const std::size_t>(batches[b]));
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(b + 1),
                              epoch, b + 1);
      }
      auto params = model.parameters();
      optimizer_step(params, lg.grads, state);
      if (!detail::all_finite(params)) {
        throw DivergenceError("non-finite parameter at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(b + 1),
                              epoch, b + 1);
      }
    }
    EpochRecord rec{epoch, model.dataset_loss(data), std::nullopt};
    if (!std::isfinite(rec.train_loss)) {
      throw DivergenceError("non-finite training loss after epoch " + std::to_string(epoch),
                            epoch, batches.size());
    }
    if (val != nullptr) rec.val_loss = model.dataset_loss(*val);
    history.push_back(rec);
  }
  return history;
}

}  // namespace mmae
