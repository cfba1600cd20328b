#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
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

/// Per-modality matrices sharing one row per sample.
using Views = std::vector<Matrix>;

inline std::size_t sample_count(const Views& views) { return views.empty() ? 0 : views.front().rows(); }

namespace detail {

inline void check_aligned(std::span<const Matrix> views, std::string_view op) {
  if (views.empty()) throw ShapeError(std::string(op) + ": no modalities");
  for (const auto& v : views) {
    if (v.rows() != views.front().rows()) {
      throw ShapeError(std::string(op) + ": row counts differ (" + std::to_string(views.front().rows()) +
                       " vs " + std::to_string(v.rows()) + ")");
    }
  }
}

inline Views select_view_rows(const Views& views, std::span<const std::size_t> idx) {
  Views out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(select_rows(v, idx));
  return out;
}

inline std::vector<double> flatten(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-modality autoencoder

inline std::size_t default_hidden_dim(std::size_t in_dim) { return (in_dim + 1) / 2; }

struct Autoencoder {
  Sequential encoder;
  Sequential decoder;
  std::size_t input_dim = 0;
  std::size_t latent_dim = 0;

  /// input -> ceil(input/2) tanh -> latent linear, mirrored decoder.
  static Autoencoder make(std::size_t in_dim, std::size_t latent, Rng& rng, std::size_t hidden = 0) {
    if (in_dim == 0 || latent == 0) throw ValidationError("autoencoder dims must be >= 1");
    if (hidden == 0) hidden = default_hidden_dim(in_dim);
    Autoencoder ae;
    ae.input_dim = in_dim;
    ae.latent_dim = latent;
    ae.encoder.push_back(DenseLayer::make(in_dim, hidden, Activation::tanh, rng));
    ae.encoder.push_back(DenseLayer::make(hidden, latent, Activation::linear, rng));
    ae.decoder.push_back(DenseLayer::make(latent, hidden, Activation::tanh, rng));
    ae.decoder.push_back(DenseLayer::make(hidden, in_dim, Activation::linear, rng));
    return ae;
  }

  /// Single linear identity layer each way.
  static Autoencoder identity(std::size_t dim) {
    Autoencoder ae;
    ae.input_dim = ae.latent_dim = dim;
    ae.encoder.push_back(DenseLayer::identity(dim));
    ae.decoder.push_back(DenseLayer::identity(dim));
    return ae;
  }

  void validate() const {
    if (encoder.output_dim(input_dim) != latent_dim || decoder.output_dim(latent_dim) != input_dim) {
      throw ShapeError("autoencoder: encoder/decoder dims do not compose " + std::to_string(input_dim) + " -> " +
                       std::to_string(latent_dim) + " -> " + std::to_string(input_dim));
    }
  }

  ParamList parameters() {
    auto p = encoder.parameters();
    auto d = decoder.parameters();
    p.insert(p.end(), d.begin(), d.end());
    return p;
  }

  Matrix encode(const Matrix& x) const {
    check_input(x);
    return encoder.forward(x);
  }

  Matrix reconstruct(const Matrix& x) const { return decoder.forward(encode(x)); }

  LossAndGrad loss_and_grad(Loss loss, const Matrix& x, const Matrix& target) const {
    check_input(x);
    auto et = encoder.forward_trace(x);
    auto dt = decoder.forward_trace(et.output);
    const double value = loss_value(loss, target, dt.output);
    auto [dg, dlat] = decoder.backward(dt, loss_grad(loss, target, dt.output));
    auto [eg, dx] = encoder.backward(et, std::move(dlat));
    eg.insert(eg.end(), std::make_move_iterator(dg.begin()), std::make_move_iterator(dg.end()));
    return {value, std::move(eg)};
  }

  double loss(Loss loss, const Matrix& x, const Matrix& target) const {
    return loss_value(loss, target, reconstruct(x));
  }

  LossAndGrad batch_loss_and_grad(const Matrix& x, std::span<const std::size_t> idx) const {
    auto b = select_rows(x, idx);
    return loss_and_grad(Loss::mse, b, b);
  }

  double dataset_loss(const Matrix& x) const { return loss(Loss::mse, x, x); }

 private:
  void check_input(const Matrix& x) const {
    if (x.cols() != input_dim) {
      throw ShapeError("autoencoder expects " + std::to_string(input_dim) + " features, got " +
                       std::to_string(x.cols()));
    }
  }
};

struct Reconstruction {
  Matrix output;
  std::vector<double> errors;  // ||x_i - xhat_i||^2
};

inline Reconstruction ae_reconstruct(const Autoencoder& ae, const Matrix& x) {
  auto out = ae.reconstruct(x);
  return {out, row_squared_norms(x - out)};
}

inline History ae_train(Autoencoder& ae, const Matrix& train_x, const Matrix* val_x, OptimizerKind kind,
                        const TrainConfig& cfg) {
  ae.validate();
  return train(ae, train_x, val_x, kind, cfg);
}

// ---------------------------------------------------------------------------
// Multi-modal autoencoder: E_i -> concat -> FL -> h -> defusion -> slice -> D_i

struct MultiModalConfig {
  std::size_t latent_dim = 2;  // per modality, capped at the modality width
  std::size_t shared_dim = 2;
  Activation fusion_activation = Activation::tanh;
};

struct MultiModalReconstruction {
  Views outputs;
  std::vector<double> errors;  // sum over modalities
  Matrix per_modality;         // rows = samples, cols = modalities
};

class MultiModalAE {
 public:
  MultiModalAE() = default;

  MultiModalAE(std::vector<Sequential> encoders, DenseLayer fusion, DenseLayer defusion,
               std::vector<Sequential> decoders, std::vector<std::size_t> input_dims)
      : encoders_(std::move(encoders)),
        fusion_(std::move(fusion)),
        defusion_(std::move(defusion)),
        decoders_(std::move(decoders)),
        input_dims_(std::move(input_dims)) {
    validate();
  }

  static MultiModalAE make(const std::vector<std::size_t>& input_dims, const MultiModalConfig& cfg,
                           std::uint64_t seed) {
    if (input_dims.size() < 2) throw ValidationError("multi-modal autoencoder needs >= 2 modalities");
    if (cfg.latent_dim == 0 || cfg.shared_dim == 0) throw ValidationError("latent and shared dims must be >= 1");
    std::vector<Sequential> enc, dec;
    std::size_t total_latent = 0;
    for (std::size_t i = 0; i < input_dims.size(); ++i) {
      Rng rng = make_rng(seed, "init", i);
      auto ae = Autoencoder::make(input_dims[i], std::min(cfg.latent_dim, input_dims[i]), rng);
      total_latent += ae.latent_dim;
      enc.push_back(std::move(ae.encoder));
      dec.push_back(std::move(ae.decoder));
    }
    Rng rng = make_rng(seed, "init", input_dims.size());
    auto fl = DenseLayer::make(total_latent, cfg.shared_dim, cfg.fusion_activation, rng);
    auto dfl = DenseLayer::make(cfg.shared_dim, total_latent, Activation::linear, rng);
    return MultiModalAE(std::move(enc), std::move(fl), std::move(dfl), std::move(dec), input_dims);
  }

  /// All-linear identity model: shared dim = sum of input dims.
  static MultiModalAE identity(const std::vector<std::size_t>& input_dims) {
    std::vector<Sequential> enc, dec;
    std::size_t total = 0;
    for (auto d : input_dims) {
      enc.emplace_back(std::vector<Layer>{DenseLayer::identity(d)});
      dec.emplace_back(std::vector<Layer>{DenseLayer::identity(d)});
      total += d;
    }
    return MultiModalAE(std::move(enc), DenseLayer::identity(total), DenseLayer::identity(total), std::move(dec),
                        input_dims);
  }

  void validate() const {
    if (input_dims_.size() < 2) throw ValidationError("multi-modal autoencoder needs >= 2 modalities");
    if (encoders_.size() != input_dims_.size() || decoders_.size() != input_dims_.size()) {
      throw ShapeError("multi-modal autoencoder: encoder/decoder count differs from modality count");
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < input_dims_.size(); ++i) {
      const std::size_t lat = encoders_[i].output_dim(input_dims_[i]);
      if (decoders_[i].output_dim(lat) != input_dims_[i]) {
        throw ShapeError("multi-modal autoencoder: decoder " + std::to_string(i) + " does not restore width " +
                         std::to_string(input_dims_[i]));
      }
      total += lat;
    }
    if (fusion_.in_dim() != total || defusion_.out_dim() != total || defusion_.in_dim() != fusion_.out_dim()) {
      throw ShapeError("multi-modal autoencoder: fusion layer dims do not match latent widths");
    }
  }

  std::size_t modalities() const { return input_dims_.size(); }
  const std::vector<std::size_t>& input_dims() const { return input_dims_; }
  std::size_t shared_dim() const { return fusion_.out_dim(); }

  std::vector<std::size_t> latent_dims() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < input_dims_.size(); ++i) out.push_back(encoders_[i].output_dim(input_dims_[i]));
    return out;
  }

  const std::vector<Sequential>& encoders() const { return encoders_; }
  const std::vector<Sequential>& decoders() const { return decoders_; }
  const DenseLayer& fusion() const { return fusion_; }
  const DenseLayer& defusion() const { return defusion_; }

  /// encoders, fusion, defusion, decoders.
  ParamList parameters() {
    ParamList all;
    auto append = [&](ParamList p) { all.insert(all.end(), p.begin(), p.end()); };
    for (auto& e : encoders_) append(e.parameters());
    append(fusion_.parameters());
    append(defusion_.parameters());
    for (auto& d : decoders_) append(d.parameters());
    return all;
  }

  Matrix encode(const Views& views) const {
    check_views(views);
    Views lat;
    for (std::size_t i = 0; i < views.size(); ++i) lat.push_back(encoders_[i].forward(views[i]));
    return dense_forward(fusion_, hstack(lat)).output;
  }

  MultiModalReconstruction reconstruct(const Views& views) const {
    auto h = encode(views);
    auto lhat = dense_forward(defusion_, h).output;
    MultiModalReconstruction r;
    r.per_modality = Matrix(views.front().rows(), views.size());
    r.errors.assign(views.front().rows(), 0.0);
    std::size_t off = 0;
    const auto lat = latent_dims();
    for (std::size_t i = 0; i < views.size(); ++i) {
      r.outputs.push_back(decoders_[i].forward(slice_cols(lhat, off, lat[i])));
      off += lat[i];
      auto e = row_squared_norms(views[i] - r.outputs.back());
      for (std::size_t s = 0; s < e.size(); ++s) {
        r.per_modality(s, i) = e[s];
        r.errors[s] += e[s];
      }
    }
    return r;
  }

  /// Sum over modalities of mse(v_i, vhat_i), with gradients in
  /// parameters() order.
  LossAndGrad loss_and_grad(const Views& views) const {
    check_views(views);
    const auto lat = latent_dims();
    std::vector<Sequential::Trace> enc_traces;
    Views latents;
    for (std::size_t i = 0; i < views.size(); ++i) {
      enc_traces.push_back(encoders_[i].forward_trace(views[i]));
      latents.push_back(enc_traces.back().output);
    }
    auto fused = dense_forward(fusion_, hstack(latents));
    auto defused = dense_forward(defusion_, fused.output);

    double loss = 0.0;
    std::vector<GradList> dec_grads(views.size());
    Views dlat;
    std::size_t off = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
      auto trace = decoders_[i].forward_trace(slice_cols(defused.output, off, lat[i]));
      off += lat[i];
      loss += mse_loss(views[i], trace.output);
      auto [g, din] = decoders_[i].backward(trace, mse_grad(views[i], trace.output));
      dec_grads[i] = std::move(g);
      dlat.push_back(std::move(din));
    }
    auto gdef = dense_backward(defusion_, defused.cache, hstack(dlat));
    auto gfus = dense_backward(fusion_, fused.cache, gdef.input);

    GradList all;
    off = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
      auto [g, dx] = encoders_[i].backward(enc_traces[i], slice_cols(gfus.input, off, lat[i]));
      off += lat[i];
      for (auto& t : g) all.push_back(std::move(t));
    }
    all.push_back(detail::flatten(gfus.weights));
    all.push_back(std::move(gfus.bias));
    all.push_back(detail::flatten(gdef.weights));
    all.push_back(std::move(gdef.bias));
    for (auto& g : dec_grads)
      for (auto& t : g) all.push_back(std::move(t));
    return {loss, std::move(all)};
  }

  double loss(const Views& views) const {
    auto r = reconstruct(views);
    double total = 0.0;
    for (std::size_t i = 0; i < views.size(); ++i) total += mse_loss(views[i], r.outputs[i]);
    return total;
  }

  LossAndGrad batch_loss_and_grad(const Views& views, std::span<const std::size_t> idx) const {
    return loss_and_grad(detail::select_view_rows(views, idx));
  }

  double dataset_loss(const Views& views) const { return loss(views); }

 private:
  void check_views(const Views& views) const {
    if (views.size() != input_dims_.size()) {
      throw ShapeError("multi-modal autoencoder expects " + std::to_string(input_dims_.size()) +
                       " modalities, got " + std::to_string(views.size()));
    }
    detail::check_aligned(views, "multi-modal autoencoder");
    for (std::size_t i = 0; i < views.size(); ++i) {
      if (views[i].cols() != input_dims_[i]) {
        throw ShapeError("modality " + std::to_string(i) + " has " + std::to_string(views[i].cols()) +
                         " features, model expects " + std::to_string(input_dims_[i]));
      }
    }
  }

  std::vector<Sequential> encoders_;
  DenseLayer fusion_;
  DenseLayer defusion_;
  std::vector<Sequential> decoders_;
  std::vector<std::size_t> input_dims_;
};

inline Matrix mm_encode(const MultiModalAE& model, const Views& views) { return model.encode(views); }

inline MultiModalReconstruction mm_reconstruct(const MultiModalAE& model, const Views& views) {
  return model.reconstruct(views);
}

inline History mm_train(MultiModalAE& model, const Views& train_views, const Views* val_views,
                        OptimizerKind kind, const TrainConfig& cfg) {
  model.validate();
  detail::check_aligned(train_views, "mm_train");
  return train(model, train_views, val_views, kind, cfg);
}

// ---------------------------------------------------------------------------
// Early and late fusion

inline Matrix fuse_early(const Views& views) {
  detail::check_aligned(views, "fuse_early");
  return hstack(views);
}

/// Row-normalized weighted average of member probability matrices.
inline Matrix fuse_late(std::span<const Matrix> member_probs, std::span<const double> weights) {
  if (member_probs.empty()) throw ValidationError("fuse_late: no members");
  if (member_probs.size() != weights.size()) throw ShapeError("fuse_late: one weight per member required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("fuse_late: weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) throw ValidationError("fuse_late: weights are all zero");
  const auto& first = member_probs.front();
  Matrix out(first.rows(), first.cols());
  for (std::size_t m = 0; m < member_probs.size(); ++m) {
    const auto& p = member_probs[m];
    if (p.rows() != first.rows() || p.cols() != first.cols()) {
      throw ShapeError("fuse_late: member " + std::to_string(m) + " is " + p.shape_string() + ", expected " +
                       first.shape_string());
    }
    for (std::size_t i = 0; i < p.size(); ++i) out.data()[i] += weights[m] * p.data()[i];
  }
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double s = 0.0;
    for (double v : row) s += v;
    if (s > 0.0)
      for (double& v : row) v /= s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical correlation analysis

inline constexpr double kCcaRidge = 1e-6;

struct CcaProjection {
  std::vector<double> mean_a;
  std::vector<double> mean_b;
  Matrix weights_a;  // dim_a x k
  Matrix weights_b;  // dim_b x k
  std::vector<double> correlations;

  std::size_t k() const { return correlations.size(); }
};

namespace detail {

inline Matrix centered(const Matrix& x, std::span<const double> mean) {
  Matrix c = x;
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t j = 0; j < c.cols(); ++j) c(r, j) -= mean[j];
  return c;
}

/// Population covariance; ridge added on the diagonal when requested.
inline Matrix covariance(const Matrix& a, const Matrix& b, double ridge) {
  Matrix c = (1.0 / static_cast<double>(a.rows())) * matmul_at(a, b);
  if (ridge > 0.0)
    for (std::size_t i = 0; i < c.rows(); ++i) c(i, i) += ridge;
  return c;
}

inline Matrix inverse_sqrt(const Matrix& sym) {
  auto eig = symmetric_eigen(sym);
  const std::size_t n = sym.rows();
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = 1.0 / std::sqrt(std::max(eig.values[k], 1e-300));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += s * eig.vectors(i, k) * eig.vectors(j, k);
  }
  return out;
}

}  // namespace detail

/// Top-k canonical pairs by whitening with regularized covariances and
/// eigendecomposing M M^T, M = Caa^-1/2 Cab Cbb^-1/2.
inline CcaProjection cca_fit(const Matrix& a, const Matrix& b, std::size_t k) {
  if (a.rows() != b.rows()) throw ShapeError("cca_fit: row counts differ");
  const std::size_t da = a.cols(), db = b.cols();
  if (k == 0 || k > std::min(da, db)) {
    throw ValidationError("cca_fit: k=" + std::to_string(k) + " must lie in 1.." + std::to_string(std::min(da, db)));
  }
  if (a.rows() < std::max(da, db) + 2) {
    throw ValidationError("cca_fit: " + std::to_string(a.rows()) + " samples, need at least " +
                          std::to_string(std::max(da, db) + 2));
  }
  CcaProjection p;
  p.mean_a = column_means(a);
  p.mean_b = column_means(b);
  auto ac = detail::centered(a, p.mean_a);
  auto bc = detail::centered(b, p.mean_b);
  auto wa = detail::inverse_sqrt(detail::covariance(ac, ac, kCcaRidge));
  auto wb = detail::inverse_sqrt(detail::covariance(bc, bc, kCcaRidge));
  auto m = matmul(matmul(wa, detail::covariance(ac, bc, 0.0)), wb);
  auto left = symmetric_eigen(matmul_bt(m, m));
  auto right = symmetric_eigen(matmul_at(m, m));
  p.weights_a = Matrix(da, k);
  p.weights_b = Matrix(db, k);
  for (std::size_t j = 0; j < k; ++j) {
    const double rho = std::sqrt(std::max(left.values[j], 0.0));
    p.correlations.push_back(rho);
    Matrix u(da, 1);
    for (std::size_t i = 0; i < da; ++i) u(i, 0) = left.vectors(i, j);
    Matrix v(db, 1);
    if (rho > 1e-10) {
      v = (1.0 / rho) * matmul_at(m, u);
    } else {
      for (std::size_t i = 0; i < db; ++i) v(i, 0) = right.vectors(i, j);
    }
    auto pa = matmul(wa, u);
    auto pb = matmul(wb, v);
    for (std::size_t i = 0; i < da; ++i) p.weights_a(i, j) = pa(i, 0);
    for (std::size_t i = 0; i < db; ++i) p.weights_b(i, j) = pb(i, 0);
  }
  return p;
}

/// [ (a - mean_a) Wa , (b - mean_b) Wb ]
inline Matrix cca_transform(const CcaProjection& p, const Matrix& a, const Matrix& b) {
  if (a.cols() != p.weights_a.rows() || b.cols() != p.weights_b.rows()) {
    throw ShapeError("cca_transform: modality widths differ from the fitted projection");
  }
  Views parts{matmul(detail::centered(a, p.mean_a), p.weights_a), matmul(detail::centered(b, p.mean_b), p.weights_b)};
  return hstack(parts);
}

// ---------------------------------------------------------------------------
// Enhancement stack applied to h before the heads

enum class EnhancementKind { residual, conv1d };

inline std::string_view to_string(EnhancementKind k) { return k == EnhancementKind::residual ? "residual" : "conv1d"; }

inline EnhancementKind parse_enhancement(std::string_view s) {
  if (s == "residual") return EnhancementKind::residual;
  if (s == "conv1d") return EnhancementKind::conv1d;
  throw ValidationError("unknown enhancement '" + std::string(s) + "' (expected residual or conv1d)");
}

/// `blocks` residual blocks (hidden width = dim), or a single-filter conv1d
/// over h read as a 1-channel sequence (kernel min(3, dim), output width
/// dim - kernel + 1).
inline Sequential make_enhancement(std::size_t dim, std::size_t blocks, EnhancementKind kind, Rng& rng) {
  Sequential s;
  if (kind == EnhancementKind::residual) {
    for (std::size_t b = 0; b < blocks; ++b) s.push_back(ResidualBlock::make(dim, dim, Activation::tanh, rng));
  } else if (blocks > 0) {
    const std::size_t width = std::min<std::size_t>(3, dim);
    s.push_back(Conv1DLayer::make(1, 1, width, Activation::tanh, rng));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Strategy-agnostic wrapper used by the pipeline

enum class FusionStrategy { latent_fusion, early, intermediate_cca, single_modality };

inline std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::latent_fusion: return "latent_fusion";
    case FusionStrategy::early: return "early";
    case FusionStrategy::intermediate_cca: return "intermediate_cca";
    case FusionStrategy::single_modality: return "single_modality";
  }
  return "latent_fusion";
}

inline FusionStrategy parse_fusion(std::string_view s) {
  for (auto f : {FusionStrategy::latent_fusion, FusionStrategy::early, FusionStrategy::intermediate_cca,
                 FusionStrategy::single_modality})
    if (to_string(f) == s) return f;
  throw ValidationError("unknown fusion strategy '" + std::string(s) +
                        "' (expected latent_fusion, early or intermediate_cca)");
}

struct FusionOptions {
  FusionStrategy strategy = FusionStrategy::latent_fusion;
  MultiModalConfig arch;
  std::size_t cca_k = 2;   // canonical pairs kept, capped at the narrower modality
  std::size_t modality = 0;  // single_modality only
};

struct FusionScores {
  std::vector<double> errors;
  Matrix per_modality;
};

/// latent_fusion trains the multi-modal autoencoder; the other strategies
/// train one plain Autoencoder on a derived input: all modalities
/// concatenated (early), the two-modality canonical projection
/// (intermediate_cca), or one modality (single_modality).
struct FusionModel {
  FusionStrategy strategy = FusionStrategy::latent_fusion;
  MultiModalAE mm;
  Autoencoder ae;
  CcaProjection cca;
  std::size_t modality = 0;
  std::vector<std::size_t> input_dims;

  static FusionModel make(const std::vector<std::size_t>& dims, const FusionOptions& opt, std::uint64_t seed) {
    FusionModel f;
    f.strategy = opt.strategy;
    f.input_dims = dims;
    f.modality = opt.modality;
    if (opt.arch.latent_dim == 0 || opt.arch.shared_dim == 0) {
      throw ValidationError("latent and shared dims must be >= 1");
    }
    Rng rng = make_rng(seed, "init", 0);
    switch (opt.strategy) {
      case FusionStrategy::latent_fusion: f.mm = MultiModalAE::make(dims, opt.arch, seed); break;
      case FusionStrategy::early: {
        const std::size_t total = std::accumulate(dims.begin(), dims.end(), std::size_t{0});
        f.ae = Autoencoder::make(total, std::min(opt.arch.shared_dim, total), rng);
        break;
      }
      case FusionStrategy::intermediate_cca: {
        if (dims.size() != 2) {
          throw ValidationError("intermediate_cca fusion supports exactly 2 modalities, got " +
                                std::to_string(dims.size()));
        }
        const std::size_t k = std::min(opt.cca_k, std::min(dims[0], dims[1]));
        if (k == 0) throw ValidationError("cca_k must be >= 1");
        f.cca.correlations.assign(k, 0.0);
        f.ae = Autoencoder::make(2 * k, std::min(opt.arch.shared_dim, 2 * k), rng);
        break;
      }
      case FusionStrategy::single_modality:
        if (opt.modality >= dims.size()) throw ValidationError("single_modality index out of range");
        f.ae = Autoencoder::make(dims[opt.modality], std::min(opt.arch.latent_dim, dims[opt.modality]), rng);
        break;
    }
    return f;
  }

  std::size_t modalities_scored() const {
    switch (strategy) {
      case FusionStrategy::latent_fusion:
      case FusionStrategy::early: return input_dims.size();
      case FusionStrategy::intermediate_cca: return 2;
      case FusionStrategy::single_modality: return 1;
    }
    return 1;
  }

  /// Input of the plain autoencoder for the non-latent strategies.
  Matrix prepare(const Views& views) const {
    if (views.size() != input_dims.size()) {
      throw ShapeError("model expects " + std::to_string(input_dims.size()) + " modalities, got " +
                       std::to_string(views.size()));
    }
    switch (strategy) {
      case FusionStrategy::early: return fuse_early(views);
      case FusionStrategy::intermediate_cca: return cca_transform(cca, views[0], views[1]);
      case FusionStrategy::single_modality: return views[modality];
      case FusionStrategy::latent_fusion: break;
    }
    throw ValidationError("prepare: latent_fusion uses the multi-modal model directly");
  }

  History fit(const Views& train_views, const Views* val_views, OptimizerKind kind, const TrainConfig& cfg) {
    if (strategy == FusionStrategy::latent_fusion) return mm_train(mm, train_views, val_views, kind, cfg);
    if (strategy == FusionStrategy::intermediate_cca) cca = cca_fit(train_views[0], train_views[1], cca.k());
    auto x = prepare(train_views);
    if (val_views != nullptr) {
      auto v = prepare(*val_views);
      return ae_train(ae, x, &v, kind, cfg);
    }
    return ae_train(ae, x, nullptr, kind, cfg);
  }

  Matrix encode(const Views& views) const {
    if (strategy == FusionStrategy::latent_fusion) return mm.encode(views);
    return ae.encode(prepare(views));
  }

  std::size_t latent_width() const {
    return strategy == FusionStrategy::latent_fusion ? mm.shared_dim() : ae.latent_dim;
  }

  /// Per-sample squared error and its split by modality (columns of the
  /// concatenated input for early fusion, canonical blocks for CCA).
  FusionScores score(const Views& views) const {
    if (strategy == FusionStrategy::latent_fusion) {
      auto r = mm.reconstruct(views);
      return {std::move(r.errors), std::move(r.per_modality)};
    }
    auto x = prepare(views);
    auto diff = x - ae.reconstruct(x);
    std::vector<std::size_t> widths;
    if (strategy == FusionStrategy::early) widths = input_dims;
    else if (strategy == FusionStrategy::intermediate_cca) widths = {cca.k(), cca.k()};
    else widths = {x.cols()};
    FusionScores s{std::vector<double>(x.rows(), 0.0), Matrix(x.rows(), widths.size())};
    for (std::size_t r = 0; r < x.rows(); ++r) {
      std::size_t off = 0;
      for (std::size_t m = 0; m < widths.size(); ++m) {
        double e = 0.0;
        for (std::size_t c = off; c < off + widths[m]; ++c) e += diff(r, c) * diff(r, c);
        off += widths[m];
        s.per_modality(r, m) = e;
        s.errors[r] += e;
      }
    }
    return s;
  }
};

}  // namespace mmae
