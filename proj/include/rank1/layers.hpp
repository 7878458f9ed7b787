#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rank1/conv.hpp"
#include "rank1/parallel.hpp"
#include "rank1/random.hpp"
#include "rank1/rank1_filter.hpp"
#include "rank1/tensor.hpp"

namespace rank1 {

enum class Phase { train, eval };

/// How a convolution layer parameterizes its filters.
///   standard    dense [N, d1, d2] weights
///   rank1       factors (p, q, t) composed into a dense filter every forward pass
///   sequential  the same three factors applied as lateral, vertical and
///               horizontal 1-D convolutions in series ("flattened")
enum class ConvMode { standard, rank1, sequential };

inline std::string_view to_string(ConvMode mode) {
  switch (mode) {
    case ConvMode::standard: return "standard";
    case ConvMode::rank1: return "rank1";
    case ConvMode::sequential: return "sequential-1d";
  }
  return "?";
}

inline std::ostream& operator<<(std::ostream& os, ConvMode mode) { return os << to_string(mode); }

inline std::optional<ConvMode> parse_conv_mode(std::string_view s) {
  if (s == "standard") return ConvMode::standard;
  if (s == "rank1" || s == "rank1-composed") return ConvMode::rank1;
  if (s == "sequential-1d" || s == "sequential" || s == "flattened") return ConvMode::sequential;
  return std::nullopt;
}

/// Named view of a layer tensor. `grad` is null for non-trainable state.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

/// A differentiable stage operating on a batch whose leading axis is the sample.
///
/// backward() must follow the forward() whose activations it differentiates;
/// parameter gradients accumulate until zero_grad().
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;

  /// Per-sample output shape for a per-sample input shape.
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual Tensor forward(const Tensor& x, Phase phase) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;

  virtual std::vector<ParamRef> params() { return {}; }

  /// Non-trainable persistent state (running statistics).
  virtual std::vector<ParamRef> buffers() { return {}; }

  void zero_grad() {
    for (auto& p : params()) p.grad->fill(0.0);
  }

  /// Plain SGD (momentum == 0) or heavy-ball momentum on every parameter.
  virtual void sgd_step(double lr, double momentum) {
    auto ps = params();
    const auto steps = directions(ps, momentum);
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value->axpy(-lr, steps[i]);
  }

 protected:
  /// Update direction per parameter: the gradient itself, or the momentum
  /// buffer v <- momentum * v + g when momentum > 0.
  std::vector<Tensor> directions(const std::vector<ParamRef>& ps, double momentum) {
    std::vector<Tensor> out;
    out.reserve(ps.size());
    if (momentum == 0.0) {
      for (const auto& p : ps) out.push_back(*p.grad);
      return out;
    }
    if (velocity_.size() != ps.size()) {
      velocity_.clear();
      for (const auto& p : ps) velocity_.emplace_back(p.grad->shape());
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      velocity_[i] *= momentum;
      velocity_[i] += *ps[i].grad;
      out.push_back(velocity_[i]);
    }
    return out;
  }

  static void require_batch(const Tensor& x, std::size_t rank, std::string_view who) {
    if (x.rank() != rank) {
      throw ShapeError(std::string(who) + ": expected a batch of rank " + std::to_string(rank) +
                       ", got " + to_string(x.shape()));
    }
  }

 private:
  std::vector<Tensor> velocity_;
};

/// Slice sample b out of a batch tensor.
inline Tensor sample_of(const Tensor& batch, std::size_t b) {
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = shape_size(shape);
  const auto first = batch.data().begin() + static_cast<std::ptrdiff_t>(b * n);
  return Tensor(std::move(shape), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

inline void store_sample(Tensor& batch, std::size_t b, const Tensor& sample) {
  std::copy(sample.data().begin(), sample.data().end(),
            batch.data().begin() + static_cast<std::ptrdiff_t>(b * sample.size()));
}

struct ConvGeometry {
  std::size_t in_channels = 1;   // N
  std::size_t out_channels = 1;  // q
  std::size_t height = 3;        // d1
  std::size_t width = 3;         // d2
  PaddingMode padding = PaddingMode::same;
  std::size_t stride = 1;
};

/// Convolution with q filters of shape [N, d1, d2] in one of three modes.
///
/// Forward output channel m is conv2d_multi(x, filter_m) + bias[m]. In rank1
/// mode every filter is recomposed from its factors at the start of each
/// forward pass and the optimizer step moves the factors only
/// (projected_update); the dense filter gradient is never applied directly.
class ConvLayer : public Layer {
 public:
  ConvLayer(ConvMode mode, ConvGeometry geometry, Rng& rng) : mode_(mode), geo_(geometry) {
    if (geo_.in_channels == 0 || geo_.out_channels == 0 || geo_.height == 0 || geo_.width == 0) {
      throw ShapeError("ConvLayer: all extents must be positive");
    }
    if (geo_.stride == 0) throw ValueError("ConvLayer: stride must be positive");
    const std::size_t q = geo_.out_channels, n = geo_.in_channels, d1 = geo_.height, d2 = geo_.width;
    const std::size_t fan_in = n * d1 * d2, fan_out = q * d1 * d2;
    bias_ = Tensor({q});
    bias_grad_ = Tensor({q});
    switch (mode_) {
      case ConvMode::standard: {
        dense_ = Tensor({q, n, d1, d2});
        dense_grad_ = Tensor(dense_.shape());
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& w : dense_.data()) w = rng.uniform(-bound, bound);
        break;
      }
      case ConvMode::rank1:
        for (std::size_t m = 0; m < q; ++m) {
          filters_.push_back(init_rank1_filter(d1, d2, n, fan_in, fan_out, rng));
          factor_grads_.push_back({Tensor({d1}), Tensor({d2}), Tensor({n})});
        }
        break;
      case ConvMode::sequential: {
        lateral_ = Tensor({q, n});
        vertical_ = Tensor({q, d1});
        horizontal_ = Tensor({q, d2});
        auto glorot = [&](Tensor& w, std::size_t in, std::size_t out) {
          const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
          for (double& v : w.data()) v = rng.uniform(-bound, bound);
        };
        glorot(lateral_, n, q);
        glorot(vertical_, d1, d1);
        glorot(horizontal_, d2, d2);
        lateral_grad_ = Tensor(lateral_.shape());
        vertical_grad_ = Tensor(vertical_.shape());
        horizontal_grad_ = Tensor(horizontal_.shape());
        break;
      }
    }
  }

  std::string_view kind() const override { return "conv"; }
  ConvMode mode() const { return mode_; }
  const ConvGeometry& geometry() const { return geo_; }

  Shape output_shape(const Shape& input) const override {
    if (input.size() != 3 || input[0] != geo_.in_channels) {
      throw ShapeError("conv: expected input [" + std::to_string(geo_.in_channels) +
                       ",H,W], got " + to_string(input));
    }
    const AxisWindow rows(input[1], geo_.height, geo_.padding, geo_.stride);
    const AxisWindow cols(input[2], geo_.width, geo_.padding, geo_.stride);
    return {geo_.out_channels, rows.out, cols.out};
  }

  Tensor& bias() { return bias_; }
  const Tensor& bias() const { return bias_; }
  const Tensor& bias_grad() const { return bias_grad_; }

  // standard mode
  Tensor& dense_weights() { return dense_; }
  const Tensor& dense_grad() const { return dense_grad_; }

  // rank1 mode
  std::vector<Rank1Filter>& filters() { return filters_; }
  const std::vector<Rank1Filter>& filters() const { return filters_; }
  const std::vector<FactorGrads>& factor_grads() const { return factor_grads_; }

  // sequential mode: row m holds the kernels of output channel m
  Tensor& lateral() { return lateral_; }
  Tensor& vertical() { return vertical_; }
  Tensor& horizontal() { return horizontal_; }
  const Tensor& lateral_grad() const { return lateral_grad_; }
  const Tensor& vertical_grad() const { return vertical_grad_; }
  const Tensor& horizontal_grad() const { return horizontal_grad_; }

  /// Dense [N, d1, d2] filter of output channel m, whatever the mode.
  Tensor effective_filter(std::size_t m) const {
    const std::size_t n = geo_.in_channels, d1 = geo_.height, d2 = geo_.width;
    switch (mode_) {
      case ConvMode::standard: {
        const auto first = dense_.data().begin() + static_cast<std::ptrdiff_t>(m * n * d1 * d2);
        return Tensor({n, d1, d2}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n * d1 * d2)));
      }
      case ConvMode::rank1: return compose(filters_.at(m));
      case ConvMode::sequential:
        return outer3(row(vertical_, m), row(horizontal_, m), row(lateral_, m));
    }
    return {};
  }

  /// All filters stacked as [q, N, d1, d2].
  Tensor effective_filters() const {
    const std::size_t k = geo_.in_channels * geo_.height * geo_.width;
    Tensor out({geo_.out_channels, geo_.in_channels, geo_.height, geo_.width});
    for (std::size_t m = 0; m < geo_.out_channels; ++m) {
      const Tensor f = effective_filter(m);
      std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(m * k));
    }
    return out;
  }

  ParamCount parameter_count() const {
    const ParamCount per = param_count(geo_.height, geo_.width, geo_.in_channels);
    return {per.factored * geo_.out_channels + geo_.out_channels,
            per.dense * geo_.out_channels + geo_.out_channels};
  }

  Tensor forward(const Tensor& x, Phase) override {
    require_batch(x, 4, "conv");
    const std::size_t batch = x.dim(0);
    const Shape out_sample = output_shape({x.dim(1), x.dim(2), x.dim(3)});
    input_shape_ = x.shape();
    Tensor y({batch, out_sample[0], out_sample[1], out_sample[2]});
    if (mode_ == ConvMode::sequential) {
      forward_sequential(x, y);
    } else {
      forward_dense(x, y);
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (input_shape_.empty()) throw ShapeError("conv: backward called before forward");
    const std::size_t batch = input_shape_[0];
    const Shape out_sample = output_shape({input_shape_[1], input_shape_[2], input_shape_[3]});
    if (dy.shape() != Shape{batch, out_sample[0], out_sample[1], out_sample[2]}) {
      throw ShapeError("conv: gradient shape " + to_string(dy.shape()) + " does not match output");
    }
    Tensor dx(input_shape_);
    const std::size_t spatial = out_sample[1] * out_sample[2];
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t m = 0; m < geo_.out_channels; ++m) {
        double s = 0.0;
        const double* g = dy.data().data() + (b * geo_.out_channels + m) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += g[i];
        bias_grad_[m] += s;
      }
    }
    if (mode_ == ConvMode::sequential) {
      backward_sequential(dy, dx);
    } else {
      backward_dense(dy, dx);
    }
    return dx;
  }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> ps;
    switch (mode_) {
      case ConvMode::standard:
        ps.push_back({"weight", &dense_, &dense_grad_});
        break;
      case ConvMode::rank1:
        for (std::size_t m = 0; m < filters_.size(); ++m) {
          const std::string f = "filter" + std::to_string(m);
          ps.push_back({f + ".p", &filters_[m].mutable_p(), &factor_grads_[m].dp});
          ps.push_back({f + ".q", &filters_[m].mutable_q(), &factor_grads_[m].dq});
          ps.push_back({f + ".t", &filters_[m].mutable_t(), &factor_grads_[m].dt});
        }
        break;
      case ConvMode::sequential:
        ps.push_back({"lateral", &lateral_, &lateral_grad_});
        ps.push_back({"vertical", &vertical_, &vertical_grad_});
        ps.push_back({"horizontal", &horizontal_, &horizontal_grad_});
        break;
    }
    ps.push_back({"bias", &bias_, &bias_grad_});
    return ps;
  }

  void sgd_step(double lr, double momentum) override {
    if (mode_ != ConvMode::rank1) {
      Layer::sgd_step(lr, momentum);
      return;
    }
    auto ps = params();
    auto steps = directions(ps, momentum);
    for (std::size_t m = 0; m < filters_.size(); ++m) {
      const FactorGrads g{std::move(steps[3 * m]), std::move(steps[3 * m + 1]), std::move(steps[3 * m + 2])};
      filters_[m] = projected_update(filters_[m], g, lr);
    }
    bias_.axpy(-lr, steps.back());
  }

 private:
  static Tensor row(const Tensor& m, std::size_t r) {
    const std::size_t c = m.dim(1);
    const auto first = m.data().begin() + static_cast<std::ptrdiff_t>(r * c);
    return Tensor({c}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(c)));
  }

  std::size_t filter_size() const { return geo_.in_channels * geo_.height * geo_.width; }

  /// [q, N*d1*d2] filter bank used by the im2col route.
  void refresh_bank() {
    if (mode_ == ConvMode::standard) {
      bank_ = dense_.reshaped({geo_.out_channels, filter_size()});
      return;
    }
    bank_ = Tensor({geo_.out_channels, filter_size()});
    for (std::size_t m = 0; m < filters_.size(); ++m) {
      const Tensor& w = filters_[m].compose();
      std::copy(w.data().begin(), w.data().end(),
                bank_.data().begin() + static_cast<std::ptrdiff_t>(m * filter_size()));
    }
  }

  void forward_dense(const Tensor& x, Tensor& y) {
    refresh_bank();
    const std::size_t batch = x.dim(0);
    const std::size_t q = geo_.out_channels;
    const std::size_t spatial = y.dim(2) * y.dim(3);
    columns_.assign(batch, Tensor());
    parallel_for(batch, worker_count(batch), [&](std::size_t begin, std::size_t end, std::size_t) {
      for (std::size_t b = begin; b < end; ++b) {
        columns_[b] = im2col(sample_of(x, b), geo_.height, geo_.width, geo_.padding, geo_.stride);
        std::span<double> out = y.data().subspan(b * q * spatial, q * spatial);
        for (std::size_t m = 0; m < q; ++m) {
          std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(m * spatial), spatial, bias_[m]);
        }
        gemm(false, false, q, spatial, filter_size(), 1.0, bank_.data(), columns_[b].data(), 1.0, out);
      }
    });
  }

  void backward_dense(const Tensor& dy, Tensor& dx) {
    const std::size_t batch = input_shape_[0];
    const std::size_t n = input_shape_[1], h = input_shape_[2], w = input_shape_[3];
    const std::size_t q = geo_.out_channels, k = filter_size();
    const std::size_t spatial = dy.dim(2) * dy.dim(3);
    const std::size_t workers = worker_count(batch);
    std::vector<Tensor> partial(workers, Tensor({q, k}));
    parallel_for(batch, workers, [&](std::size_t begin, std::size_t end, std::size_t worker) {
      Tensor dcols({k, spatial});
      for (std::size_t b = begin; b < end; ++b) {
        const auto g = dy.data().subspan(b * q * spatial, q * spatial);
        gemm(false, true, q, k, spatial, 1.0, g, columns_[b].data(), 1.0, partial[worker].data());
        gemm(true, false, k, spatial, q, 1.0, bank_.data(), g, 0.0, dcols.data());
        store_sample(dx, b, col2im(dcols, n, h, w, geo_.height, geo_.width, geo_.padding, geo_.stride));
      }
    });
    Tensor dbank({q, k});
    for (const Tensor& p : partial) dbank += p;
    if (mode_ == ConvMode::standard) {
      dense_grad_ += dbank.reshaped(dense_grad_.shape());
      return;
    }
    for (std::size_t m = 0; m < filters_.size(); ++m) {
      const auto first = dbank.data().begin() + static_cast<std::ptrdiff_t>(m * k);
      const Tensor dw(filters_[m].dense_shape(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(k)));
      const FactorGrads g = backprop_factors(filters_[m], dw);
      factor_grads_[m].dp += g.dp;
      factor_grads_[m].dq += g.dq;
      factor_grads_[m].dt += g.dt;
    }
  }

  // Sequential pipeline per sample: lateral contraction Z = T X, vertical
  // pass V = corr_v(Z, P), horizontal pass O = corr_h(V, Q), then stride.
  void forward_sequential(const Tensor& x, Tensor& y) {
    const std::size_t batch = x.dim(0);
    const std::size_t n = x.dim(1), h = x.dim(2), w = x.dim(3), q = geo_.out_channels;
    lateral_out_.assign(batch, Tensor());
    vertical_out_.assign(batch, Tensor());
    inputs_ = x;
    parallel_for(batch, worker_count(batch), [&](std::size_t begin, std::size_t end, std::size_t) {
      for (std::size_t b = begin; b < end; ++b) {
        Tensor z({q, h, w});
        gemm(false, false, q, h * w, n, 1.0, lateral_.data(), x.data().subspan(b * n * h * w, n * h * w), 0.0,
             z.data());
        Tensor v = correlate_lines(z, vertical_, Axis::vertical, geo_.padding);
        Tensor o = subsample(correlate_lines(v, horizontal_, Axis::horizontal, geo_.padding), geo_.stride);
        const std::size_t spatial = o.dim(1) * o.dim(2);
        for (std::size_t m = 0; m < q; ++m)
          for (std::size_t i = 0; i < spatial; ++i) o[m * spatial + i] += bias_[m];
        store_sample(y, b, o);
        lateral_out_[b] = std::move(z);
        vertical_out_[b] = std::move(v);
      }
    });
  }

  void backward_sequential(const Tensor& dy, Tensor& dx) {
    const std::size_t batch = input_shape_[0];
    const std::size_t n = input_shape_[1], h = input_shape_[2], w = input_shape_[3], q = geo_.out_channels;
    const std::size_t workers = worker_count(batch);
    struct Partial {
      Tensor lateral, vertical, horizontal;
    };
    std::vector<Partial> partial(workers, Partial{Tensor(lateral_.shape()), Tensor(vertical_.shape()),
                                                  Tensor(horizontal_.shape())});
    parallel_for(batch, workers, [&](std::size_t begin, std::size_t end, std::size_t worker) {
      for (std::size_t b = begin; b < end; ++b) {
        const Tensor& v = vertical_out_[b];
        const Tensor dout = strided_grad(sample_of(dy, b), v);
        const LineGrads gh = correlate_lines_backward(v, horizontal_, Axis::horizontal, geo_.padding, dout);
        const LineGrads gv = correlate_lines_backward(lateral_out_[b], vertical_, Axis::vertical, geo_.padding, gh.input);
        partial[worker].horizontal += gh.kernels;
        partial[worker].vertical += gv.kernels;
        const auto xb = inputs_.data().subspan(b * n * h * w, n * h * w);
        gemm(false, true, q, n, h * w, 1.0, gv.input.data(), xb, 1.0, partial[worker].lateral.data());
        gemm(true, false, n, h * w, q, 1.0, lateral_.data(), gv.input.data(), 0.0,
             dx.data().subspan(b * n * h * w, n * h * w));
      }
    });
    for (const auto& p : partial) {
      lateral_grad_ += p.lateral;
      vertical_grad_ += p.vertical;
      horizontal_grad_ += p.horizontal;
    }
  }

  /// Gradient of the unstrided horizontal output given the strided one.
  Tensor strided_grad(const Tensor& g, const Tensor& vertical_out) const {
    if (geo_.stride == 1) return g;
    const std::size_t full_w =
        AxisWindow(vertical_out.dim(2), geo_.width, geo_.padding).out;
    return upsample_zero(g, vertical_out.dim(1), full_w, geo_.stride);
  }

  ConvMode mode_;
  ConvGeometry geo_;
  Tensor bias_, bias_grad_;
  Tensor dense_, dense_grad_;
  std::vector<Rank1Filter> filters_;
  std::vector<FactorGrads> factor_grads_;
  Tensor lateral_, vertical_, horizontal_;
  Tensor lateral_grad_, vertical_grad_, horizontal_grad_;

  // forward caches
  Shape input_shape_;
  Tensor bank_;
  std::vector<Tensor> columns_;
  Tensor inputs_;
  std::vector<Tensor> lateral_out_, vertical_out_;
};

class ReLU : public Layer {
 public:
  std::string_view kind() const override { return "relu"; }
  Shape output_shape(const Shape& input) const override { return input; }

  Tensor forward(const Tensor& x, Phase) override {
    input_ = x;
    Tensor y = x;
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (dy.shape() != input_.shape()) throw ShapeError("relu: gradient shape mismatch");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(input_[i] > 0.0)) dx[i] = 0.0;
    }
    return dx;
  }

 private:
  Tensor input_;
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
class MaxPool2 : public Layer {
 public:
  std::string_view kind() const override { return "maxpool"; }

  Shape output_shape(const Shape& input) const override {
    if (input.size() != 3 || input[1] < 2 || input[2] < 2) {
      throw ShapeError("maxpool: input " + to_string(input) + " too small to halve");
    }
    return {input[0], input[1] / 2, input[2] / 2};
  }

  Tensor forward(const Tensor& x, Phase) override {
    require_batch(x, 4, "maxpool");
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Shape o = output_shape({c, h, w});
    input_shape_ = x.shape();
    Tensor y({b, c, o[1], o[2]});
    winners_.assign(y.size(), 0);
    std::size_t flat = 0;
    for (std::size_t n = 0; n < b * c; ++n) {
      const std::size_t base = n * h * w;
      for (std::size_t oy = 0; oy < o[1]; ++oy) {
        for (std::size_t ox = 0; ox < o[2]; ++ox) {
          std::size_t best = base + 2 * oy * w + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t at = base + (2 * oy + dy) * w + 2 * ox + dx;
              if (x[at] > x[best]) best = at;
            }
          }
          y[flat] = x[best];
          winners_[flat++] = best;
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (dy.size() != winners_.size()) throw ShapeError("maxpool: gradient shape mismatch");
    Tensor dx(input_shape_);
    for (std::size_t i = 0; i < winners_.size(); ++i) dx[winners_[i]] += dy[i];
    return dx;
  }

 private:
  Shape input_shape_;
  std::vector<std::size_t> winners_;
};

/// Inverted dropout: active only in the training phase.
class Dropout : public Layer {
 public:
  Dropout(double prob, Rng rng) : prob_(prob), rng_(rng) {
    if (!(prob >= 0.0 && prob < 1.0)) throw ValueError("dropout: probability must lie in [0, 1)");
  }

  std::string_view kind() const override { return "dropout"; }
  Shape output_shape(const Shape& input) const override { return input; }
  double probability() const { return prob_; }

  Tensor forward(const Tensor& x, Phase phase) override {
    if (phase == Phase::eval || prob_ == 0.0) {
      mask_ = Tensor();
      return x;
    }
    mask_ = Tensor(x.shape());
    const double keep = 1.0 / (1.0 - prob_);
    for (double& m : mask_.data()) m = rng_.bernoulli(prob_) ? 0.0 : keep;
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask_[i];
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (mask_.empty()) return dy;
    if (dy.shape() != mask_.shape()) throw ShapeError("dropout: gradient shape mismatch");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }

 private:
  double prob_;
  Rng rng_;
  Tensor mask_;
};

/// Batch normalization per channel ([B, C, H, W]) or per feature ([B, F]).
///
/// Running statistics follow running = momentum * running + (1 - momentum) * batch
/// and replace the batch statistics in the eval phase.
class BatchNorm : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.9, double epsilon = 1e-5)
      : momentum_(momentum), epsilon_(epsilon) {
    if (!(epsilon > 0.0)) throw ValueError("batchnorm: epsilon must be positive");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ValueError("batchnorm: momentum must lie in [0, 1]");
    if (channels == 0) throw ShapeError("batchnorm: zero channels");
    gamma_ = Tensor({channels}, 1.0);
    beta_ = Tensor({channels});
    gamma_grad_ = Tensor({channels});
    beta_grad_ = Tensor({channels});
    running_mean_ = Tensor({channels});
    running_var_ = Tensor({channels}, 1.0);
  }

  std::string_view kind() const override { return "batchnorm"; }
  Shape output_shape(const Shape& input) const override {
    if (input.empty() || input[0] != gamma_.size()) {
      throw ShapeError("batchnorm: expected " + std::to_string(gamma_.size()) + " channels, got " +
                       to_string(input));
    }
    return input;
  }

  double epsilon() const { return epsilon_; }
  double momentum() const { return momentum_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

  Tensor forward(const Tensor& x, Phase phase) override {
    if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batchnorm: expected rank 2 or 4 batch");
    const std::size_t c = gamma_.size();
    if (x.dim(1) != c) throw ShapeError("batchnorm: channel count mismatch");
    const std::size_t b = x.dim(0);
    inner_ = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const double count = static_cast<double>(b * inner_);
    Tensor mean({c}), var({c});
    if (phase == Phase::train) {
      for_each(x, [&](std::size_t ch, double v) { mean[ch] += v; });
      mean *= 1.0 / count;
      for_each(x, [&](std::size_t ch, double v) { var[ch] += (v - mean[ch]) * (v - mean[ch]); });
      var *= 1.0 / count;
      const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        running_mean_[ch] = momentum_ * running_mean_[ch] + (1.0 - momentum_) * mean[ch];
        running_var_[ch] = momentum_ * running_var_[ch] + (1.0 - momentum_) * var[ch] * unbias;
      }
    } else {
      mean = running_mean_;
      var = running_var_;
    }
    inv_std_ = Tensor({c});
    for (std::size_t ch = 0; ch < c; ++ch) inv_std_[ch] = 1.0 / std::sqrt(var[ch] + epsilon_);
    normalized_ = Tensor(x.shape());
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t ch = (i / inner_) % c;
      normalized_[i] = (x[i] - mean[ch]) * inv_std_[ch];
      y[i] = gamma_[ch] * normalized_[i] + beta_[ch];
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    if (dy.shape() != normalized_.shape()) throw ShapeError("batchnorm: gradient shape mismatch");
    const std::size_t c = gamma_.size();
    const double count = static_cast<double>(dy.size() / c);
    Tensor sum_dy({c}), sum_dy_xhat({c});
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const std::size_t ch = (i / inner_) % c;
      sum_dy[ch] += dy[i];
      sum_dy_xhat[ch] += dy[i] * normalized_[i];
    }
    beta_grad_ += sum_dy;
    gamma_grad_ += sum_dy_xhat;
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const std::size_t ch = (i / inner_) % c;
      dx[i] = gamma_[ch] * inv_std_[ch] / count *
              (count * dy[i] - sum_dy[ch] - normalized_[i] * sum_dy_xhat[ch]);
    }
    return dx;
  }

  std::vector<ParamRef> params() override {
    return {{"gamma", &gamma_, &gamma_grad_}, {"beta", &beta_, &beta_grad_}};
  }

  std::vector<ParamRef> buffers() override {
    return {{"running_mean", &running_mean_, nullptr}, {"running_var", &running_var_, nullptr}};
  }

 private:
  template <typename Fn>
  void for_each(const Tensor& x, Fn&& fn) const {
    const std::size_t c = gamma_.size();
    for (std::size_t i = 0; i < x.size(); ++i) fn((i / inner_) % c, x[i]);
  }

  double momentum_, epsilon_;
  Tensor gamma_, beta_, gamma_grad_, beta_grad_;
  Tensor running_mean_, running_var_;
  std::size_t inner_ = 1;
  Tensor inv_std_, normalized_;
};

/// [B, C, H, W] -> [B, C*H*W].
class Flatten : public Layer {
 public:
  std::string_view kind() const override { return "flatten"; }
  Shape output_shape(const Shape& input) const override { return {shape_size(input)}; }

  Tensor forward(const Tensor& x, Phase) override {
    input_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }

  Tensor backward(const Tensor& dy) override { return dy.reshaped(input_shape_); }

 private:
  Shape input_shape_;
};

/// y = x W^T + b with W [out, in].
class FullyConnected : public Layer {
 public:
  FullyConnected(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) throw ShapeError("fc: zero width");
    weight_ = Tensor({out, in});
    bias_ = Tensor({out});
    weight_grad_ = Tensor(weight_.shape());
    bias_grad_ = Tensor(bias_.shape());
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : weight_.data()) w = rng.uniform(-bound, bound);
  }

  std::string_view kind() const override { return "fc"; }
  Shape output_shape(const Shape& input) const override {
    if (shape_size(input) != weight_.dim(1)) {
      throw ShapeError("fc: expected " + std::to_string(weight_.dim(1)) + " inputs, got " + to_string(input));
    }
    return {weight_.dim(0)};
  }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

  Tensor forward(const Tensor& x, Phase) override {
    require_batch(x, 2, "fc");
    const std::size_t b = x.dim(0), in = weight_.dim(1), out = weight_.dim(0);
    if (x.dim(1) != in) throw ShapeError("fc: input width mismatch");
    input_ = x;
    Tensor y({b, out});
    for (std::size_t r = 0; r < b; ++r) std::copy(bias_.data().begin(), bias_.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(r * out));
    gemm(false, true, b, out, in, 1.0, x.data(), weight_.data(), 1.0, y.data());
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const std::size_t b = input_.dim(0), in = weight_.dim(1), out = weight_.dim(0);
    if (dy.shape() != Shape{b, out}) throw ShapeError("fc: gradient shape mismatch");
    gemm(true, false, out, in, b, 1.0, dy.data(), input_.data(), 1.0, weight_grad_.data());
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < out; ++j) bias_grad_[j] += dy[r * out + j];
    Tensor dx({b, in});
    gemm(false, false, b, in, out, 1.0, dy.data(), weight_.data(), 0.0, dx.data());
    return dx;
  }

  std::vector<ParamRef> params() override {
    return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
  }

 private:
  Tensor weight_, bias_, weight_grad_, bias_grad_;
  Tensor input_;
};

struct LossAndGrad {
  double loss = 0.0;
  Tensor dlogits;
};

/// Mean softmax cross-entropy over a [B, C] batch of logits.
inline LossAndGrad softmax_xent(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_xent");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) throw ShapeError("softmax_xent: one label per row required");
  LossAndGrad out{0.0, Tensor(logits.shape())};
  for (std::size_t r = 0; r < b; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= c) throw ValueError("softmax_xent: label out of range");
    const auto row = logits.data().subspan(r * c, c);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    out.loss += log_z - row[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < c; ++j) {
      const double prob = std::exp(row[j] - log_z);
      out.dlogits[r * c + j] = (prob - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0)) / static_cast<double>(b);
    }
  }
  out.loss /= static_cast<double>(b);
  return out;
}

/// Single-sample form: logits [C].
inline LossAndGrad softmax_xent(const Tensor& logits, int label) {
  require_rank(logits, 1, "softmax_xent");
  const int labels[1] = {label};
  LossAndGrad r = softmax_xent(logits.reshaped({1, logits.size()}), labels);
  r.dlogits = r.dlogits.reshaped({logits.size()});
  return r;
}

}  // namespace rank1
