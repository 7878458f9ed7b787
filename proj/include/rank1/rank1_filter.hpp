#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>

#include "rank1/random.hpp"
#include "rank1/tensor.hpp"

namespace rank1 {

/// Gradients of the loss with respect to the three factors of a Rank1Filter.
struct FactorGrads {
  Tensor dp;  // [d1]
  Tensor dq;  // [d2]
  Tensor dt;  // [N]
};

struct ParamCount {
  std::size_t factored = 0;
  std::size_t dense = 0;

  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

/// A 3-D filter w[k, i, j] = p[i] * q[j] * t[k] held by its factors.
///
/// p runs down the rows (vertical), q along the columns (horizontal) and t
/// across input channels (lateral). The dense [N, d1, d2] filter is cached by
/// compose(); any mutable access to a factor drops the cache.
class Rank1Filter {
 public:
  Rank1Filter() = default;

  Rank1Filter(Tensor p, Tensor q, Tensor t) : p_(std::move(p)), q_(std::move(q)), t_(std::move(t)) {
    if (p_.rank() != 1 || q_.rank() != 1 || t_.rank() != 1) {
      throw ShapeError("Rank1Filter: factors must be nonempty rank-1 tensors");
    }
  }

  const Tensor& p() const { return p_; }
  const Tensor& q() const { return q_; }
  const Tensor& t() const { return t_; }

  Tensor& mutable_p() { composed_.reset(); return p_; }
  Tensor& mutable_q() { composed_.reset(); return q_; }
  Tensor& mutable_t() { composed_.reset(); return t_; }

  std::size_t height() const { return p_.size(); }
  std::size_t width() const { return q_.size(); }
  std::size_t channels() const { return t_.size(); }
  Shape dense_shape() const { return {channels(), height(), width()}; }

  /// Rebuild the dense filter from the factors and cache it.
  const Tensor& compose() {
    composed_ = outer3(p_, q_, t_);
    return *composed_;
  }

  const std::optional<Tensor>& composed() const { return composed_; }

 private:
  Tensor p_, q_, t_;
  std::optional<Tensor> composed_;
};

/// Dense filter of the factors without touching any cache.
inline Tensor compose(const Rank1Filter& f) { return outer3(f.p(), f.q(), f.t()); }

/// Route a dense filter gradient dw [N, d1, d2] to the factors:
///   dp[i] = sum_{j,k} dw[k,i,j] q[j] t[k]
///   dq[j] = sum_{i,k} dw[k,i,j] p[i] t[k]
///   dt[k] = sum_{i,j} dw[k,i,j] p[i] q[j]
inline FactorGrads backprop_factors(const Rank1Filter& f, const Tensor& dw) {
  if (dw.shape() != f.dense_shape()) {
    throw ShapeError("backprop_factors: gradient shape " + to_string(dw.shape()) +
                     " does not match filter " + to_string(f.dense_shape()));
  }
  const std::size_t d1 = f.height(), d2 = f.width(), n = f.channels();
  FactorGrads g{Tensor({d1}), Tensor({d2}), Tensor({n})};
  const Tensor& p = f.p();
  const Tensor& q = f.q();
  const Tensor& t = f.t();
  std::size_t flat = 0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d1; ++i) {
      for (std::size_t j = 0; j < d2; ++j) {
        const double g_w = dw[flat++];
        g.dp[i] += g_w * q[j] * t[k];
        g.dq[j] += g_w * p[i] * t[k];
        g.dt[k] += g_w * p[i] * q[j];
      }
    }
  }
  return g;
}

/// Two-step update: move each factor against its gradient, then recompose.
/// The result is rank-1 by construction. alpha == 0 is a no-op.
inline Rank1Filter projected_update(const Rank1Filter& f, const FactorGrads& g, double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ValueError("projected_update: learning rate must be finite and non-negative");
  }
  if (g.dp.shape() != f.p().shape() || g.dq.shape() != f.q().shape() ||
      g.dt.shape() != f.t().shape()) {
    throw ShapeError("projected_update: gradient shapes do not match the factors");
  }
  Tensor p = f.p(), q = f.q(), t = f.t();
  p.axpy(-alpha, g.dp);
  q.axpy(-alpha, g.dq);
  t.axpy(-alpha, g.dt);
  Rank1Filter next(std::move(p), std::move(q), std::move(t));
  next.compose();
  return next;
}

inline ParamCount param_count(std::size_t d1, std::size_t d2, std::size_t n) {
  return {d1 + d2 + n, d1 * d2 * n};
}

inline ParamCount param_count(const Rank1Filter& f) {
  return param_count(f.height(), f.width(), f.channels());
}

/// Random factors whose composed filter has Glorot-uniform variance.
///
/// The target std of the dense filter is sqrt(2 / (fan_in + fan_out)). A
/// product of three independent zero-mean factors has variance equal to the
/// product of the factor variances, so each factor entry is drawn with std
/// equal to the cube root of the target.
inline Rank1Filter init_rank1_filter(std::size_t d1, std::size_t d2, std::size_t n,
                                     std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  const double target_std = bound / std::sqrt(3.0);
  const double factor_bound = std::sqrt(3.0) * std::cbrt(target_std);
  auto draw = [&](std::size_t len) {
    Tensor v({len});
    for (double& x : v.data()) x = rng.uniform(-factor_bound, factor_bound);
    return v;
  };
  Tensor p = draw(d1);
  Tensor q = draw(d2);
  Tensor t = draw(n);
  Rank1Filter f(std::move(p), std::move(q), std::move(t));
  f.compose();
  return f;
}

}  // namespace rank1
