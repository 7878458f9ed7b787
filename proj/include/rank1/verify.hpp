#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "rank1/conv.hpp"
#include "rank1/data.hpp"
#include "rank1/hankel.hpp"
#include "rank1/linalg.hpp"
#include "rank1/network.hpp"
#include "rank1/rank1_filter.hpp"
#include "rank1/training.hpp"

namespace rank1 {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Rank1Filter random_rank1_filter(std::size_t d1, std::size_t d2, std::size_t n, Rng& rng) {
  return Rank1Filter(random_tensor({d1}, rng), random_tensor({d2}, rng), random_tensor({n}, rng));
}

/// Three-pass 1-D pipeline for a rank-1 filter: contract channels with t, then
/// correlate rows with p and columns with q (or columns first). Returns [H', W'].
inline Tensor separable_conv(const Tensor& input, const Rank1Filter& f, PaddingMode padding,
                             bool horizontal_first = false) {
  Tensor z = conv1d_axis(input, f.t(), Axis::channel, padding);
  if (horizontal_first) {
    z = conv1d_axis(conv1d_axis(z, f.q(), Axis::horizontal, padding), f.p(), Axis::vertical, padding);
  } else {
    z = conv1d_axis(conv1d_axis(z, f.p(), Axis::vertical, padding), f.q(), Axis::horizontal, padding);
  }
  return z.reshaped({z.dim(1), z.dim(2)});
}

/// Relative error between the dense convolution with compose(f) and the
/// 1-D pipeline, the worse of both spatial orders.
inline double separability_error(const Tensor& input, const Rank1Filter& f, PaddingMode padding) {
  const Tensor dense = conv2d_multi(input, compose(f), padding, 1);
  return std::max(relative_error(dense, separable_conv(input, f, padding, false)),
                  relative_error(dense, separable_conv(input, f, padding, true)));
}

/// Largest absolute deviation between the columns of Y = H W and the circular
/// convolutions of `inputs` with each filter of `bank`.
inline double hankel_equivalence_error(const Tensor& inputs, const Tensor& bank) {
  const HankelSystem sys = assemble_system(inputs, bank);
  double worst = 0.0;
  for (std::size_t m = 0; m < sys.filters; ++m) {
    const Tensor direct = conv2d_multi(inputs, sample_of(bank, m), PaddingMode::circular, 1);
    worst = std::max(worst, max_abs_diff(sys.output(m), direct));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

inline double network_loss(Network& net, const Tensor& x, std::span<const int> labels) {
  return softmax_xent(net.forward(x, Phase::train), labels).loss;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // parameter with the largest error
  std::size_t entries = 0;
};

/// Compare backprop gradients of the mean cross-entropy with central
/// differences, one parameter tensor at a time. The error of a tensor is
/// max|analytic - numeric| / max(max|analytic|, max|numeric|).
inline GradCheck gradient_check(Network& net, const Tensor& x, std::span<const int> labels, double step = 1e-6) {
  net.zero_grad();
  net.backward(softmax_xent(net.forward(x, Phase::train), labels).dlogits);
  GradCheck out;
  for (const ParamRef& p : net.params()) {
    const Tensor analytic = *p.grad;
    Tensor numeric(p.value->shape());
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      const double saved = (*p.value)[i];
      (*p.value)[i] = saved + step;
      const double up = network_loss(net, x, labels);
      (*p.value)[i] = saved - step;
      const double down = network_loss(net, x, labels);
      (*p.value)[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    out.entries += p.value->size();
    const double err = relative_error(analytic, numeric);
    if (err >= out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = p.name;
    }
  }
  return out;
}

/// Two 3x3 conv layers and a classifier on 4 x 6 x 6 input. No piecewise
/// linear layers, so central differences are smooth everywhere.
inline NetworkSpec micro_net_spec(std::size_t classes = 3) {
  NetworkSpec s;
  s.name = "micro";
  s.in_channels = 4;
  s.in_height = 6;
  s.in_width = 6;
  s.classes = classes;
  s.layers = {LayerSpec::conv(3, 3, 3), LayerSpec::conv(2, 3, 3), LayerSpec::fc(classes)};
  return s;
}

// ---------------------------------------------------------------------------
// verify command
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 7;
  std::size_t separability_cases = 200;
  std::size_t gradient_nets = 10;
  std::size_t training_steps = 60;
  std::size_t hankel_trials = 50;
};

namespace detail {

template <typename Fn>
CheckResult timed_check(const std::string& name, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r{name, false, "", 0.0};
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("error: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

}  // namespace detail

inline CheckResult check_separability(std::size_t cases, std::uint64_t seed) {
  return detail::timed_check("separability", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    const PaddingMode modes[] = {PaddingMode::valid, PaddingMode::same, PaddingMode::circular};
    for (std::size_t c = 0; c < cases; ++c) {
      const std::size_t n = 1 + rng.index(8), h = 3 + rng.index(10), w = 3 + rng.index(10);
      const Tensor x = random_tensor({n, h, w}, rng);
      const Rank1Filter f = random_rank1_filter(3, 3, n, rng);
      worst = std::max(worst, separability_error(x, f, modes[c % 3]));
    }
    r.passed = worst <= 1e-10;
    r.detail = std::to_string(cases) + " cases, max rel err " + detail::sci(worst) + " (tol 1e-10)";
  });
}

inline CheckResult check_gradients(std::size_t nets, std::uint64_t seed) {
  return detail::timed_check("gradients", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    std::string where;
    const ConvMode modes[] = {ConvMode::rank1, ConvMode::standard, ConvMode::sequential};
    for (std::size_t i = 0; i < nets; ++i) {
      const ConvMode mode = modes[i % 3];
      Network net(micro_net_spec(), mode, rng.bits());
      const Tensor x = random_tensor({2, 4, 6, 6}, rng);
      const std::vector<int> labels{static_cast<int>(rng.index(3)), static_cast<int>(rng.index(3))};
      const GradCheck g = gradient_check(net, x, labels);
      if (g.max_rel_error >= worst) {
        worst = g.max_rel_error;
        where = std::string(to_string(mode)) + " " + g.worst;
      }
    }
    r.passed = worst <= 1e-5;
    r.detail = std::to_string(nets) + " micro-nets, max rel err " + detail::sci(worst) + " at " + where +
               " (tol 1e-5)";
  });
}

inline CheckResult check_rank1_preservation(std::size_t steps, std::uint64_t seed) {
  return detail::timed_check("rank1-preservation", [&](CheckResult& r) {
    NetworkSpec spec = micro_net_spec(4);
    spec.layers = {LayerSpec::conv(6, 3, 3), LayerSpec::relu(), LayerSpec::maxpool(), LayerSpec::conv(8, 3, 3),
                   LayerSpec::relu(), LayerSpec::fc(4)};
    const Dataset data = synth_blobs(4, 32, {4, 6, 6}, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.1;
    cfg.epochs = steps;
    cfg.max_iterations = steps;
    Network net(spec, ConvMode::rank1, seed);
    double worst = 0.0;
    std::size_t checked = 0;
    train(net, data, nullptr, cfg, [&](std::size_t, Network& n) {
      for (ConvLayer* conv : n.conv_layers()) {
        for (const Rank1Filter& f : conv->filters()) {
          worst = std::max(worst, rank1_defect(compose(f)));
          ++checked;
        }
      }
    });
    r.passed = worst <= 1e-10 && checked > 0;
    r.detail = std::to_string(steps) + " steps, " + std::to_string(checked) + " filter checks, max sigma2/sigma1 " +
               detail::sci(worst) + " (tol 1e-10)";
  });
}

inline CheckResult check_hankel_equivalence(std::uint64_t seed) {
  return detail::timed_check("hankel-equivalence", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    std::size_t systems = 0;
    for (std::size_t n1 = 1; n1 <= 8; n1 += 3) {
      for (std::size_t n2 = 1; n2 <= 8; n2 += 2) {
        for (std::size_t d1 = 1; d1 <= n1; d1 += 2) {
          for (std::size_t d2 = 1; d2 <= n2; d2 += 3) {
            const std::size_t n = 1 + rng.index(4), q = 1 + rng.index(4);
            const Tensor x = random_tensor({n, n1, n2}, rng);
            const Tensor bank = random_tensor({q, n, d1, d2}, rng);
            worst = std::max(worst, hankel_equivalence_error(x, bank));
            ++systems;
          }
        }
      }
    }
    r.passed = worst <= 1e-12;
    r.detail = std::to_string(systems) + " systems, max abs err " + detail::sci(worst) + " (tol 1e-12)";
  });
}

inline CheckResult check_rank_bound(std::size_t trials, std::uint64_t seed) {
  return detail::timed_check("rank-bound", [&](CheckResult& r) {
    RankBoundParams params;
    params.trials = trials;
    params.seed = seed;
    const RankBoundReport report = rank_bound_experiment(params);
    const std::size_t ok = report.satisfied("rank1");
    const std::size_t dense_over = report.exceeding("dense");
    r.passed = ok == trials && 5 * dense_over >= 4 * trials;
    r.detail = "rank1 " + std::to_string(ok) + "/" + std::to_string(trials) + " within bound, dense " +
               std::to_string(dense_over) + "/" + std::to_string(trials) + " above min(N, q)";
  });
}

inline std::vector<CheckResult> run_verify(const VerifyOptions& opt = {}) {
  return {check_separability(opt.separability_cases, opt.seed),
          check_gradients(opt.gradient_nets, opt.seed + 1),
          check_rank1_preservation(opt.training_steps, opt.seed + 2),
          check_hankel_equivalence(opt.seed + 3),
          check_rank_bound(opt.hankel_trials, opt.seed + 4)};
}

}  // namespace rank1
