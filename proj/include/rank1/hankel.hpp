#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "rank1/layers.hpp"
#include "rank1/linalg.hpp"
#include "rank1/random.hpp"
#include "rank1/tensor.hpp"

namespace rank1 {

// Wrap-around Hankel matrices and the matrix form of multi-channel
// convolution. Images are [n1, n2] with n1 rows; VEC stacks columns, so pixel
// (r, c) of an n1 x n2 image sits at c * n1 + r. With these conventions
// VEC(Y) = H VEC(K) reproduces the circular cross-correlation of the layers
// (PaddingMode::circular) with kernel K unflipped; a true convolution with w
// corresponds to K = flip(w).

/// H[r, c] = f[(r + c) mod n] for an n-vector f and 1 <= d <= n columns.
inline Tensor hankel_1d(const Tensor& f, std::size_t d) {
  require_rank(f, 1, "hankel_1d");
  const std::size_t n = f.size();
  if (d == 0 || d > n) throw ShapeError("hankel_1d: column count must lie in [1, " + std::to_string(n) + "]");
  Tensor h({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) h[r * d + c] = f[(r + c) % n];
  return h;
}

/// Column-stacking vectorization of a matrix.
inline Tensor vec(const Tensor& m) {
  require_rank(m, 2, "vec");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor v({rows * cols});
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r) v[c * rows + r] = m[r * cols + c];
  return v;
}

/// Inverse of vec for a rows x cols matrix.
inline Tensor unvec(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) throw ShapeError("unvec: length mismatch");
  Tensor m({rows, cols});
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r) m[r * cols + c] = v[c * rows + r];
  return m;
}

/// Block Hankel matrix of an [n1, n2] image: block (a, b) is
/// hankel_1d(column (a + b) mod n2, d1), giving an [n1*n2, d1*d2] matrix.
inline Tensor hankel_2d(const Tensor& x, std::size_t d1, std::size_t d2) {
  require_rank(x, 2, "hankel_2d");
  const std::size_t n1 = x.dim(0), n2 = x.dim(1);
  if (d1 == 0 || d1 > n1 || d2 == 0 || d2 > n2) {
    throw ShapeError("hankel_2d: filter " + std::to_string(d1) + "x" + std::to_string(d2) +
                     " does not fit image " + to_string(x.shape()));
  }
  Tensor h({n1 * n2, d1 * d2});
  const std::size_t cols = d1 * d2;
  for (std::size_t a = 0; a < n2; ++a)
    for (std::size_t r = 0; r < n1; ++r)
      for (std::size_t b = 0; b < d2; ++b)
        for (std::size_t c = 0; c < d1; ++c) h[(a * n1 + r) * cols + b * d1 + c] = x(((r + c) % n1), ((a + b) % n2));
  return h;
}

/// [hankel_2d(X1) ... hankel_2d(XN)] for a stack of N images [N, n1, n2].
inline Tensor hankel_multi(const Tensor& x, std::size_t d1, std::size_t d2) {
  require_rank(x, 3, "hankel_multi");
  const std::size_t n = x.dim(0), n1 = x.dim(1), n2 = x.dim(2);
  const std::size_t block = d1 * d2, cols = n * block;
  Tensor h({n1 * n2, cols});
  for (std::size_t s = 0; s < n; ++s) {
    const Tensor hs = hankel_2d(sample_of(x, s), d1, d2);
    for (std::size_t row = 0; row < n1 * n2; ++row)
      std::copy_n(hs.data().begin() + static_cast<std::ptrdiff_t>(row * block), block,
                  h.data().begin() + static_cast<std::ptrdiff_t>(row * cols + s * block));
  }
  return h;
}

/// Stacked VEC of every channel slice of a filter [N, d1, d2].
inline Tensor filter_column(const Tensor& filter) {
  require_rank(filter, 3, "filter_column");
  const std::size_t n = filter.dim(0), d1 = filter.dim(1), d2 = filter.dim(2);
  Tensor v({n * d1 * d2});
  for (std::size_t s = 0; s < n; ++s) {
    const Tensor slice = vec(sample_of(filter, s));
    std::copy(slice.data().begin(), slice.data().end(), v.data().begin() + static_cast<std::ptrdiff_t>(s * d1 * d2));
  }
  return v;
}

/// Y = H W for one multi-input multi-output convolution.
struct HankelSystem {
  Tensor H;  // [n1*n2, N*d1*d2]
  Tensor W;  // [N*d1*d2, q]
  Tensor Y;  // [n1*n2, q]
  std::size_t channels = 0, filters = 0, d1 = 0, d2 = 0, n1 = 0, n2 = 0;

  /// Rows of W that multiply input channel s: [d1*d2, q].
  Tensor block(std::size_t s) const {
    if (s >= channels) throw ShapeError("HankelSystem::block: channel out of range");
    const std::size_t rows = d1 * d2;
    const auto first = W.data().begin() + static_cast<std::ptrdiff_t>(s * rows * filters);
    return Tensor({rows, filters}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(rows * filters)));
  }

  /// Column m of W folded to [d1*d2, N], one column per input channel. This is
  /// VEC(p (x) q) t^T for a rank-1 filter, so it has rank 1.
  Tensor filter_matrix(std::size_t m) const {
    if (m >= filters) throw ShapeError("HankelSystem::filter_matrix: filter out of range");
    const std::size_t rows = d1 * d2;
    Tensor out({rows, channels});
    for (std::size_t s = 0; s < channels; ++s)
      for (std::size_t r = 0; r < rows; ++r) out[r * channels + s] = W[(s * rows + r) * filters + m];
    return out;
  }

  /// Output image of filter m, [n1, n2].
  Tensor output(std::size_t m) const {
    std::vector<double> col(n1 * n2);
    for (std::size_t r = 0; r < col.size(); ++r) col[r] = Y[r * filters + m];
    return unvec(col, n1, n2);
  }
};

/// Assemble H, W and Y for inputs [N, n1, n2] and a filter bank [q, N, d1, d2].
inline HankelSystem assemble_system(const Tensor& inputs, const Tensor& filter_bank) {
  require_rank(inputs, 3, "assemble_system inputs");
  require_rank(filter_bank, 4, "assemble_system filters");
  if (filter_bank.dim(1) != inputs.dim(0)) throw ShapeError("assemble_system: channel mismatch");
  HankelSystem sys;
  sys.channels = inputs.dim(0);
  sys.n1 = inputs.dim(1);
  sys.n2 = inputs.dim(2);
  sys.filters = filter_bank.dim(0);
  sys.d1 = filter_bank.dim(2);
  sys.d2 = filter_bank.dim(3);
  sys.H = hankel_multi(inputs, sys.d1, sys.d2);
  const std::size_t k = sys.channels * sys.d1 * sys.d2;
  sys.W = Tensor({k, sys.filters});
  for (std::size_t m = 0; m < sys.filters; ++m) {
    const Tensor col = filter_column(sample_of(filter_bank, m));
    for (std::size_t r = 0; r < k; ++r) sys.W[r * sys.filters + m] = col[r];
  }
  sys.Y = matmul(sys.H, sys.W);
  return sys;
}

/// Hankel system of a convolution layer; the layer must use circular padding
/// and unit stride so that its output is exactly the columns of Y.
inline HankelSystem assemble_system(const Tensor& inputs, const ConvLayer& layer) {
  if (layer.geometry().padding != PaddingMode::circular || layer.geometry().stride != 1) {
    throw ValueError("assemble_system: layer must use circular padding with stride 1");
  }
  return assemble_system(inputs, layer.effective_filters());
}

// ---------------------------------------------------------------------------
// Output-rank experiment
// ---------------------------------------------------------------------------

struct RankBoundParams {
  std::size_t channels = 4;  // N
  std::size_t filters = 8;   // q
  std::size_t height = 6;    // n1
  std::size_t width = 6;     // n2
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t trials = 50;
  std::uint64_t seed = 1;
  double rel_tol = 1e-8;
};

/// Filter families compared by the experiment.
///   rank1         p (x) q (x) t_m with the spatial factors p, q shared by all
///                 filters: every block W_s is rank 1 and rank(W) <= min(N, q)
///   rank1-untied  each filter has its own (p_m, q_m, t_m)
///   dense         i.i.d. Gaussian filters
inline const std::vector<std::string>& rank_bound_modes() {
  static const std::vector<std::string> modes{"rank1", "rank1-untied", "dense"};
  return modes;
}

struct RankBoundRow {
  std::size_t trial = 0;
  std::string mode;
  std::size_t rank_h = 0;
  std::size_t rank_w = 0;
  std::size_t rank_y = 0;
  std::size_t bound = 0;  // min(rank H, N, q)
  bool satisfied = false;
};

struct RankBoundReport {
  RankBoundParams params;
  std::vector<RankBoundRow> rows;

  std::size_t count(const std::string& mode) const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.mode == mode; }));
  }
  std::size_t satisfied(const std::string& mode) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.mode == mode && r.satisfied; }));
  }
  /// Trials of `mode` whose output rank exceeds min(N, q).
  std::size_t exceeding(const std::string& mode) const {
    const std::size_t cap = std::min(params.channels, params.filters);
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.mode == mode && r.rank_y > cap; }));
  }
};

inline Tensor random_filter_bank(const std::string& mode, std::size_t q, std::size_t n, std::size_t d1,
                                 std::size_t d2, Rng& rng) {
  auto gaussian = [&](std::size_t len) {
    Tensor v({len});
    for (double& x : v.data()) x = rng.normal();
    return v;
  };
  Tensor bank({q, n, d1, d2});
  const std::size_t per = n * d1 * d2;
  const Tensor shared_p = gaussian(d1), shared_q = gaussian(d2);
  for (std::size_t m = 0; m < q; ++m) {
    Tensor f;
    if (mode == "rank1") {
      f = outer3(shared_p, shared_q, gaussian(n));
    } else if (mode == "rank1-untied") {
      const Tensor p = gaussian(d1), qv = gaussian(d2);
      f = outer3(p, qv, gaussian(n));
    } else if (mode == "dense") {
      f = gaussian(per).reshaped({n, d1, d2});
    } else {
      throw ValueError("unknown filter family '" + mode + "'");
    }
    std::copy(f.data().begin(), f.data().end(), bank.data().begin() + static_cast<std::ptrdiff_t>(m * per));
  }
  return bank;
}

/// For each trial draw a Gaussian input [N, n1, n2], then for each filter
/// family a random bank, and record the numerical ranks of H, W and Y.
inline RankBoundReport rank_bound_experiment(const RankBoundParams& params) {
  if (params.channels == 0 || params.filters == 0 || params.height == 0 || params.width == 0 ||
      params.kernel_h == 0 || params.kernel_w == 0 || params.trials == 0) {
    throw ValueError("rank_bound_experiment: all sizes and the trial count must be positive");
  }
  if (params.kernel_h > params.height || params.kernel_w > params.width) {
    throw ShapeError("rank_bound_experiment: kernel larger than the input");
  }
  RankBoundReport report{params, {}};
  Rng rng(params.seed);
  for (std::size_t trial = 0; trial < params.trials; ++trial) {
    Tensor x({params.channels, params.height, params.width});
    for (double& v : x.data()) v = rng.normal();
    const Tensor h = hankel_multi(x, params.kernel_h, params.kernel_w);
    const std::size_t rank_h = numerical_rank(h, params.rel_tol);
    for (const std::string& mode : rank_bound_modes()) {
      const Tensor bank =
          random_filter_bank(mode, params.filters, params.channels, params.kernel_h, params.kernel_w, rng);
      const HankelSystem sys = assemble_system(x, bank);
      RankBoundRow row;
      row.trial = trial;
      row.mode = mode;
      row.rank_h = rank_h;
      row.rank_w = numerical_rank(sys.W, params.rel_tol);
      row.rank_y = numerical_rank(sys.Y, params.rel_tol);
      row.bound = std::min({rank_h, params.channels, params.filters});
      row.satisfied = row.rank_y <= row.bound;
      report.rows.push_back(row);
    }
  }
  return report;
}

inline void write_rank_report_csv(std::ostream& out, const RankBoundReport& report) {
  out << "trial,mode,rank_H,rank_W,rank_Y,bound,satisfied\n";
  for (const auto& r : report.rows) {
    out << r.trial << ',' << r.mode << ',' << r.rank_h << ',' << r.rank_w << ',' << r.rank_y << ',' << r.bound << ','
        << (r.satisfied ? "true" : "false") << '\n';
  }
}

}  // namespace rank1
