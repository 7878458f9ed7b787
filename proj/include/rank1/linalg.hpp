#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "rank1/tensor.hpp"

namespace rank1 {

/// Singular values of a matrix, largest first.
///
/// One-sided (Hestenes) Jacobi: columns of a working copy are rotated pairwise
/// until every pair is orthogonal to within `tol` relative to the column
/// norms; the column norms are then the singular values. Wide matrices are
/// transposed first so the working copy always has rows >= cols.
inline std::vector<double> singular_values(const Tensor& matrix, double tol = 1e-12,
                                           int max_sweeps = 100) {
  require_rank(matrix, 2, "singular_values");
  const bool wide = matrix.dim(0) < matrix.dim(1);
  const Tensor a = wide ? transpose(matrix) : matrix;
  const std::size_t m = a.dim(0), n = a.dim(1);

  // Column-major working copy so that column operations are contiguous.
  std::vector<double> u(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) u[j * m + i] = a[i * n + j];

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* cp = u.data() + p * m;
        double* cq = u.data() + q * m;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (alpha == 0.0 || beta == 0.0 || gamma == 0.0) continue;
        const double coupling = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, coupling);
        if (coupling < tol) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = cp[i], xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
      }
    }
    if (off < tol) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u[j * m + i] * u[j * m + i];
    sigma[j] = std::sqrt(s);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

/// Number of singular values strictly above rel_tol times the largest.
inline std::size_t numerical_rank(const Tensor& matrix, double rel_tol = 1e-8) {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw ValueError("numerical_rank: rel_tol must lie in (0, 1)");
  if (matrix.empty()) throw ShapeError("numerical_rank: empty matrix");
  const std::vector<double> sigma = singular_values(matrix);
  if (sigma.front() == 0.0) return 0;
  const double cut = rel_tol * sigma.front();
  return static_cast<std::size_t>(
      std::count_if(sigma.begin(), sigma.end(), [cut](double s) { return s > cut; }));
}

/// Mode-`axis` matricization of a rank-3 tensor: rows indexed by `axis`,
/// columns by the remaining two axes in their original order.
inline Tensor unfold(const Tensor& tensor, std::size_t axis) {
  require_rank(tensor, 3, "unfold");
  if (axis > 2) throw ShapeError("unfold: axis must be 0, 1 or 2");
  const std::size_t e0 = tensor.dim(0), e1 = tensor.dim(1), e2 = tensor.dim(2);
  const std::size_t rows = tensor.dim(axis);
  Tensor out({rows, tensor.size() / rows});
  for (std::size_t a = 0; a < e0; ++a) {
    for (std::size_t b = 0; b < e1; ++b) {
      for (std::size_t c = 0; c < e2; ++c) {
        const double v = tensor[(a * e1 + b) * e2 + c];
        switch (axis) {
          case 0: out(a, b * e2 + c) = v; break;
          case 1: out(b, a * e2 + c) = v; break;
          default: out(c, a * e1 + b) = v; break;
        }
      }
    }
  }
  return out;
}

/// Largest ratio sigma_2 / sigma_1 across the three unfoldings; 0 for a
/// zero tensor or when every unfolding has a single row or column.
inline double rank1_defect(const Tensor& tensor) {
  double worst = 0.0;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::vector<double> sigma = singular_values(unfold(tensor, axis));
    if (sigma.size() < 2 || sigma[0] == 0.0) continue;
    worst = std::max(worst, sigma[1] / sigma[0]);
  }
  return worst;
}

/// True when every mode-unfolding has numerical rank at most 1.
inline bool is_rank1(const Tensor& tensor, double rel_tol = 1e-10) {
  return rank1_defect(tensor) <= rel_tol;
}

}  // namespace rank1
