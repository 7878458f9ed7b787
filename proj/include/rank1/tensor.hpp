#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rank1/errors.hpp"

namespace rank1 {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles (last axis fastest).
///
/// A default-constructed tensor is the null tensor: no shape and no data.
/// Every other tensor has a nonempty shape of positive extents with
/// shape_size(shape()) == size().
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + rank1::to_string(shape_) + " does not hold " +
                       std::to_string(data_.size()) + " elements");
    }
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("matrix: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor eye({n, n});
    for (std::size_t i = 0; i < n; ++i) eye.data_[i * n + i] = 1.0;
    return eye;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                       rank1::to_string(shape_));
    }
    return shape_[axis];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  template <typename... Index>
  double& operator()(Index... index) {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }

  template <typename... Index>
  double operator()(Index... index) const {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }

  /// Flat offset of a multi-index; bounds are checked.
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    return flatten(std::span<const std::size_t>(index.begin(), index.size()));
  }

  std::size_t flatten(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("tensor: index of rank " + std::to_string(index.size()) +
                       " into shape " + rank1::to_string(shape_));
    }
    std::size_t flat = 0;
    for (std::size_t a = 0; a < shape_.size(); ++a) {
      if (index[a] >= shape_[a]) throw ShapeError("tensor: index out of bounds");
      flat = flat * shape_[a] + index[a];
    }
    return flat;
  }

  std::vector<std::size_t> unflatten(std::size_t flat) const {
    if (flat >= data_.size()) throw ShapeError("tensor: flat index out of bounds");
    std::vector<std::size_t> index(shape_.size());
    for (std::size_t a = shape_.size(); a-- > 0;) {
      index[a] = flat % shape_[a];
      flat /= shape_[a];
    }
    return index;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape: " + rank1::to_string(shape_) + " -> " + rank1::to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& other) {
    require_same_shape(other, "sub");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }

  Tensor& operator*=(double factor) {
    for (double& v : data_) v *= factor;
    return *this;
  }

  /// this += factor * other
  void axpy(double factor, const Tensor& other) {
    require_same_shape(other, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += factor * other.data_[i];
  }

  /// Bitwise equality of shape and contents.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: shape must have at least one axis");
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor: zero extent in shape " + rank1::to_string(shape));
    }
  }

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(op) + ": shape mismatch " + rank1::to_string(shape_) + " vs " +
                       rank1::to_string(other.shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

inline Tensor add(Tensor a, const Tensor& b) { return a += b; }
inline Tensor sub(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor scale(Tensor a, double factor) { return a *= factor; }
inline Tensor reshape(const Tensor& a, Shape shape) { return a.reshaped(std::move(shape)); }

inline double reduce_sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// max|a - b| / max|b|, with 0/0 treated as 0.
inline double relative_error(const Tensor& a, const Tensor& b) {
  const double diff = max_abs_diff(a, b);
  const double ref = std::max(max_abs(a), max_abs(b));
  return ref == 0.0 ? diff : diff / ref;
}

inline bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

/// Index of the largest entry; the first one wins ties.
inline std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ShapeError("argmax: empty input");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

inline std::size_t argmax(const Tensor& a) { return argmax(a.data()); }

/// Row-wise argmax of a [rows, cols] matrix.
inline std::vector<std::size_t> argmax_rows(const Tensor& m) {
  require_rank(m, 2, "argmax_rows");
  const std::size_t cols = m.dim(1);
  std::vector<std::size_t> out(m.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = argmax(m.data().subspan(r * cols, cols));
  return out;
}

/// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) of size m x k and
/// op(B) of size k x n.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, std::span<const double> a, std::span<const double> b, double beta,
                 std::span<double> c) {
  if (a.size() < m * k || b.size() < k * n || c.size() < m * n) {
    throw ShapeError("gemm: operand too small");
  }
  if (beta == 0.0) {
    std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m * n), 0.0);
  } else if (beta != 1.0) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
  }
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = alpha * a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = alpha * a[p * m + i];
        if (av == 0.0) continue;
        double* crow = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data() + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.data() + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        c[i * n + j] += alpha * s;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += alpha * s;
      }
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), 1.0, a.data(), b.data(), 0.0, c.data());
  return c;
}

inline Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  }
  return t;
}

/// out[k, i, j] = p[i] * q[j] * t[k]; axis order is (channel, vertical, horizontal).
inline Tensor outer3(const Tensor& p, const Tensor& q, const Tensor& t) {
  if (p.rank() != 1 || q.rank() != 1 || t.rank() != 1) {
    throw ShapeError("outer3: factors must be rank-1, got " + to_string(p.shape()) + ", " +
                     to_string(q.shape()) + ", " + to_string(t.shape()));
  }
  const std::size_t d1 = p.size(), d2 = q.size(), n = t.size();
  Tensor out({n, d1, d2});
  std::size_t flat = 0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d1; ++i) {
      for (std::size_t j = 0; j < d2; ++j) out[flat++] = p[i] * q[j] * t[k];
    }
  }
  return out;
}

}  // namespace rank1
