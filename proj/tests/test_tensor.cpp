#include <gtest/gtest.h>

#include "oracle_values.hpp"
#include "rank1/conv.hpp"
#include "rank1/random.hpp"
#include "rank1/tensor.hpp"
#include "test_util.hpp"

using namespace rank1;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Six nested loops, valid padding only.
Tensor naive_valid(const Tensor& x, const Tensor& f) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), d1 = f.dim(1), d2 = f.dim(2);
  Tensor y({h - d1 + 1, w - d2 + 1});
  for (std::size_t a = 0; a + d1 <= h; ++a)
    for (std::size_t b = 0; b + d2 <= w; ++b)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < d1; ++i)
          for (std::size_t j = 0; j < d2; ++j) y(a, b) += f(k, i, j) * x(k, a + i, b + j);
  return y;
}

}  // namespace

TEST(Tensor, ConstructionChecksShape) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  const Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_DOUBLE_EQ(t(1, 2), 1.5);
  EXPECT_THROW(t.dim(2), ShapeError);
  EXPECT_THROW(t(2, 0), ShapeError);
}

TEST(Tensor, FlattenRoundTrip) {
  const Tensor t({3, 1, 4, 2});
  for (std::size_t flat = 0; flat < t.size(); ++flat) {
    const auto idx = t.unflatten(flat);
    EXPECT_EQ(t.flatten(idx), flat);
    EXPECT_EQ(t.unflatten(t.flatten(idx)), idx);
  }
}

TEST(Tensor, RowMajorLayout) {
  Tensor t({2, 3});
  t(1, 0) = 7.0;
  EXPECT_DOUBLE_EQ(t[3], 7.0);
}

TEST(Tensor, MatmulIdentity) {
  Rng rng(3);
  const Tensor a = random_tensor({3, 4}, rng);
  EXPECT_EQ(matmul(Tensor::identity(3), a), a);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, MatmulSmall) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(a, b), Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(Tensor, GemmTransposeVariants) {
  Rng rng(4);
  const Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
  const Tensor ref = matmul(a, b);
  const Tensor at = transpose(a), bt = transpose(b);
  Tensor c({3, 2});
  gemm(true, false, 3, 2, 5, 1.0, at.data(), b.data(), 0.0, c.data());
  EXPECT_LT(max_abs_diff(c, ref), 1e-14);
  gemm(false, true, 3, 2, 5, 1.0, a.data(), bt.data(), 0.0, c.data());
  EXPECT_LT(max_abs_diff(c, ref), 1e-14);
  gemm(true, true, 3, 2, 5, 1.0, at.data(), bt.data(), 0.0, c.data());
  EXPECT_LT(max_abs_diff(c, ref), 1e-14);
}

TEST(Tensor, TransposeInvolution) {
  Rng rng(5);
  const Tensor a = random_tensor({4, 7}, rng);
  EXPECT_EQ(transpose(transpose(a)), a);
  EXPECT_EQ(transpose(a).shape(), (Shape{7, 4}));
}

TEST(Tensor, ReduceSumAndArithmetic) {
  EXPECT_DOUBLE_EQ(reduce_sum(Tensor({2, 3}, 1.0)), 6.0);
  const Tensor a = Tensor::vector({1, -2, 3});
  EXPECT_EQ(add(a, a), Tensor::vector({2, -4, 6}));
  EXPECT_EQ(sub(a, a), Tensor({3}));
  EXPECT_EQ(scale(a, -1), Tensor::vector({-1, 2, -3}));
  EXPECT_EQ(reshape(a, {3, 1}).shape(), (Shape{3, 1}));
  EXPECT_THROW(reshape(a, {2, 2}), ShapeError);
  EXPECT_THROW(add(a, Tensor({2})), ShapeError);
  EXPECT_EQ(argmax(a), 2u);
  EXPECT_EQ(argmax_rows(Tensor::matrix({{0, 1}, {5, 2}})), (std::vector<std::size_t>{1, 0}));
}

TEST(Outer3, SingleEntry) {
  const Tensor w = outer3(Tensor::vector({1}), Tensor::vector({1}), Tensor::vector({1}));
  EXPECT_EQ(w.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(w[0], 1.0);
}

TEST(Outer3, TripleLoopValues) {
  const Tensor w = outer3(Tensor::vector({1, 2}), Tensor::vector({3, 0, 1}), Tensor::vector({1, -1}));
  ASSERT_EQ(w.shape(), (Shape{2, 2, 3}));
  const std::vector<double> channel0{3, 0, 1, 6, 0, 2};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(w[i], channel0[i]);
    EXPECT_DOUBLE_EQ(w[6 + i], -channel0[i]);
  }
}

TEST(Outer3, ZeroFactor) {
  Rng rng(6);
  const Tensor w = outer3(Tensor({3}), random_tensor({4}, rng), random_tensor({2}, rng));
  EXPECT_EQ(max_abs(w), 0.0);
}

TEST(Outer3, RejectsNonVectors) {
  EXPECT_THROW(outer3(Tensor({2, 1}), Tensor({2}), Tensor({2})), ShapeError);
}

TEST(Conv2d, OnesSumValid) {
  const Tensor y = conv2d_multi(Tensor({1, 3, 3}, 1.0), Tensor({1, 3, 3}, 1.0), PaddingMode::valid);
  ASSERT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 9.0);
}

TEST(Conv2d, ImpulseResponseIsUnflippedFilter) {
  Rng rng(7);
  Tensor x({1, 5, 5});
  x(0, 2, 2) = 1.0;
  const Tensor f = random_tensor({1, 3, 3}, rng);
  const Tensor y = conv2d_multi(x, f, PaddingMode::same);
  // Cross-correlation: output at (2 - i + 1, 2 - j + 1) picks f(i, j).
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y(3 - i, 3 - j), f(0, i, j));
}

TEST(Conv2d, FrozenOracleAllPaddings) {
  const Tensor x = frozen(oracle::conv_input, oracle::conv_input_shape);
  const Tensor f = frozen(oracle::conv_filter, oracle::conv_filter_shape);
  EXPECT_LE(max_abs_diff(conv2d_multi(x, f, PaddingMode::valid),
                         frozen(oracle::conv_valid, oracle::conv_valid_shape)), 1e-12);
  EXPECT_LE(max_abs_diff(conv2d_multi(x, f, PaddingMode::same), frozen(oracle::conv_same, oracle::conv_same_shape)),
            1e-12);
  EXPECT_LE(max_abs_diff(conv2d_multi(x, f, PaddingMode::circular),
                         frozen(oracle::conv_circular, oracle::conv_circular_shape)), 1e-12);
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(3), h = 3 + rng.index(5), w = 3 + rng.index(5);
    const Tensor x = random_tensor({n, h, w}, rng);
    const Tensor f = random_tensor({n, 1 + rng.index(3), 1 + rng.index(3)}, rng);
    EXPECT_LE(max_abs_diff(conv2d_multi(x, f, PaddingMode::valid), naive_valid(x, f)), 1e-12);
  }
}

TEST(Conv2d, ShapesAndErrors) {
  const Tensor x({2, 7, 6});
  EXPECT_EQ(conv2d_multi(x, Tensor({2, 3, 3}), PaddingMode::same).shape(), (Shape{7, 6}));
  EXPECT_EQ(conv2d_multi(x, Tensor({2, 3, 3}), PaddingMode::valid).shape(), (Shape{5, 4}));
  EXPECT_EQ(conv2d_multi(x, Tensor({2, 3, 3}), PaddingMode::same, 2).shape(), (Shape{4, 3}));
  EXPECT_THROW(conv2d_multi(x, Tensor({3, 3, 3}), PaddingMode::same), ShapeError);
  EXPECT_THROW(conv2d_multi(x, Tensor({2, 8, 3}), PaddingMode::valid), ShapeError);
}

TEST(Conv2d, LinearInBothArguments) {
  Rng rng(9);
  for (PaddingMode mode : {PaddingMode::valid, PaddingMode::same, PaddingMode::circular}) {
    const Tensor x = random_tensor({3, 6, 5}, rng), x2 = random_tensor({3, 6, 5}, rng);
    const Tensor f = random_tensor({3, 3, 3}, rng), f2 = random_tensor({3, 3, 3}, rng);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    const Tensor lhs = conv2d_multi(add(scale(x, a), scale(x2, b)), f, mode);
    const Tensor rhs = add(scale(conv2d_multi(x, f, mode), a), scale(conv2d_multi(x2, f, mode), b));
    EXPECT_LE(relative_error(lhs, rhs), 1e-12);
    const Tensor lhs_f = conv2d_multi(x, add(scale(f, a), scale(f2, b)), mode);
    const Tensor rhs_f = add(scale(conv2d_multi(x, f, mode), a), scale(conv2d_multi(x, f2, mode), b));
    EXPECT_LE(relative_error(lhs_f, rhs_f), 1e-12);
  }
}

TEST(Im2col, MatchesDirectConvolution) {
  Rng rng(10);
  for (PaddingMode mode : {PaddingMode::valid, PaddingMode::same, PaddingMode::circular}) {
    for (std::size_t stride : {1u, 2u}) {
      const Tensor x = random_tensor({2, 7, 6}, rng);
      const Tensor f = random_tensor({2, 3, 3}, rng);
      const Tensor cols = im2col(x, 3, 3, mode, stride);
      const Tensor direct = conv2d_multi(x, f, mode, stride);
      const Tensor y = matmul(f.reshaped({1, 18}), cols);
      EXPECT_LE(max_abs_diff(y.reshaped(direct.shape()), direct), 1e-12);
    }
  }
}

TEST(Im2col, Col2imIsAdjoint) {
  Rng rng(11);
  for (PaddingMode mode : {PaddingMode::valid, PaddingMode::same, PaddingMode::circular}) {
    const Tensor x = random_tensor({2, 6, 5}, rng);
    const Tensor cols = im2col(x, 3, 2, mode, 2);
    const Tensor g = random_tensor(cols.shape(), rng);
    const Tensor back = col2im(g, 2, 6, 5, 3, 2, mode, 2);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * g[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(Conv1d, ChannelSelector) {
  Rng rng(12);
  const Tensor x = random_tensor({2, 4, 3}, rng);
  const Tensor y = conv1d_axis(x, Tensor::vector({1, 0}), Axis::channel, PaddingMode::valid);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 3}));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
  EXPECT_THROW(conv1d_axis(x, Tensor::vector({1, 0, 0}), Axis::channel, PaddingMode::valid), ShapeError);
}

TEST(Conv1d, UnitKernelIsIdentity) {
  Rng rng(13);
  const Tensor x = random_tensor({3, 4, 5}, rng);
  EXPECT_EQ(conv1d_axis(x, Tensor::vector({1}), Axis::vertical, PaddingMode::same), x);
  EXPECT_EQ(conv1d_axis(x, Tensor::vector({1}), Axis::horizontal, PaddingMode::valid), x);
}

TEST(Conv1d, FrozenHorizontalOracle) {
  const Tensor x = frozen(oracle::line_input, oracle::line_input_shape);
  const Tensor k = frozen(oracle::line_kernel, oracle::line_kernel_shape);
  EXPECT_LE(max_abs_diff(conv1d_axis(x, k, Axis::horizontal, PaddingMode::valid),
                         frozen(oracle::line_horizontal_valid, oracle::line_horizontal_valid_shape)),
            1e-12);
}

TEST(Conv1d, HorizontalEqualsOneRowFilterPerChannel) {
  Rng rng(14);
  for (PaddingMode mode : {PaddingMode::valid, PaddingMode::same, PaddingMode::circular}) {
    const Tensor x = random_tensor({3, 5, 6}, rng);
    const Tensor k = random_tensor({3}, rng);
    const Tensor y = conv1d_axis(x, k, Axis::horizontal, mode);
    for (std::size_t c = 0; c < 3; ++c) {
      Tensor onehot({3});
      onehot[c] = 1.0;
      const Tensor ref = conv2d_multi(x, outer3(Tensor::vector({1}), k, onehot), mode);
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[c * ref.size() + i], ref[i], 1e-12);
    }
  }
}

TEST(Conv1d, VerticalEqualsOneColumnFilterPerChannel) {
  Rng rng(15);
  for (PaddingMode mode : {PaddingMode::valid, PaddingMode::same, PaddingMode::circular}) {
    const Tensor x = random_tensor({2, 6, 4}, rng);
    const Tensor k = random_tensor({3}, rng);
    const Tensor y = conv1d_axis(x, k, Axis::vertical, mode);
    for (std::size_t c = 0; c < 2; ++c) {
      Tensor onehot({2});
      onehot[c] = 1.0;
      const Tensor ref = conv2d_multi(x, outer3(k, Tensor::vector({1}), onehot), mode);
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[c * ref.size() + i], ref[i], 1e-12);
    }
  }
}

TEST(Conv1d, LineBackwardMatchesFiniteDifferences) {
  Rng rng(16);
  for (Axis axis : {Axis::vertical, Axis::horizontal}) {
    const Tensor x = random_tensor({2, 5, 4}, rng);
    Tensor k = random_tensor({2, 3}, rng);
    const Tensor y = correlate_lines(x, k, axis, PaddingMode::same);
    const Tensor g = random_tensor(y.shape(), rng);
    const LineGrads grads = correlate_lines_backward(x, k, axis, PaddingMode::same, g);
    auto objective = [&](const Tensor& xin, const Tensor& kin) {
      const Tensor out = correlate_lines(xin, kin, axis, PaddingMode::same);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * g[i];
      return s;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < k.size(); ++i) {
      Tensor up = k, down = k;
      up[i] += h;
      down[i] -= h;
      EXPECT_NEAR(grads.kernels[i], (objective(x, up) - objective(x, down)) / (2 * h), 1e-8);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor up = x, down = x;
      up[i] += h;
      down[i] -= h;
      EXPECT_NEAR(grads.input[i], (objective(up, k) - objective(down, k)) / (2 * h), 1e-8);
    }
  }
}

TEST(Separability, RankOneFilterEqualsThreePasses) {
  Rng rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng.index(8), h = 3 + rng.index(10), w = 3 + rng.index(10);
    const Tensor x = random_tensor({n, h, w}, rng);
    const Tensor p = random_tensor({3}, rng), q = random_tensor({3}, rng), t = random_tensor({n}, rng);
    for (PaddingMode mode : {PaddingMode::valid, PaddingMode::same, PaddingMode::circular}) {
      const Tensor dense = conv2d_multi(x, outer3(p, q, t), mode);
      const Tensor z = conv1d_axis(x, t, Axis::channel, mode);
      const Tensor vh = conv1d_axis(conv1d_axis(z, p, Axis::vertical, mode), q, Axis::horizontal, mode);
      const Tensor hv = conv1d_axis(conv1d_axis(z, q, Axis::horizontal, mode), p, Axis::vertical, mode);
      EXPECT_LE(relative_error(dense, vh.reshaped(dense.shape())), 1e-10);
      EXPECT_LE(relative_error(dense, hv.reshaped(dense.shape())), 1e-10);
    }
  }
}

TEST(Padding, ParseAndPrint) {
  for (PaddingMode mode : {PaddingMode::valid, PaddingMode::same, PaddingMode::circular}) {
    EXPECT_EQ(parse_padding(to_string(mode)), mode);
  }
  EXPECT_FALSE(parse_padding("reflect"));
}

TEST(Random, SeededStreamsRepeat) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
    EXPECT_EQ(va, vb);
    EXPECT_GE(va, 0.0);
    EXPECT_LT(va, 1.0);
    differs = differs || va != vc;
  }
  EXPECT_TRUE(differs);
}

TEST(Random, ShuffleIsPermutation) {
  Rng rng(1);
  std::vector<std::size_t> v(50);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  rng.shuffle(std::span<std::size_t>(v));
  std::vector<std::size_t> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(sorted[i], i);
}
