#include <gtest/gtest.h>

#include <sstream>

#include "oracle_values.hpp"
#include "rank1/hankel.hpp"
#include "rank1/verify.hpp"
#include "test_util.hpp"

using namespace rank1;

namespace {

Tensor flip(const Tensor& v) {
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[v.size() - 1 - i];
  return out;
}

}  // namespace

TEST(Hankel1d, SmallExample) {
  const Tensor h = hankel_1d(Tensor::vector({1, 2, 3}), 2);
  EXPECT_EQ(h, Tensor::matrix({{1, 2}, {2, 3}, {3, 1}}));
  EXPECT_EQ(hankel_1d(Tensor::vector({4, 5}), 1), Tensor::matrix({{4}, {5}}));
  EXPECT_THROW(hankel_1d(Tensor::vector({1, 2}), 3), ShapeError);
  EXPECT_THROW(hankel_1d(Tensor::vector({1, 2}), 0), ShapeError);
}

TEST(Hankel1d, ProductIsCircularCorrelation) {
  const Tensor f = frozen(oracle::h1_signal, oracle::h1_signal_shape);
  const Tensor w = frozen(oracle::h1_kernel, oracle::h1_kernel_shape);
  const Tensor h = hankel_1d(f, 3);
  const Tensor y = matmul(h, w.reshaped({3, 1})).reshaped({7});
  EXPECT_LE(max_abs_diff(y, frozen(oracle::h1_circular_corr, oracle::h1_circular_corr_shape)), 1e-14);
}

TEST(Hankel1d, FlippedKernelGivesConvolution) {
  const Tensor f = frozen(oracle::h1_signal, oracle::h1_signal_shape);
  const Tensor w = frozen(oracle::h1_kernel, oracle::h1_kernel_shape);
  const Tensor y = matmul(hankel_1d(f, 3), flip(w).reshaped({3, 1})).reshaped({7});
  // The flipped kernel lands two samples late on the wrapped axis.
  const Tensor conv = frozen(oracle::h1_circular_conv, oracle::h1_circular_conv_shape);
  for (std::size_t o = 0; o < 7; ++o) EXPECT_NEAR(y[o], conv[(o + 2) % 7], 1e-14);
}

TEST(Vec, ColumnStackingRoundTrip) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(vec(m), Tensor::vector({1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(unvec(vec(m).data(), 2, 3), m);
  EXPECT_THROW(unvec(vec(m).data(), 4, 2), ShapeError);
}

TEST(Hankel2d, OneByOneImage) {
  const Tensor h = hankel_2d(Tensor::matrix({{7}}), 1, 1);
  EXPECT_EQ(h, Tensor::matrix({{7}}));
}

TEST(Hankel2d, ProductMatchesFrozenCircularCorrelation) {
  const Tensor img = frozen(oracle::h2_image, oracle::h2_image_shape);
  const Tensor ker = frozen(oracle::h2_kernel, oracle::h2_kernel_shape);
  const Tensor h = hankel_2d(img, 3, 3);
  ASSERT_EQ(h.shape(), (Shape{20, 9}));
  const Tensor y = matmul(h, vec(ker).reshaped({9, 1}));
  const Tensor out = unvec(y.data(), 4, 5);
  EXPECT_LE(max_abs_diff(out, frozen(oracle::h2_circular, oracle::h2_circular_shape)), 1e-14);
}

TEST(Hankel2d, ZeroImageAndBadSizes) {
  EXPECT_EQ(max_abs(hankel_2d(Tensor({4, 4}), 2, 3)), 0.0);
  EXPECT_THROW(hankel_2d(Tensor({4, 4}), 5, 1), ShapeError);
  EXPECT_THROW(hankel_2d(Tensor({4, 4}), 1, 0), ShapeError);
}

TEST(Hankel2d, EveryBlockIsHankel) {
  Rng rng(1);
  const Tensor x = random_tensor({4, 5}, rng);
  const Tensor h = hankel_2d(x, 3, 2);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(h(a * 4 + r, b * 3 + c), x((r + c) % 4, (a + b) % 5));
}

TEST(HankelSystem, SingleChannelSingleFilter) {
  Rng rng(2);
  const Tensor x = random_tensor({1, 5, 6}, rng);
  const Tensor bank = random_tensor({1, 1, 3, 3}, rng);
  const HankelSystem sys = assemble_system(x, bank);
  EXPECT_EQ(sys.H, hankel_2d(sample_of(x, 0), 3, 3));
  const Tensor direct = conv2d_multi(x, sample_of(bank, 0), PaddingMode::circular);
  EXPECT_LE(max_abs_diff(sys.output(0), direct), 1e-12);
}

TEST(HankelSystem, SweepMatchesDirectConvolution) {
  Rng rng(3);
  double worst = 0.0;
  for (std::size_t n1 = 1; n1 <= 8; ++n1)
    for (std::size_t n2 = 1; n2 <= 8; n2 += 3)
      for (std::size_t d1 = 1; d1 <= n1; d1 += 2)
        for (std::size_t d2 = 1; d2 <= n2; d2 += 2) {
          const std::size_t n = 1 + rng.index(4), q = 1 + rng.index(4);
          worst = std::max(worst, hankel_equivalence_error(random_tensor({n, n1, n2}, rng),
                                                           random_tensor({q, n, d1, d2}, rng)));
        }
  EXPECT_LE(worst, 1e-12);
}

TEST(HankelSystem, MatchesCircularConvLayer) {
  Rng rng(4);
  for (ConvMode mode : {ConvMode::standard, ConvMode::rank1, ConvMode::sequential}) {
    ConvLayer conv(mode, ConvGeometry{3, 4, 3, 3, PaddingMode::circular, 1}, rng);
    const Tensor x = random_tensor({3, 6, 7}, rng);
    const HankelSystem sys = assemble_system(x, conv);
    const Tensor y = conv.forward(x.reshaped({1, 3, 6, 7}), Phase::eval);
    for (std::size_t m = 0; m < 4; ++m) {
      const Tensor ym = sample_of(sample_of(y, 0), m);
      EXPECT_LE(max_abs_diff(sys.output(m), ym), 1e-12);
    }
  }
  ConvLayer same(ConvMode::rank1, ConvGeometry{3, 4, 3, 3, PaddingMode::same, 1}, rng);
  EXPECT_THROW(assemble_system(Tensor({3, 6, 6}), same), ValueError);
}

TEST(HankelSystem, Rank1FilterMatrixHasRankOne) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor bank({3, 4, 3, 2});
    for (std::size_t m = 0; m < 3; ++m) {
      const Tensor f = compose(random_rank1_filter(3, 2, 4, rng));
      std::copy(f.data().begin(), f.data().end(), bank.data().begin() + static_cast<std::ptrdiff_t>(m * f.size()));
    }
    const HankelSystem sys = assemble_system(random_tensor({4, 5, 5}, rng), bank);
    for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(numerical_rank(sys.filter_matrix(m)), 1u);
  }
}

TEST(HankelSystem, SharedSpatialFactorsGiveRankOneBlocks) {
  Rng rng(6);
  const Tensor x = random_tensor({4, 6, 6}, rng);
  const HankelSystem shared = assemble_system(x, random_filter_bank("rank1", 8, 4, 3, 3, rng));
  const HankelSystem dense = assemble_system(x, random_filter_bank("dense", 8, 4, 3, 3, rng));
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(numerical_rank(shared.block(s)), 1u);
    EXPECT_GT(numerical_rank(dense.block(s)), 1u);
  }
  EXPECT_LE(numerical_rank(shared.W), 4u);
  EXPECT_THROW(shared.block(4), ShapeError);
  EXPECT_THROW(shared.filter_matrix(8), ShapeError);
}

TEST(NumericalRank, KnownMatrices) {
  EXPECT_EQ(numerical_rank(Tensor::identity(3)), 3u);
  const Tensor u = Tensor::vector({1, 2, 3}).reshaped({3, 1});
  const Tensor v = Tensor::vector({4, -1}).reshaped({1, 2});
  EXPECT_EQ(numerical_rank(matmul(u, v)), 1u);
  Rng rng(7);
  EXPECT_EQ(numerical_rank(random_tensor({5, 5}, rng)), 5u);
  EXPECT_EQ(numerical_rank(Tensor({3, 2})), 0u);
  EXPECT_THROW(numerical_rank(Tensor::identity(2), 0.0), ValueError);
  EXPECT_THROW(numerical_rank(Tensor::identity(2), 1.0), ValueError);
}

TEST(NumericalRank, FrozenSingularValues) {
  const std::vector<double> s = singular_values(frozen(oracle::svd_matrix, oracle::svd_matrix_shape));
  ASSERT_EQ(s.size(), oracle::svd_values.size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], oracle::svd_values[i], 1e-12);
  const std::vector<double> st = singular_values(transpose(frozen(oracle::svd_matrix, oracle::svd_matrix_shape)));
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(st[i], oracle::svd_values[i], 1e-12);
}

TEST(RankExperiment, SingleFilterOutputHasRankAtMostOne) {
  RankBoundParams params;
  params.filters = 1;
  params.trials = 10;
  const RankBoundReport report = rank_bound_experiment(params);
  for (const auto& row : report.rows) EXPECT_LE(row.rank_y, 1u) << row.mode;
}

TEST(RankExperiment, OutputRankIsSubmultiplicative) {
  RankBoundParams params;
  params.trials = 20;
  params.seed = 9;
  for (const auto& row : rank_bound_experiment(params).rows) {
    EXPECT_LE(row.rank_y, std::min(row.rank_h, row.rank_w)) << row.mode << " trial " << row.trial;
  }
}

TEST(RankExperiment, SharedFactorsRespectTheBound) {
  for (std::size_t n : {1u, 2u, 4u, 6u}) {
    RankBoundParams params;
    params.channels = n;
    params.filters = 5;
    params.trials = 10;
    params.seed = 10 + n;
    const RankBoundReport report = rank_bound_experiment(params);
    EXPECT_EQ(report.satisfied("rank1"), 10u);
    for (const auto& row : report.rows) {
      if (row.mode == "rank1") {
        EXPECT_LE(row.rank_w, std::min<std::size_t>(n, 5));
      }
    }
  }
}

TEST(RankExperiment, DenseFiltersUsuallyExceedMinNq) {
  const RankBoundReport report = rank_bound_experiment({});
  EXPECT_EQ(report.count("dense"), 50u);
  EXPECT_GE(5 * report.exceeding("dense"), 4 * 50u);
  EXPECT_EQ(report.satisfied("rank1"), 50u);
}

TEST(RankExperiment, CsvAndErrors) {
  RankBoundParams params;
  params.trials = 2;
  std::ostringstream os;
  write_rank_report_csv(os, rank_bound_experiment(params));
  std::istringstream in(os.str());
  std::string line;
  std::size_t lines = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "trial,mode,rank_H,rank_W,rank_Y,bound,satisfied");
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 6u);
  params.kernel_h = 9;
  EXPECT_THROW(rank_bound_experiment(params), ShapeError);
  params.kernel_h = 3;
  params.trials = 0;
  EXPECT_THROW(rank_bound_experiment(params), ValueError);
  Rng rng(1);
  EXPECT_THROW(random_filter_bank("cp2", 1, 1, 1, 1, rng), ValueError);
}
