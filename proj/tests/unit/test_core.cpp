#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "leafgraph/gradcheck.hpp"
#include "leafgraph/linalg.hpp"
#include "leafgraph/rng.hpp"
#include "leafgraph/tensor.hpp"

using namespace leafgraph;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST(Tensor, ShapeMismatchOnConstruction) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, ColsOfEmptyBatch) {
  Tensor t({0, 7});
  EXPECT_EQ(t.rows(), 0u);
  EXPECT_EQ(t.cols(), 7u);
}

TEST(Matmul, IdentityLeft) {
  auto out = matmul(Tensor::identity(2), Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(out, Tensor::matrix({{5, 6}, {7, 8}}));
}

TEST(Matmul, RowTimesColumn) {
  auto out = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(out, Tensor::matrix({{11}}));
}

TEST(Matmul, ZerosAnnihilate) {
  Rng rng(1);
  auto a = random_matrix(3, 4, rng);
  EXPECT_EQ(matmul(a, Tensor({4, 2})), Tensor({3, 2}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, IdentityAssociativityIsBitExact) {
  Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  Tensor b = Tensor::matrix({{7, 8}, {9, 10}, {11, 12}});
  Tensor i3 = Tensor::identity(3);
  EXPECT_EQ(matmul(matmul(a, i3), b), matmul(a, matmul(i3, b)));
  EXPECT_EQ(matmul(matmul(a, i3), b), matmul(a, b));
}

TEST(Matmul, TransposedVariantsAgree) {
  Rng rng(2);
  auto a = random_matrix(3, 5, rng);
  auto b = random_matrix(4, 5, rng);
  auto c = random_matrix(3, 4, rng);
  EXPECT_LT(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))), 1e-15);
  EXPECT_LT(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)), 1e-15);
}

TEST(Tensor, HconcatHsplitRoundTrip) {
  Rng rng(3);
  auto a = random_matrix(3, 2, rng);
  auto b = random_matrix(3, 4, rng);
  auto [l, r] = hsplit(hconcat(a, b), 2);
  EXPECT_EQ(l, a);
  EXPECT_EQ(r, b);
}

TEST(Rng, EqualSeedsEqualStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsAndSubstreamsDiffer) {
  Rng a(42, "alpha"), b(42, "beta");
  EXPECT_NE(a.next_u64(), b.next_u64());
  Rng s1 = Rng(42, "alpha").substream(1), s2 = Rng(42, "alpha").substream(2);
  EXPECT_NE(s1.next_u64(), s2.next_u64());
}

TEST(Rng, CounterIsSeekable) {
  Rng a(9);
  for (int i = 0; i < 5; ++i) a.next_u64();
  const auto sixth = a.next_u64();
  Rng b(9);
  b.set_counter(5);
  EXPECT_EQ(b.next_u64(), sixth);
}

TEST(Rng, FrozenOutputs) {
  // Guards the documented generator definition against accidental edits.
  Rng r(0, 0);
  const std::uint64_t key = Rng::mix(0 ^ Rng::mix(0xD1B54A32D192ED03ULL));
  EXPECT_EQ(r.next_u64(), Rng::mix(key + Rng::kGolden));
  EXPECT_EQ(r.next_u64(), Rng::mix(key + 2 * Rng::kGolden));
}

TEST(Rng, BelowIsInRangeAndCoversAll) {
  Rng r(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto x = r.below(7);
    ASSERT_LT(x, 7u);
    seen.insert(x);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(8);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(std::span(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(TopSingularVector, RankOneIsForced) {
  Tensor a({3, 2});
  const double u[3] = {1, 2, 2}, v[2] = {0, 1};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) a(i, j) = u[i] * v[j];
  auto t = top_singular_vector(a);
  EXPECT_NEAR(t.sigma, 3.0, 1e-12);
  EXPECT_NEAR(t.v[0], 0.0, 1e-12);
  EXPECT_NEAR(t.v[1], 1.0, 1e-12);
  EXPECT_NEAR(t.u[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(t.u[1], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(t.u[2], 2.0 / 3.0, 1e-12);
  EXPECT_TRUE(t.converged);
}

TEST(TopSingularVector, IdentitySigmaOnly) {
  auto t = top_singular_vector(Tensor::identity(2));
  EXPECT_NEAR(t.sigma, 1.0, 1e-12);
}

TEST(TopSingularVector, MatchesEigenOracle) {
  // Frozen from an eigendecomposition of A^T A (numpy.linalg.eigh).
  Tensor a = Tensor::matrix({{-0.49454, 0.476815, -0.703702, 0.069051},
                             {-0.192881, 0.9154, 0.876589, -0.427413},
                             {0.575083, -0.205593, -0.01646, -0.712831},
                             {-0.249439, -0.298214, 0.043115, 0.1455},
                             {0.858457, -0.129352, -0.618151, -0.4297}});
  const double sigma = 1.568039359502875;
  const double v[4] = {0.613909161871785, -0.5006017112858341, -0.5813050522387435, -0.1860051178577851};
  const double u[5] = {-0.0931579634887662, -0.6420290552395136, 0.3814492422449528, -0.03569627275942177,
                       0.6575275946823219};
  auto t = top_singular_vector(a, {1000, 1e-14});
  EXPECT_NEAR(t.sigma, sigma, 1e-8);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(t.v[i], v[i], 1e-5);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(t.u[i], u[i], 1e-5);
  // Defaults still meet the sigma tolerance.
  EXPECT_NEAR(top_singular_vector(a).sigma, sigma, 1e-8);
}

TEST(TopSingularVector, Invariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed, "svd-prop");
    auto a = random_matrix(2 + seed % 5, 1 + seed % 4, rng);
    auto t = top_singular_vector(a);
    EXPECT_NEAR(l2_norm(t.v.data()), 1.0, 1e-10);
    EXPECT_GE(t.sigma, 0.0);
    double trace = 0;
    for (double x : a.values()) trace += x * x;
    EXPECT_LE(t.sigma * t.sigma, trace + 1e-8);
    double su = 0;
    for (double x : t.u.values()) su += x;
    EXPECT_GE(su, 0.0);
  }
}

TEST(TopSingularVector, ZeroMatrixIsDegenerate) {
  EXPECT_THROW(top_singular_vector(Tensor({3, 3})), DegenerateInputError);
}

TEST(TopSingularVector, NonConvergenceIsFlagged) {
  // Two equal top singular values with a nearly-equal third keep sigma moving slowly.
  Tensor a = Tensor::matrix({{1.0, 0.0, 0.0}, {0.0, 0.999999, 0.0}, {0.0, 0.0, 0.5}});
  auto t = top_singular_vector(a, {1, 1e-15});
  EXPECT_FALSE(t.converged);
  EXPECT_EQ(t.iterations, 1u);
  EXPECT_GT(t.sigma, 0.0);
}

TEST(TopSingularVector, RejectsBadOptions) {
  EXPECT_THROW(top_singular_vector(Tensor::identity(2), {0, 1e-9}), RangeError);
  EXPECT_THROW(top_singular_vector(Tensor::identity(2), {10, 0.0}), RangeError);
}

TEST(FiniteDiff, Quadratic) {
  auto f = [](const Tensor& x) { return dot(x.data(), x.data()); };
  Tensor x = Tensor::vector({1, 2});
  EXPECT_LT(finite_diff_check(f, x, Tensor::vector({2, 4}), 1e-4), 1e-6);
}

TEST(FiniteDiff, ReluAwayFromKink) {
  Tensor w = Tensor::vector({0.5, -1.5, 2.0});
  auto f = [&](const Tensor& x) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::max(0.0, x[i]) * w[i];
    return s;
  };
  Tensor x = Tensor::vector({1.0, -2.0, 0.7});
  Tensor g = Tensor::vector({0.5, 0.0, 2.0});
  EXPECT_LT(finite_diff_check(f, x, g, 1e-4), 1e-6);
}

TEST(FiniteDiff, DetectsScaledGradient) {
  auto f = [](const Tensor& x) { return dot(x.data(), x.data()); };
  Tensor x = Tensor::vector({1, 2});
  EXPECT_NEAR(finite_diff_check(f, x, Tensor::vector({4, 8}), 1e-4), 0.5, 1e-6);
}

TEST(FiniteDiff, RejectsStepOutsideRange) {
  auto f = [](const Tensor& x) { return x[0]; };
  Tensor x = Tensor::vector({1});
  EXPECT_THROW(finite_diff_check(f, x, x, 1e-7), RangeError);
  EXPECT_THROW(finite_diff_check(f, x, x, 0.1), RangeError);
}

TEST(FiniteDiff, NonFiniteNamesCoordinate) {
  auto f = [](const Tensor& x) { return x[1] > 0 ? std::log(-1.0) : 0.0; };
  Tensor x = Tensor::vector({1, 1});
  try {
    finite_diff_check(f, x, Tensor::vector({0, 0}), 1e-4);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 0"), std::string::npos) << e.what();
  }
}
