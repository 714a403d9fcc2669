#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mdat/numkernel.hpp"

using namespace mdat;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, ChildrenAreIndependentOfParentState) {
  Rng a(7);
  const Rng c1 = a.child("x");
  a.next_u64();
  a.next_u64();
  Rng c2 = a.child("x");
  Rng c1m = c1;
  EXPECT_EQ(c1m.next_u64(), c2.next_u64());
}

TEST(Rng, DistinctLabelsAndIndicesDiffer) {
  const Rng r(3);
  std::set<std::uint64_t> firsts;
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng c = r.child("step", i);
    firsts.insert(c.next_u64());
  }
  Rng a = r.child("a"), b = r.child("b");
  firsts.insert(a.next_u64());
  firsts.insert(b.next_u64());
  EXPECT_EQ(firsts.size(), 52u);
}

TEST(Rng, UniformMomentsAndRange) {
  Rng r(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
  Rng r(5);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, BelowIsInRangeAndCoversAll) {
  Rng r(9);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(2);
  std::vector<int> v(30);
  for (int i = 0; i < 30; ++i) v[i] = i;
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 30u);
  bool moved = false;
  for (int i = 0; i < 30; ++i) moved = moved || v[i] != i;
  EXPECT_TRUE(moved);
}

TEST(SparseVector, RejectsBadEntries) {
  EXPECT_THROW(SparseVector(3, {{3, 1.0}}), RangeError);
  EXPECT_THROW(SparseVector(5, {{2, 1.0}, {2, 1.0}}), DomainError);
  EXPECT_THROW(SparseVector(5, {{2, 1.0}, {1, 1.0}}), DomainError);
  EXPECT_THROW(SparseVector(5, {{1, -1.0}}), DomainError);
  EXPECT_THROW(SparseVector(5, {{1, NAN}}), DomainError);
}

TEST(Affine, HandComputed) {
  const DenseMatrix w(2, 3, Vector{1, 2, 3, -1, 0, 0.5});
  const Vector b{0.5, -1};
  const Vector x{1, -2, 4};
  const Vector y = affine_forward(w, b, x);
  EXPECT_DOUBLE_EQ(y[0], 1 - 4 + 12 + 0.5);
  EXPECT_DOUBLE_EQ(y[1], -1 + 0 + 2 - 1);
}

TEST(Affine, SparseMatchesDenseBitForBit) {
  Rng r(4);
  DenseMatrix w(6, 40);
  for (double& v : w.values()) v = r.normal();
  Vector b(6);
  for (double& v : b) v = r.normal();
  std::vector<SparseEntry> e;
  for (std::uint32_t i = 0; i < 40; i += 3) e.push_back({i, r.uniform(0.0, 3.0)});
  const SparseVector x(40, e);
  const Vector ys = affine_forward(w, b, x);
  const Vector yd = affine_forward(w, b, x.densify());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(ys[i], yd[i]);
}

TEST(Affine, ShapeMismatchThrows) {
  const DenseMatrix w(2, 3);
  EXPECT_THROW(affine_forward(w, Vector{0, 0}, Vector{1, 2}), ShapeError);
  EXPECT_THROW(affine_forward(w, Vector{0}, Vector{1, 2, 3}), ShapeError);
}

TEST(Softmax, StableForLargeLogits) {
  const Vector z{1000.0, 1001.0, 999.0};
  const Vector q = softmax(z);
  const double e1 = std::exp(-1.0), e2 = std::exp(-2.0);
  EXPECT_NEAR(q[1], 1.0 / (1.0 + e1 + e2), 1e-15);
  EXPECT_NEAR(q[0] + q[1] + q[2], 1.0, 1e-15);
}

TEST(Argmax, TiesGoToSmallestIndex) {
  EXPECT_EQ(argmax(Vector{1, 3, 3, 2}), 1u);
  EXPECT_EQ(argmax(Vector{0, 0}), 0u);
}

TEST(Dropout, MaskValuesAndRate) {
  Rng r(8);
  const Vector m = bernoulli_mask(r, 100000, 0.6);
  std::size_t kept = 0;
  for (double v : m) {
    ASSERT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.6) < 1e-15);
    kept += v != 0.0;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 100000.0, 0.6, 0.01);
  Rng r2(8);
  EXPECT_THROW(bernoulli_mask(r2, 3, 0.0), ConfigError);
  EXPECT_THROW(bernoulli_mask(r2, 3, 1.5), ConfigError);
  const Vector ones = bernoulli_mask(r2, 3, 1.0);
  EXPECT_EQ(ones, (Vector{1, 1, 1}));
}

TEST(Adam, TwoStepsMatchHandComputation) {
  Vector p{1.0, -2.0};
  AdamState st(2, 0.1);
  adam_step(p, Vector{0.5, -4.0}, st);
  // First step moves each coordinate by lr * sign(g) up to eps.
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
  const double g = 1.0;
  adam_step(p, Vector{g, 0.0}, st);
  const double m = 0.9 * 0.05 + 0.1 * g;
  const double v = 0.999 * 0.00025 + 0.001 * g * g;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8),
              1e-14);
}

TEST(Adam, RejectsNonFiniteAndMismatch) {
  Vector p{1.0};
  AdamState st(1, 0.1);
  EXPECT_THROW(adam_step(p, Vector{NAN}, st), NumericError);
  EXPECT_THROW(adam_step(p, Vector{1.0, 2.0}, st), ShapeError);
}

TEST(Mean, PairwiseSum) {
  Vector v(1000, 0.1);
  EXPECT_NEAR(mean(v), 0.1, 1e-15);
  EXPECT_EQ(mean(Vector{}), 0.0);
}
