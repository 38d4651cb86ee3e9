#include "oracles.hpp"
#include "test_util.hpp"

using namespace simkd;
using testutil::rand_tensor;

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
}

TEST(Matmul, IdentityAndZero) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor::identity(2), a), a);
  EXPECT_EQ(matmul(a, Tensor::identity(2)), a);
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{0}, {0}})), Tensor::matrix({{0}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
    const auto want = oracle::matmul(a.values(), b.values(), 3, 4, 2);
    const Tensor got = matmul(a, b);
    ASSERT_EQ(got.shape(), (Shape{3, 2}));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  Rng rng(12);
  const Tensor a = rand_tensor({5, 3}, rng), b = rand_tensor({4, 3}, rng), c = rand_tensor({5, 4}, rng);
  EXPECT_LT(max_abs_diff(matmul_bt(a, b), matmul(a, transpose(b))), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_at(a, c), matmul(transpose(a), c)), 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x2"), std::string::npos) << msg;
  }
}

TEST(Conv2d, IdentityAndZeroKernels) {
  Rng rng(13);
  const Tensor x = rand_tensor({2, 3, 4, 5}, rng);
  Tensor eye({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0;
  EXPECT_EQ(conv2d(x, eye), x);
  const Tensor zero = conv2d(x, Tensor({2, 3, 3, 3}));
  EXPECT_EQ(zero, Tensor({2, 2, 4, 5}));
}

TEST(Conv2d, MatchesNestedLoops) {
  Rng rng(14);
  {
    const Tensor x = rand_tensor({1, 1, 4, 4}, rng), k = rand_tensor({1, 1, 3, 3}, rng);
    const auto want = oracle::conv2d(x.values(), k.values(), 1, 1, 4, 4, 1, 3);
    EXPECT_LT(max_abs_diff(conv2d(x, k), Tensor({1, 1, 4, 4}, want)), 1e-12);
  }
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = rand_tensor({2, 3, 5, 4}, rng), k = rand_tensor({4, 3, 3, 3}, rng);
    const auto want = oracle::conv2d(x.values(), k.values(), 2, 3, 5, 4, 4, 3);
    EXPECT_LT(max_abs_diff(conv2d(x, k), Tensor({2, 4, 5, 4}, want)), 1e-12);
  }
}

TEST(Conv2d, DepthwiseIsPerChannel) {
  Rng rng(15);
  const Tensor x = rand_tensor({2, 3, 4, 4}, rng), k = rand_tensor({3, 1, 3, 3}, rng);
  const Tensor got = conv2d(x, k, 3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> plane(x.values().begin() + static_cast<long>((b * 3 + c) * 16),
                                x.values().begin() + static_cast<long>((b * 3 + c + 1) * 16));
      std::vector<double> ker(k.values().begin() + static_cast<long>(c * 9),
                              k.values().begin() + static_cast<long>((c + 1) * 9));
      const auto want = oracle::conv2d(plane, ker, 1, 1, 4, 4, 1, 3);
      for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got[(b * 3 + c) * 16 + i], want[i], 1e-12);
    }
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 3, 3}), Tensor({1, 3, 3, 3})), DimensionError);
}

TEST(FiniteDiff, LinearAndQuadratic) {
  const Tensor x = Tensor::vector({1, 2});
  const Tensor g = finite_diff_grad([](const Tensor& v) { return sum(v); }, x);
  EXPECT_NEAR(g[0], 1.0, 1e-9);
  EXPECT_NEAR(g[1], 1.0, 1e-9);
  const Tensor q = finite_diff_grad([](const Tensor& v) { return dot(v, v); }, x);
  EXPECT_NEAR(q[0], 2.0, 1e-8);
  EXPECT_NEAR(q[1], 4.0, 1e-8);
}

TEST(FiniteDiff, ExactOnDegreeTwoPolynomials) {
  Rng rng(16);
  for (int trial = 0; trial < 25; ++trial) {
    const Tensor a = rand_tensor({4, 4}, rng, 2.0), b = rand_tensor({4}, rng, 2.0), x = rand_tensor({4}, rng, 3.0);
    auto f = [&](const Tensor& v) {
      double s = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        s += b[i] * v[i];
        for (std::size_t j = 0; j < 4; ++j) s += a.at(i, j) * v[i] * v[j];
      }
      return s;
    };
    const Tensor g = finite_diff_grad(f, x);
    for (std::size_t i = 0; i < 4; ++i) {
      double want = b[i];
      for (std::size_t j = 0; j < 4; ++j) want += (a.at(i, j) + a.at(j, i)) * x[j];
      EXPECT_NEAR(g[i], want, 1e-8);
    }
  }
}

TEST(FiniteDiff, NonFiniteEvaluationIsNumericError) {
  EXPECT_THROW(finite_diff_grad([](const Tensor&) { return NAN; }, Tensor::vector({1.0})), NumericError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(42);
  EXPECT_TRUE(testutil::bitwise_equal(rand_tensor({7, 3}, c), rand_tensor({7, 3}, d)));
}

TEST(Rng, ChildStreamsAreDistinct) {
  const Rng root(5);
  std::set<std::uint64_t> keys;
  for (const char* label : {"a", "b", "shuffle", "model", "projector", "augment"}) keys.insert(root.child(label).key());
  for (std::uint64_t i = 0; i < 200; ++i) keys.insert(root.child("shuffle", i).key());
  EXPECT_EQ(keys.size(), 6u + 200u);
  // children do not disturb the parent
  Rng p(5), q(5);
  (void)p.child("x");
  EXPECT_EQ(p.next_u64(), q.next_u64());
}

TEST(Rng, PinnedValues) {
  // Seed 0 gives key 0, so the stream is the reference SplitMix64 sequence
  // started from state 0.
  Rng r(0);
  EXPECT_EQ(r.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(r.next_u64(), 0x6e789e6aa1b965f4ULL);
}

TEST(Rng, UniformAndBelowRanges) {
  Rng r(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}
