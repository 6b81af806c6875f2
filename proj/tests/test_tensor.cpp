#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace odf {
namespace {

using testing::random_tensor;

TEST(Tensor, ConstructionChecksValueCount) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{1, 1, 1, 1, 1}), ShapeError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, ConcatChannelExtents) {
  Tensor a({1, 2, 2, 2}, 1.0), b({1, 3, 2, 2}, 2.0);
  Tensor c = concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{1, 5, 2, 2}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(c[i], 1.0);
  for (std::size_t i = 8; i < 20; ++i) EXPECT_EQ(c[i], 2.0);
}

TEST(Tensor, ConcatRejectsMismatchAndBadAxis) {
  Tensor a({1, 2, 2, 2}), b({1, 3, 2, 3});
  EXPECT_THROW(concat({a, b}, 1), ShapeError);
  EXPECT_THROW(concat({a, a}, 4), ShapeError);
  EXPECT_THROW(concat({a, a}, -5), ShapeError);
}

TEST(Tensor, MatmulZeroAnnihilates) {
  Rng rng(1);
  Tensor a({4, 3}, 0.0);
  Tensor b = random_tensor(rng, {3, 1});
  Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{4, 1}));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, MatmulMatchesLoops) {
  Rng rng(2);
  Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 4, 5});
  Tensor c = matmul(a, b);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a[(n * 3 + i) * 4 + k] * b[(n * 4 + k) * 5 + j];
        EXPECT_NEAR(c[(n * 3 + i) * 5 + j], s, 1e-14);
      }
}

TEST(Tensor, ShapeMismatchNamesBothShapes) {
  Tensor a({2, 3}), b({3, 2});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(3,2)"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST(Tensor, LeadingBatchBroadcast) {
  Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b({2}, std::vector<double>{10, 20});
  Tensor c = add(a, b);
  EXPECT_EQ(c[0], 11);
  EXPECT_EQ(c[3], 24);
  EXPECT_THROW(add(b, a), ShapeError);
}

TEST(Tensor, SumOfProductGradientIsOtherOperand) {
  Rng rng(3);
  Tensor a = random_tensor(rng, {3, 4}).set_requires_grad(true);
  Tensor b = random_tensor(rng, {3, 4});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(a, b)));
  }
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a.grad()[i], b[i]);
  auto r = testing::check_grad("sum_mul", {a.detach(), b.detach()},
                               [](const auto& x) { return sum(mul(x[0], x[1])); }, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Tensor, BackwardOfSumIsOnes) {
  Tensor x({2, 3}, 0.25);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, HalfSquaredNormGradient) {
  Tensor x({3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(scale(sum(mul(x, x)), 0.5));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 3.0);
}

TEST(Tensor, BackwardAccumulatesWithoutReset) {
  Tensor x({2}, std::vector<double>{1, -1});
  x.set_requires_grad(true);
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(scale(x, 3.0)));
  }
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, BackwardRejectsNonScalarAndForeignRoot) {
  Tensor x({2}, 1.0);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ShapeError);
  Tape other;
  Tensor y = sum(x);
  EXPECT_THROW(other.backward(y), ShapeError);
}

TEST(Tensor, ThreeOpChainMatchesFiniteDifferences) {
  Rng rng(4);
  auto r = testing::check_grad(
      "chain", {random_tensor(rng, {3, 3}), random_tensor(rng, {3, 3})},
      [](const auto& x) { return sum(mul(matmul(x[0], x[1]), x[0])); }, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.max_rel_error;
}

TEST(Tensor, BackwardVisitsReverseRecordingOrder) {
  Tensor x({2}, 1.0);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = scale(x, 2.0);
  Tensor z = mul(y, y);
  Tensor s = sum(z);
  std::vector<std::size_t> visited;
  tape.backward(s, &visited);
  ASSERT_EQ(visited.size(), tape.size());
  for (std::size_t i = 0; i < visited.size(); ++i) EXPECT_EQ(visited[i], tape.size() - 1 - i);
}

TEST(Tensor, NonParticipatingLeafStaysZero) {
  Tensor x({2}, 1.0), unused({2}, 5.0);
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor other = scale(unused, 2.0);
  tape.backward(sum(x));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
  (void)other;
}

TEST(Tensor, NoGradScopeRecordsNothing) {
  Tensor x({2}, 1.0);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    Tensor y = scale(x, 2.0);
    EXPECT_TRUE(y.is_leaf());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tensor, FiniteGuardRejectsNonFinite) {
  Tensor x({2}, std::vector<double>{1.0, 1e308});
  EXPECT_NO_THROW(scale(x, 10.0));
  FiniteGuard guard;
  EXPECT_THROW(scale(x, 10.0), NumericError);
}

TEST(Tensor, ReshapeRoundTrip) {
  Rng rng(5);
  Tensor x = random_tensor(rng, {2, 3, 4});
  Tensor y = reshape(reshape(x, {4, 6}), {2, 3, 4});
  EXPECT_TRUE(testing::bit_equal(x, y));
  EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
}

TEST(Tensor, ConcatThenSliceRecoversInputs) {
  Rng rng(6);
  for (long axis = 0; axis < 3; ++axis) {
    Tensor a = random_tensor(rng, {2, 3, 4});
    Shape sb = a.shape();
    sb[axis] = 2;
    Tensor b = random_tensor(rng, sb);
    Tensor c = concat({a, b}, axis);
    EXPECT_TRUE(testing::bit_equal(slice(c, axis, 0, a.dim(axis)), a));
    EXPECT_TRUE(testing::bit_equal(slice(c, axis, a.dim(axis), 2), b));
  }
  EXPECT_THROW(slice(Tensor({2, 3}), 1, 2, 2), ShapeError);
}

TEST(Tensor, TransposeAndPermute) {
  Tensor x({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  Tensor t = transpose(x, 0, 1);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t[1], 3.0);
  EXPECT_THROW(permute(x, {0, 0}), ShapeError);
}

TEST(Sgd, PlainGradientStep) {
  Tensor p({1}, 1.0);
  p.set_requires_grad(true);
  p.grad()[0] = 2.0;
  Sgd opt({p}, 0.1, 0.0);
  opt.step();
  EXPECT_NEAR(p[0], 0.8, 1e-15);
}

TEST(Sgd, MomentumHandRecursion) {
  Tensor p({1}, 0.0);
  p.set_requires_grad(true);
  Sgd opt({p}, 1.0, 0.9);
  for (int i = 0; i < 2; ++i) {
    p.grad()[0] = 1.0;
    opt.step();
  }
  EXPECT_NEAR(p[0], -2.9, 1e-15);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  Tensor p({3}, std::vector<double>{1, 2, 3});
  p.set_requires_grad(true);
  p.grad();
  Sgd opt({p}, 0.5, 0.9);
  opt.step();
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[2], 3.0);
}

TEST(Sgd, ShapeMismatchRejected) {
  std::vector<Tensor> params{Tensor({2}, 1.0)};
  std::vector<Tensor> vel{Tensor({3}, 0.0)};
  params[0].set_requires_grad(true);
  EXPECT_THROW(sgd_step(params, 0.1, 0.9, vel), ShapeError);
  std::vector<Tensor> none;
  EXPECT_THROW(sgd_step(params, 0.1, 0.9, none), ShapeError);
}

TEST(Sgd, ClipRescalesJointNorm) {
  Tensor a({1}, 0.0), b({1}, 0.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.grad()[0] = 3.0;
  b.grad()[0] = 4.0;
  std::vector<Tensor> ps{a, b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(ps, 0.0), 1.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
}

}  // namespace
}  // namespace odf
