#include <gtest/gtest.h>

#include <cmath>

#include "magnet/autodiff.hpp"
#include "magnet/params.hpp"
#include "test_util.hpp"

namespace magnet {
namespace {

using testing::random_tensor;

TEST(GradCheck, SumHasAllOnesGradient) {
  const double err = grad_check([](Tape&, Var x) { return sum_all(x); }, Tensor::vector({0.3, -2, 5}));
  EXPECT_LT(err, 1e-10);
}

TEST(GradCheck, SquaredNormGradient) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1, 2}));
  tape.backward(sum_all(mul(x, x)));
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{2, 4}));
  EXPECT_LT(grad_check([](Tape&, Var v) { return sum_all(mul(v, v)); }, Tensor::vector({1, 2})), 1e-8);
}

TEST(GradCheck, ReportsWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  const ScalarFn f = [](Tape& t, std::span<const Var> v) {
    Tensor out = v[0].value();
    for (double& y : out.mutable_data()) y *= y;
    const Var x = v[0];
    return sum_all(t.record(out, {x}, [x](Tape& tp, const Tensor& g) {
      Tensor d = x.value();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 3.0 * g[i];
      tp.accumulate(x, d);
    }));
  };
  EXPECT_GT(grad_check(f, {Tensor::vector({1.0, 2.0})}).max_rel_error, 0.3);  // |3x - 2x| / |3x|
}

TEST(Tape, BackwardIsBitwiseDeterministic) {
  Rng rng(3);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto run = [&] {
    Tape tape;
    const Var x = tape.leaf(a), w = tape.leaf(b);
    tape.backward(sum_all(softmax_last(gelu(matmul(x, w)))));
    return std::make_pair(tape.grad(x), tape.grad(w));
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, UnusedInputHasZeroGradient) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1, 2}));
  const Var unused = tape.leaf(Tensor::vector({3}));
  tape.backward(sum_all(x));
  EXPECT_EQ(tape.grad(unused).values(), (std::vector<double>{0}));
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  const Var c = tape.constant(Tensor::vector({1, 2}));
  const Var x = tape.leaf(Tensor::vector({3, 4}));
  tape.backward(sum_all(mul(c, x)));
  EXPECT_FALSE(tape.requires_grad(c));
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{1, 2}));
}

TEST(Broadcast, RightOperandMustAlign) {
  Tape tape;
  const Var a = tape.leaf(Tensor({2, 3}, 1.0));
  EXPECT_NO_THROW(add(a, tape.leaf(Tensor({3}, 1.0))));
  EXPECT_NO_THROW(add(a, tape.leaf(Tensor({2, 1}, 1.0))));
  EXPECT_THROW(add(a, tape.leaf(Tensor({2}, 1.0))), ShapeError);
}

TEST(TopkSoftmax, KeepsLargestProbabilitiesOnly) {
  Tape tape;
  const Tensor out = topk_softmax(tape.constant(Tensor::matrix(1, 3, {1, 2, 3})), 1).value();
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_NEAR(out[2], 0.66524, 1e-5);
}

TEST(TopkSoftmax, LargeKIsFullSoftmax) {
  Tape tape;
  const Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 0, 0, 5});
  EXPECT_EQ(topk_softmax(tape.constant(x), 7).value(), ops::softmax_last(x));
}

TEST(TopkSoftmax, TiesGoToLowerColumn) {
  Tape tape;
  const Tensor out = topk_softmax(tape.constant(Tensor::matrix(1, 3, {2, 2, 2})), 2).value();
  EXPECT_GT(out[0], 0.0);
  EXPECT_GT(out[1], 0.0);
  EXPECT_EQ(out[2], 0.0);
}

TEST(Dropout, IdentityOutsideTraining) {
  Tape tape;
  std::mt19937_64 rng(1);
  const Tensor x({4, 4}, 2.0);
  EXPECT_EQ(dropout(tape.constant(x), 0.5, rng).value(), x);
}

TEST(Dropout, InvertedScalingInTraining) {
  Tape tape;
  tape.set_training(true);
  std::mt19937_64 rng(1);
  const Tensor out = dropout(tape.constant(Tensor({1000}, 1.0)), 0.25, rng).value();
  std::size_t kept = 0;
  for (double v : out.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    kept += v != 0.0;
  }
  EXPECT_GT(kept, 650u);
  EXPECT_LT(kept, 850u);
}

TEST(NllLoss, ClampsZeroProbability) {
  Tape tape;
  const Var p = tape.constant(Tensor::matrix(1, 2, {1.0, 0.0}));
  const std::vector<int> y{1};
  EXPECT_NEAR(nll_loss(p, y).value()[0], -std::log(1e-12), 1e-9);
}

TEST(NllLoss, RejectsOutOfRangeLabels) {
  Tape tape;
  const Var p = tape.constant(Tensor::matrix(1, 2, {0.5, 0.5}));
  const std::vector<int> y{2};
  EXPECT_ANY_THROW(nll_loss(p, y));
}

TEST(ShapeOps, ConcatSliceRoundTrip) {
  Tape tape;
  Rng rng(5);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 2}, rng);
  const Var c = concat({tape.constant(a), tape.constant(b)}, 1);
  EXPECT_EQ(slice(c, 1, 0, 3).value(), a);
  EXPECT_EQ(slice(c, 1, 3, 5).value(), b);
}

TEST(ShapeOps, GatherScatterInverse) {
  Tape tape;
  const Tensor a = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const Var g = gather_rows(tape.constant(a), {2, 0});
  EXPECT_EQ(g.value().values(), (std::vector<double>{5, 6, 1, 2}));
  EXPECT_EQ(scatter_rows(g, {2, 0}, 3).value().values(), (std::vector<double>{1, 2, 0, 0, 5, 6}));
}

}  // namespace
}  // namespace magnet
