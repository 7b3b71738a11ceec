#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>

#include "magnet/tensor.hpp"

namespace magnet {
namespace {

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  const Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at({1, 2}), 6.0);
  EXPECT_EQ(t.offset({1, 0}), 3u);
}

TEST(Tensor, RejectsNonFiniteData) {
  EXPECT_THROW(Tensor::vector({1.0, std::nan("")}), NonFiniteError);
  EXPECT_THROW(Tensor::vector({std::numeric_limits<double>::infinity()}), NonFiniteError);
  EXPECT_NO_THROW(Tensor::vector({kMaskedScore}));
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.reshaped({3, 2}).values(), t.values());
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Softmax, SymmetricPairIsUniform) {
  const Tensor s = ops::softmax(Tensor::matrix(2, 1, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Softmax, MatchesDirectEvaluation) {
  const Tensor s = ops::softmax_last(Tensor::vector({1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(s[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(s[0], 0.09003, 1e-5);
  EXPECT_NEAR(s[1], 0.24473, 1e-5);
  EXPECT_NEAR(s[2], 0.66524, 1e-5);
}

TEST(Softmax, SingleElementIsOne) {
  EXPECT_EQ(ops::softmax_last(Tensor::vector({-37.0}))[0], 1.0);
}

TEST(Softmax, MaskedScoresGetExactlyZero) {
  const Tensor s = ops::softmax_last(Tensor::vector({0.3, kMaskedScore, 1.2}));
  EXPECT_EQ(s[1], 0.0);
  EXPECT_NEAR(s[0] + s[2], 1.0, 1e-15);
}

TEST(Softmax, Axis0NormalizesColumns) {
  const Tensor s = ops::softmax(Tensor::matrix(2, 2, {1, 5, 3, 5}), 0);
  EXPECT_NEAR(s[0] + s[2], 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(LayerNorm, ConstantSliceCollapsesToBias) {
  const Tensor y = ops::layer_norm(Tensor::vector({5, 5, 5}), Tensor::vector({1, 1, 1}), Tensor::vector({0, 0, 0}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoPointsNormalizeToPlusMinusOne) {
  const Tensor y = ops::layer_norm(Tensor::vector({1, 3}), Tensor::vector({1, 1}), Tensor::vector({0, 0}));
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  const Tensor y = ops::layer_norm(Tensor::matrix(2, 2, {0.3, -4, 7, 2}), Tensor::vector({0, 0}), Tensor::vector({2.5, -1}));
  EXPECT_EQ(y.values(), (std::vector<double>{2.5, -1, 2.5, -1}));
}

TEST(Activation, ReferenceValues) {
  EXPECT_EQ(activate(Activation::kSigmoid, 0.0), 0.5);
  EXPECT_NEAR(activate(Activation::kElu, -1.0), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(activate(Activation::kElu, -1.0), -0.63212, 1e-5);
  EXPECT_EQ(activate(Activation::kGelu, 0.0), 0.0);
  EXPECT_NEAR(activate(Activation::kSilu, 1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(activate(Activation::kSoftplus, 0.0), std::log(2.0), 1e-15);
}

TEST(Activation, ReTanhClampsNonPositiveInputs) {
  EXPECT_EQ(activate(Activation::kReTanh, -0.5), 0.0);
  EXPECT_EQ(activate(Activation::kReTanh, 0.0), 0.0);
  EXPECT_NEAR(activate(Activation::kReTanh, 1.0), 0.761594, 1e-6);
  EXPECT_LT(activate(Activation::kReTanh, 50.0), 1.0 + 1e-15);
}

TEST(Activation, DerivativesMatchCentralDifferences) {
  for (Activation kind : {Activation::kSigmoid, Activation::kTanh, Activation::kGelu, Activation::kElu,
                          Activation::kSilu, Activation::kSoftplus, Activation::kReTanh, Activation::kExp}) {
    for (double x : {-1.7, -0.3, 0.4, 2.1}) {
      const double h = 1e-6;
      const double numeric = (activate(kind, x + h) - activate(kind, x - h)) / (2 * h);
      EXPECT_NEAR(activate_derivative(kind, x), numeric, 1e-7) << activation_name(kind) << " at " << x;
    }
  }
}

TEST(Matmul, BatchedLeadingAxes) {
  const Tensor a({2, 1, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 2, {1, 0, 1, 1});
  EXPECT_EQ(ops::matmul(a, b).values(), (std::vector<double>{3, 2, 7, 4}));
  EXPECT_THROW(ops::matmul(a, Tensor::matrix(3, 1, {1, 1, 1})), ShapeError);
}

TEST(Matmul, BmmTransposeMatchesExplicitTranspose) {
  const Tensor a({1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Tensor b({1, 2, 3}, std::vector<double>{1, 0, 2, -1, 1, 0});
  const Tensor bt({1, 3, 2}, std::vector<double>{1, -1, 0, 1, 2, 0});
  EXPECT_EQ(ops::bmm(a, b, true).values(), ops::bmm(a, bt).values());
}

TEST(Matmul, MatchesNaiveTripleLoop) {
  for (const auto& [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {17, 9, 23}, {64, 33, 40}}) {
    Tensor a({m, k}), b({k, n});
    for (std::size_t i = 0; i < a.size(); ++i) a.mutable_data()[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
    for (std::size_t i = 0; i < b.size(); ++i) b.mutable_data()[i] = std::cos(0.53 * static_cast<double>(i) - 0.2);
    const Tensor c = ops::matmul(a, b);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0.0;
        for (std::size_t p = 0; p < k; ++p) ref += a.at({i, p}) * b.at({p, j});
        EXPECT_NEAR(c.at({i, j}), ref, 1e-12 * static_cast<double>(k)) << m << "x" << k << "x" << n;
      }
    }
  }
}

TEST(ShapeOps, PermuteAndFlip) {
  const Tensor a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(ops::transpose(a).values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(ops::permute(a, {1, 0}).values(), ops::transpose(a).values());
  EXPECT_EQ(ops::flip(a, 1).values(), (std::vector<double>{3, 2, 1, 6, 5, 4}));
  EXPECT_EQ(ops::flip(ops::flip(a, 0), 0), a);
}

}  // namespace
}  // namespace magnet
