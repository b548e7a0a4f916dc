#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "novo/errors.hpp"
#include "novo/objectives.hpp"
#include "test_util.hpp"

using namespace novo;
using novo::testing::check_gradients;
using novo::testing::random_tensor64;

namespace {

// Reference CE from the definition, in long double.
double ref_ce(const std::vector<double>& row, std::size_t label) {
  long double z = 0;
  for (double v : row) z += std::exp(static_cast<long double>(v));
  return static_cast<double>(std::log(z) - row[label]);
}

}  // namespace

TEST(Objectives, IndicatorIsStrictlyPositive) {
  EXPECT_EQ(indicator(0.0), 0);
  EXPECT_EQ(indicator(-1.0), 0);
  EXPECT_EQ(indicator(1e-300), 1);
}

TEST(Objectives, ForgetMseWorkedExamples) {
  const auto U = multi_hot({1}, 2);
  EXPECT_DOUBLE_EQ(forget_mse(Tensor64({1, 2}, {5.0, 1.0}), U).item(), 0.0);
  EXPECT_DOUBLE_EQ(forget_mse(Tensor64({1, 2}, {5.0, 0.0}), U).item(), 1.0);
  EXPECT_DOUBLE_EQ(forget_mse(Tensor64({1, 2}, {5.0, 0.0}), multi_hot({}, 2)).item(), 0.0);
}

TEST(Objectives, ForgetMseAveragesOverForgetPositionsOnly) {
  // Two forget positions, target 1/2; retain logits must not matter.
  const Tensor64 logits({2, 3}, {100.0, 0.5, 1.5, -100.0, 0.0, 0.5});
  const auto U = multi_hot({1, 2}, 3);
  const double expected = (0.0 + 1.0 + 0.25 + 0.0) / 4.0;
  EXPECT_DOUBLE_EQ(forget_mse(logits, U).item(), expected);
}

TEST(Objectives, InverseCeWorkedExample) {
  // Two classes, label 0: CE = log(1 + e^x) = 2 for x = log(e^2 - 1).
  const double x = std::log(std::exp(2.0) - 1.0);
  const Tensor64 logits({1, 2}, {0.0, x});
  const std::vector<std::size_t> labels{0};
  EXPECT_NEAR(inverse_ce(logits, labels, multi_hot({0}, 2), 0.0).item(), 0.5, 1e-12);
  EXPECT_NEAR(inverse_ce(logits, labels, multi_hot({0}, 2), 1e-3).item(), 1.0 / 2.001, 1e-12);
}

TEST(Objectives, JointLossIsWeightedSum) {
  const auto t = joint_loss(Tensor64::scalar(2.0), Tensor64::scalar(3.0), Tensor64::scalar(4.0), LossWeights{1, 1, 1});
  EXPECT_DOUBLE_EQ(t.item(), 9.0);
  const auto w = joint_loss(Tensor64::scalar(2.0), Tensor64::scalar(3.0), Tensor64::scalar(4.0), {0.5, 0, 2});
  EXPECT_DOUBLE_EQ(w.item(), 9.0);
  EXPECT_THROW(joint_loss(Tensor64::scalar(1.0), Tensor64::scalar(1.0), Tensor64::scalar(1.0), {1, -1, 1}),
               ConfigError);
}

TEST(Objectives, RetainCeMatchesReferenceOnRetainSamples) {
  std::mt19937_64 rng(8);
  const auto logits = random_tensor64({6, 4}, rng, 2.0, false);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 1, 0};
  const auto A = multi_hot({0, 1}, 4);
  std::size_t n = 0;
  const double got = retain_ce(logits, labels, A, &n).item();
  double expected = 0;
  for (std::size_t i : {0, 1, 4, 5}) {
    std::vector<double> row(logits.values().begin() + i * 4, logits.values().begin() + i * 4 + 4);
    expected += ref_ce(row, labels[i]);
  }
  EXPECT_EQ(n, 4u);
  EXPECT_NEAR(got, expected / 4, 1e-12);
}

TEST(Objectives, EmptyPartitionsContributeZero) {
  const Tensor64 logits({2, 3}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> labels{0, 0};
  std::size_t n_r = 7, n_f = 7;
  EXPECT_EQ(retain_ce(logits, labels, multi_hot({1, 2}, 3), &n_r).item(), 0.0);
  EXPECT_EQ(inverse_ce(logits, labels, multi_hot({1, 2}, 3), 1e-3, &n_f).item(), 0.0);
  EXPECT_EQ(n_r, 0u);
  EXPECT_EQ(n_f, 0u);
}

TEST(Objectives, ShapeAndLabelErrors) {
  const Tensor64 logits({2, 3}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> one{0};
  const std::vector<std::size_t> bad{0, 3};
  const std::vector<std::size_t> ok{0, 1};
  EXPECT_THROW(retain_ce(logits, one, multi_hot({0}, 3)), DimensionError);
  EXPECT_THROW(retain_ce(logits, ok, multi_hot({0}, 4)), DimensionError);
  EXPECT_THROW(retain_ce(logits, bad, multi_hot({0}, 3)), IndexError);
  EXPECT_THROW(forget_mse(logits, multi_hot({0}, 2)), DimensionError);
}

TEST(Objectives, JointLossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  auto logits = random_tensor64({5, 4}, rng, 1.5);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 2};
  const auto A = multi_hot({0, 2}, 4);
  const auto U = complement(A);
  const auto check = check_gradients(
      [&] { return compute_losses(logits, labels, A, U, LossWeights{1.0, 0.7, 0.3}).total; }, {{"logits", logits}});
  EXPECT_LT(check.max_rel_error, 1e-3) << check.worst;
}

TEST(Objectives, InverseCeFallsAsForgetCeGrows) {
  const auto U = multi_hot({1}, 2);
  const std::vector<std::size_t> labels{1};
  double previous = 1e9;
  for (double margin : {0.0, 1.0, 2.0, 4.0, 8.0}) {
    const double v = inverse_ce(Tensor64({1, 2}, {margin, 0.0}), labels, U).item();
    EXPECT_LT(v, previous);
    previous = v;
  }
}
