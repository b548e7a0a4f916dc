#include <gtest/gtest.h>

#include <algorithm>
#include <array>

#include "novo/batch_protocol.hpp"
#include "novo/errors.hpp"

using namespace novo;

TEST(MultiHot, EncodesSetsAndComplements) {
  const auto a = multi_hot({0, 2}, 4);
  EXPECT_EQ(a.str(), "1010");
  EXPECT_EQ(a.count(), 2u);
  EXPECT_EQ(complement(a).str(), "0101");
  EXPECT_EQ(bitwise_or(a, multi_hot({3}, 4)).str(), "1011");
  EXPECT_EQ(multi_hot({}, 3).str(), "000");
  EXPECT_EQ(a.members(), (ClassSet{0, 2}));
}

TEST(MultiHot, RejectsBadInput) {
  EXPECT_THROW(multi_hot({4}, 4), IndexError);
  EXPECT_THROW(MultiHotClassSet({0, 2}), ContractError);
  EXPECT_THROW(bitwise_or(multi_hot({}, 3), multi_hot({}, 4)), DimensionError);
}

TEST(DropExpand, ModeNamesRoundTrip) {
  for (auto m : {DropExpandMode::kNone, DropExpandMode::kDropOnly, DropExpandMode::kDropAndExpand}) {
    EXPECT_EQ(parse_drop_expand(to_string(m)), m);
  }
  EXPECT_THROW(parse_drop_expand("both"), ConfigError);
}

TEST(DropExpand, PlanWithFixedCountsPartitionsLabelSpace) {
  Rng rng(5);
  const ClassSet present{1, 3, 4, 6};
  const auto plan = plan_batch(present, 8, 2, 3, rng);
  EXPECT_EQ(plan.dropped.size(), 2u);
  EXPECT_EQ(plan.expanded.size(), 3u);
  for (auto c : plan.dropped) EXPECT_TRUE(present.count(c));
  for (auto c : plan.expanded) EXPECT_FALSE(present.count(c));
  EXPECT_EQ(plan.retain.size(), 4 - 2 + 3u);
  EXPECT_EQ(plan.retain.size() + plan.forget.size(), 8u);
  EXPECT_EQ(plan.U, complement(plan.A));
  EXPECT_THROW(plan_batch(present, 8, 5, 0, rng), ContractError);
  EXPECT_THROW(plan_batch(present, 8, 0, 5, rng), ContractError);
}

TEST(DropExpand, ZeroCountsGiveTheBatchItself) {
  Rng rng(1);
  const auto plan = plan_batch({0, 2}, 4, 0, 0, rng);
  EXPECT_EQ(plan.A.str(), "1010");
  EXPECT_EQ(plan.U.str(), "0101");
  EXPECT_TRUE(plan.dropped.empty());
  EXPECT_TRUE(plan.expanded.empty());
}

// Properties over many random batches for every mode.
TEST(DropExpand, InvariantsHoldAcrossRandomBatches) {
  Rng rng(42);
  std::uniform_int_distribution<std::size_t> classes(2, 12);
  for (auto mode : {DropExpandMode::kNone, DropExpandMode::kDropOnly, DropExpandMode::kDropAndExpand}) {
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t c = classes(rng);
      ClassSet present;
      std::bernoulli_distribution coin(0.5);
      for (std::size_t k = 0; k < c; ++k) {
        if (coin(rng)) present.insert(k);
      }
      if (present.empty()) present.insert(0);
      if (present.size() == c) present.erase(c - 1);
      const auto plan = drop_and_expand(present, c, rng, mode);
      for (std::size_t k = 0; k < c; ++k) ASSERT_NE(plan.A.test(k), plan.U.test(k));
      ASSERT_LT(plan.r_a, present.size());  // at least one present class stays retained
      ASSERT_LE(plan.r_u, c - present.size());
      ASSERT_GE(plan.A.count(), 1u);
      if (mode == DropExpandMode::kNone) {
        ASSERT_EQ(plan.r_a, 0u);
        ASSERT_EQ(plan.r_u, 0u);
        ASSERT_EQ(plan.retain, present);
      }
      if (mode == DropExpandMode::kDropOnly) {
        ASSERT_EQ(plan.r_u, 0u);
      }
      for (auto k : plan.dropped) ASSERT_TRUE(present.count(k) && plan.forget.count(k));
      for (auto k : plan.expanded) ASSERT_TRUE(!present.count(k) && plan.retain.count(k));
    }
  }
}

TEST(DropExpand, AllClassesPresentMeansNothingToExpand) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto plan = drop_and_expand({0, 1, 2, 3}, 4, rng);
    EXPECT_EQ(plan.r_u, 0u);
    EXPECT_TRUE(plan.expanded.empty());
  }
}

TEST(DropExpand, RejectsDegenerateBatches) {
  Rng rng(0);
  EXPECT_THROW(drop_and_expand({}, 4, rng), ContractError);
  EXPECT_THROW(drop_and_expand({0}, 1, rng), ContractError);
  EXPECT_THROW(drop_and_expand({0, 9}, 4, rng), IndexError);
}

TEST(DropExpand, DropCountIsUniform) {
  Rng rng(2024);
  std::array<double, 4> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto plan = drop_and_expand({0, 2, 4, 6}, 8, rng);
    ++counts.at(plan.r_a);
  }
  double chi2 = 0;
  for (double n : counts) chi2 += (n - draws / 4.0) * (n - draws / 4.0) / (draws / 4.0);
  EXPECT_LT(chi2, 16.27);  // chi-square, 3 degrees of freedom, p = 0.001
}

TEST(DropExpand, SameSeedSamePlans) {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) {
    const auto pa = drop_and_expand({1, 2, 5}, 8, a);
    const auto pb = drop_and_expand({1, 2, 5}, 8, b);
    ASSERT_EQ(pa.A, pb.A);
    ASSERT_EQ(pa.dropped, pb.dropped);
  }
}
