#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rankpose/error.hpp"
#include "rankpose/losses.hpp"
#include "rankpose/oracle.hpp"

namespace rankpose {
namespace {

void expect_same(const LossOutput& a, const LossOutput& b, double tol) {
  EXPECT_NEAR(a.value, b.value, tol);
  ASSERT_EQ(a.grad.size(), b.grad.size());
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_NEAR(a.grad[i], b.grad[i], tol) << "index " << i;
}

TEST(Oracle, HandCaseAgreesWithBruteForce) {
  const std::vector<double> scores{0.8, 0.9, 0.1, 0.5, 0.3, 0.0, 0.2, 0.6, -0.5};
  const std::vector<double> labels{1, 0, 0, 0, 1, 0, 0, 0, 0};
  const LossOutput brute = oracle::brute_rank(scores, partition(labels), 0.5);
  EXPECT_NEAR(brute.value, 0.6906887755102041, 1e-12);
  EXPECT_NEAR(brute.grad[1], 0.2895408163265306, 1e-12);
}

TEST(Oracle, RankPairTermsAreZeroOffPositiveNegativePairs) {
  const std::vector<double> scores{0.8, 0.9, 0.3, -0.2};
  const std::vector<double> labels{1, 0, 0.5, 0};
  const PixelPartition part = partition(labels);
  const PairTerms t = oracle::rank_pair_terms(scores, part, 0.5);
  const auto pos = part.positive_mask();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const bool pair = pos[i] && !pos[j];
      EXPECT_EQ(t.indicator[t.idx(i, j)], pair ? 1 : 0);
      if (!pair) {
        EXPECT_EQ(t.primary[t.idx(i, j)], 0.0);
      }
      EXPECT_DOUBLE_EQ(t.diff[t.idx(i, j)], scores[j] - scores[i]);
    }
  }
}

TEST(Oracle, SortPairTermsStayInsidePositives) {
  const std::vector<double> scores{0.1, 0.9, 0.3, -0.2};
  const std::vector<double> labels{1, 0, 0.5, 0};
  const PixelPartition part = partition(labels);
  const PairTerms t = oracle::sort_pair_terms(scores, part, 0.5);
  const auto pos = part.positive_mask();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (!(pos[i] && pos[j])) {
        EXPECT_EQ(t.indicator[t.idx(i, j)], 0);
      }
    }
  }
}

TEST(Oracle, KernelsMatchOnRandomCases) {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 150; ++trial) {
    const oracle::SpatialCase c = oracle::random_spatial_case(rng);
    expect_same(spatial_rank(c.scores, c.part, c.delta, c.self),
                oracle::brute_rank(c.scores, c.part, c.delta, c.self), 1e-9);
    expect_same(spatial_sort(c.scores, c.part, c.delta, c.self),
                oracle::brute_sort(c.scores, c.part, c.delta, c.self), 1e-9);
    const oracle::InstanceCase ic = oracle::random_instance_case(rng);
    expect_same(instance_sort(ic.confidences, ic.similarity, ic.delta, ic.self),
                oracle::brute_isort(ic.confidences, ic.similarity, ic.delta, ic.self), 1e-9);
  }
}

TEST(Oracle, RandomCasesRespectSizeLimits) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const oracle::SpatialCase c = oracle::random_spatial_case(rng);
    EXPECT_LE(c.scores.size(), 48u);
    EXPECT_GE(c.part.positives.size(), 1u);
    EXPECT_LE(c.part.positives.size(), 10u);
    const oracle::InstanceCase ic = oracle::random_instance_case(rng);
    EXPECT_GE(ic.confidences.size(), 2u);
    EXPECT_LE(ic.confidences.size(), 16u);
  }
}

TEST(Oracle, EquivalenceSweepReportsNoFailures) {
  const oracle::EquivalenceReport r = oracle::run_equivalence(100, 3);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.rank.cases, 100u);
  EXPECT_EQ(r.sort.cases, 100u);
  EXPECT_EQ(r.isort.cases, 100u);
  EXPECT_LE(r.rank.max_grad_error, 1e-9);
}

TEST(FiniteDiff, MseMatches) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  std::vector<double> pred(12), label(12);
  for (auto& v : pred) v = normal(rng);
  for (auto& v : label) v = normal(rng);
  const auto fn = [&](std::span<const double> x) { return mse_loss(x, label); };
  const oracle::FiniteDiffReport r = oracle::finite_diff_check(oracle::LossKind::kMse, fn, pred);
  EXPECT_EQ(r.evaluated, 12u);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(FiniteDiff, KlMatches) {
  const std::vector<double> tx{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> ty{0.25, 0.25, 0.4, 0.1};
  const std::vector<double> z{0.3, -0.4, 1.1, 0.0, 0.5, 0.5, -1.0, 2.0};
  const auto fn = [&](std::span<const double> x) {
    return kl_loss(x.subspan(0, 4), x.subspan(4, 4), tx, ty, 1.7);
  };
  EXPECT_LT(oracle::finite_diff_check(oracle::LossKind::kKl, fn, z).max_rel_error, 1e-5);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  const auto fn = [](std::span<const double> x) {
    LossOutput out;
    out.value = x[0] * x[0];
    out.grad = {x[0]};  // off by a factor of two
    return out;
  };
  const std::vector<double> x{1.0};
  EXPECT_GT(oracle::finite_diff_check(oracle::LossKind::kMse, fn, x).max_rel_error, 0.4);
}

TEST(FiniteDiff, RefusesRankingLosses) {
  const std::vector<double> x{0.0, 1.0};
  const auto fn = [](std::span<const double> s) { return LossOutput{0.0, std::vector<double>(s.size()), 0.0, false}; };
  EXPECT_THROW(oracle::finite_diff_check(oracle::LossKind::kSpatialRank, fn, x), ContractError);
  EXPECT_THROW(oracle::finite_diff_check(oracle::LossKind::kSpatialSort, fn, x), ContractError);
  EXPECT_THROW(oracle::finite_diff_check(oracle::LossKind::kInstanceSort, fn, x), ContractError);
}

}  // namespace
}  // namespace rankpose
