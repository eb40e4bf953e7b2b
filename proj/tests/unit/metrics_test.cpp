#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "rankpose/error.hpp"
#include "rankpose/metrics.hpp"

namespace rankpose {
namespace {

TEST(KeypointSimilarity, ClosedForms) {
  EXPECT_EQ(keypoint_similarity(0.0, 3.0, 0.2), 1.0);
  const double s = 12.5;
  const double k = 0.079;
  EXPECT_NEAR(keypoint_similarity(s * k * std::sqrt(2.0), s, k), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(keypoint_similarity(s * k, s, k), std::exp(-0.5), 1e-12);
  EXPECT_THROW(keypoint_similarity(1.0, 0.0, 0.1), ParameterError);
  EXPECT_THROW(keypoint_similarity(1.0, 1.0, -0.1), ParameterError);
}

TEST(KeypointSimilarity, FromRecord) {
  InstanceRecord r;
  r.pred_coord = {3.0, 4.0};
  r.gt_coord = {0.0, 0.0};
  r.area = 5.0;
  r.falloff = 1.0;
  EXPECT_NEAR(keypoint_similarity(r), std::exp(-25.0 / 50.0), 1e-15);
}

TEST(Oks, MeanOverVisible) {
  InstanceRecord a;
  a.area = 1.0;
  InstanceRecord b = a;
  b.pred_coord = {1.0, 0.0};
  InstanceRecord hidden = b;
  hidden.visible = false;
  hidden.pred_coord = {50.0, 0.0};
  const std::vector<InstanceRecord> recs{a, b, hidden};
  EXPECT_NEAR(oks(recs), 0.5 * (1.0 + std::exp(-0.5)), 1e-15);
  const std::vector<InstanceRecord> none{hidden};
  EXPECT_THROW(oks(none), UndefinedError);
}

TEST(CocoCatalog, SeventeenKeypoints) {
  const KeypointCatalog c = KeypointCatalog::coco();
  EXPECT_EQ(c.size(), 17u);
  EXPECT_EQ(c.names.front(), "nose");
  EXPECT_NEAR(c.falloffs.front(), 2 * 0.026, 1e-12);
  EXPECT_NEAR(c.falloffs.back(), 2 * 0.089, 1e-12);
}

TEST(MeanAp, PerfectPredictions) {
  const std::vector<ScoredInstance> inst{{0.9, 1.0}, {0.2, 1.0}, {0.5, 1.0}};
  const EvalResult r = mean_ap(inst);
  EXPECT_EQ(r.map, 1.0);
  EXPECT_EQ(r.ar, 1.0);
  EXPECT_EQ(r.thresholds.size(), 10u);
}

// OKS (0.9, 0.6, 0.3) scored (0.2, 0.9, 0.5): ranked order is 0.6, 0.3, 0.9.
// t <= 0.6: hits at ranks 1 and 3, AP = 1/3 * 1 + 1/3 * 2/3 = 5/9.
// 0.6 < t <= 0.9: one hit at rank 3, AP = 1/3 * 1/3 = 1/9.  t = 0.95: 0.
TEST(MeanAp, HandComputedThreeInstances) {
  const std::vector<ScoredInstance> inst{{0.2, 0.9}, {0.9, 0.6}, {0.5, 0.3}};
  const EvalResult r = mean_ap(inst);
  for (std::size_t t = 0; t < 10; ++t) {
    const double expected = t < 3 ? 5.0 / 9.0 : (t < 9 ? 1.0 / 9.0 : 0.0);
    EXPECT_NEAR(r.ap_per_threshold[t], expected, 1e-15) << "threshold " << r.thresholds[t];
  }
  EXPECT_NEAR(r.map, 21.0 / 90.0, 1e-15);
}

TEST(MeanAp, ConfidenceOrderMatters) {
  const std::vector<ScoredInstance> good{{0.9, 0.9}, {0.1, 0.2}};
  const std::vector<ScoredInstance> bad{{0.1, 0.9}, {0.9, 0.2}};
  EXPECT_GT(mean_ap(good).map, mean_ap(bad).map);
  EXPECT_THROW(mean_ap(std::vector<ScoredInstance>{}), PreconditionError);
}

TEST(Pck, FractionWithinThreshold) {
  const std::vector<PckInstance> inst{{{0.5, 1.5, 1.0}, 10.0, std::nullopt},
                                      {{0.1, 3.0}, 20.0, 4.0}};
  EXPECT_NEAR(pck(inst, 0.1, PckReference::kBBoxDiag), 3.0 / 5.0, 1e-15);
  EXPECT_THROW(pck(inst, 0.1, PckReference::kHeadSize), ParameterError);
  const std::vector<PckInstance> head{{{0.1, 3.0}, std::nullopt, 4.0}};
  EXPECT_NEAR(pck(head, 0.5, PckReference::kHeadSize), 0.5, 1e-15);
}

TEST(Spearman, KnownValue) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{1, 3, 2, 5, 4};
  EXPECT_EQ(spearman(x, y), 0.8);
  EXPECT_EQ(spearman(x, x), 1.0);
  const std::vector<double> rev{5, 4, 3, 2, 1};
  EXPECT_EQ(spearman(x, rev), -1.0);
}

TEST(Spearman, Ties) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(fractional_ranks(v), (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
  const std::vector<double> flat(4, 1.0);
  EXPECT_THROW(spearman(v, flat), UndefinedError);
  EXPECT_THROW(spearman(std::vector<double>{1.0}, std::vector<double>{2.0}), UndefinedError);
}

// Pearson on fractional ranks, computed from scratch.
double spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double below = 0, equal = 0;
      for (double w : v) {
        below += w < v[i];
        equal += w == v[i];
      }
      r[i] = below + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

TEST(Spearman, MatchesOracleWithTies) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> small(0, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(12), y(12);
    for (auto& v : x) v = small(rng);
    for (auto& v : y) v = small(rng);
    EXPECT_NEAR(spearman(x, y), spearman_oracle(x, y), 1e-12);
  }
}

TEST(MinMax, ScalesToUnitInterval) {
  const std::vector<double> obs{2.0, -1.0, 5.0};
  const MinMaxCalibration cal = calibrate_minmax(obs);
  EXPECT_EQ(cal.min, -1.0);
  EXPECT_EQ(cal.max, 5.0);
  const auto scaled = minmax_scale(obs, cal);
  EXPECT_DOUBLE_EQ(scaled[0], 0.5);
  EXPECT_EQ(scaled[1], 0.0);
  EXPECT_EQ(scaled[2], 1.0);
  EXPECT_THROW(minmax_scale(obs, MinMaxCalibration{1.0, 1.0}), ParameterError);
}

TEST(MinMax, RankInvariance) {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredInstance> inst(40);
    std::vector<double> conf(40), q(40);
    for (std::size_t i = 0; i < 40; ++i) {
      conf[i] = normal(rng);
      q[i] = unit(rng);
      inst[i] = {conf[i], q[i]};
    }
    const auto scaled = minmax_scale(conf, calibrate_minmax(conf));
    std::vector<ScoredInstance> inst2(inst);
    for (std::size_t i = 0; i < 40; ++i) inst2[i].confidence = scaled[i];
    EXPECT_EQ(mean_ap(inst).map, mean_ap(inst2).map);
    EXPECT_EQ(spearman(conf, q), spearman(scaled, q));
  }
}

TEST(MinMax, PerTypeRecords) {
  InstanceRecord a;
  a.keypoint_id = 0;
  a.confidence = 3.0;
  InstanceRecord b = a;
  b.keypoint_id = 1;
  const std::vector<InstanceRecord> recs{a, b};
  const std::vector<MinMaxCalibration> cal{{1.0, 5.0}, {3.0, 4.0}};
  EXPECT_EQ(minmax_scale(recs, cal), (std::vector<double>{0.5, 0.0}));
  const std::vector<MinMaxCalibration> short_cal{{1.0, 5.0}};
  EXPECT_THROW(minmax_scale(recs, short_cal), ParameterError);
}

TEST(Covariance, Population) {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{2, 4, 6, 8};
  EXPECT_DOUBLE_EQ(covariance(a, b), 2.5);
  EXPECT_THROW(covariance(a, std::vector<double>{1.0}), ShapeError);
}

KeypointMatrix random_matrix(std::mt19937_64& rng, std::size_t k, std::size_t n) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  KeypointMatrix m(k, n);
  for (double& v : m.values) v = unit(rng);
  return m;
}

TEST(CovarianceIdentity, RandomMatrices) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + trial % 5;
    const std::size_t n = 2 + (trial * 37) % 199;
    const KeypointMatrix l = random_matrix(rng, k, n);
    const KeypointMatrix c = random_matrix(rng, k, n);
    const CovarianceReport r = covariance_identity_check(l, c);

    std::vector<double> ml(n, 0.0), mc(n, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        ml[i] += l.at(j, i) / static_cast<double>(k);
        mc[i] += c.at(j, i) / static_cast<double>(k);
      }
    }
    const double mean_l = std::accumulate(ml.begin(), ml.end(), 0.0) / static_cast<double>(n);
    const double mean_c = std::accumulate(mc.begin(), mc.end(), 0.0) / static_cast<double>(n);
    double direct = 0.0;
    for (std::size_t i = 0; i < n; ++i) direct += (ml[i] - mean_l) * (mc[i] - mean_c);
    direct /= static_cast<double>(n);

    EXPECT_NEAR(r.cov_oks_conf, direct, 1e-12);
    EXPECT_NEAR(r.cov_oks_conf, r.double_sum, 1e-9);
    EXPECT_LE(r.discrepancy, 1e-9);
  }
}

TEST(ZeroCross, CrossTermsVanish) {
  const std::vector<double> diag{0.02, -0.01, 0.05, 0.0};
  const ZeroCrossPair p = make_zero_cross_pair(diag, 40, 9);
  const CovarianceReport r = covariance_identity_check(p.quality, p.confidence);
  EXPECT_LT(r.max_abs_cross, 1e-12);
  for (std::size_t j = 0; j < diag.size(); ++j) {
    EXPECT_NEAR(covariance(p.quality.row(j), p.confidence.row(j)), diag[j], 1e-12);
  }
  EXPECT_NEAR(r.cov_oks_conf, r.diagonal_sum, 1e-12);
  EXPECT_THROW(make_zero_cross_pair(diag, 12, 9), ParameterError);
}

TEST(ZeroCross, RaisingDiagonalRaisesCorrelation) {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> cov(-0.05, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + trial % 5;
    std::vector<double> diag(k);
    for (double& d : diag) d = cov(rng);
    const MonotonicityReport m =
        check_diagonal_monotonicity(diag, 3 * k + 1 + trial, trial % k, 0.01, 1000 + trial);
    EXPECT_TRUE(m.increased);
    EXPECT_NEAR(m.after.cov_oks_conf - m.before.cov_oks_conf,
                0.01 / static_cast<double>(k * k), 1e-12);
  }
}

TEST(Evaluate, PerfectPredictions) {
  const KeypointCatalog cat = KeypointCatalog::coco();
  std::vector<InstancePrediction> preds(3);
  std::vector<InstanceTruth> truths(3);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double x = static_cast<double>(n + k), y = static_cast<double>(2 * k);
      truths[n].keypoints.push_back({x, y, true});
      preds[n].keypoints.push_back({x, y, 0.1 * static_cast<double>(n + k)});
    }
    truths[n].area = 10.0;
    truths[n].bbox_diag = 10.0;
  }
  const EvalResult r = evaluate(preds, truths, cat);
  EXPECT_EQ(r.map, 1.0);
  EXPECT_EQ(r.pck, 1.0);
  EXPECT_EQ(r.mean_ks, 1.0);
  EXPECT_EQ(r.mean_error, 0.0);
  // Every KS is 1, so no per-type correlation is defined.
  EXPECT_TRUE(std::isnan(r.spearman));
}

TEST(Evaluate, SpearmanIsMeanOverTypes) {
  KeypointCatalog cat{{"a", "b"}, {1.0, 1.0}};
  std::vector<InstancePrediction> preds(4);
  std::vector<InstanceTruth> truths(4);
  for (std::size_t n = 0; n < 4; ++n) {
    const double d = static_cast<double>(n);
    truths[n] = {{{0, 0, true}, {0, 0, true}}, 2.0, 5.0, std::nullopt};
    // Type a: confidence falls as error grows (rho = 1). Type b: it rises.
    preds[n].keypoints = {{d, 0, 1.0 - 0.1 * d}, {d, 0, 0.1 * d}};
  }
  const EvalResult r = evaluate(preds, truths, cat);
  EXPECT_NEAR(r.spearman, 0.0, 1e-15);
  EXPECT_NEAR(r.mean_error, 1.5, 1e-15);
  cat.falloffs.pop_back();
  cat.names.pop_back();
  EXPECT_THROW(evaluate(preds, truths, cat), ParameterError);
}

}  // namespace
}  // namespace rankpose
