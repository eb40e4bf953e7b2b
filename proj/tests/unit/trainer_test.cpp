#include <gtest/gtest.h>

#include <cmath>

#include "rankpose/error.hpp"
#include "rankpose/trainer.hpp"

namespace rankpose {
namespace {

SynthSpec tiny_spec(std::size_t instances, std::uint32_t h, std::uint32_t w, std::size_t keypoints) {
  SynthSpec s;
  s.seed = 3;
  s.num_instances = instances;
  s.grid = GridShape::two_d(h, w);
  s.num_keypoints = keypoints;
  s.feature_dim = 16;
  return s;
}

PoseModel fresh_model(const SynthDataset& data, const TrainConfig& cfg) {
  const std::size_t shared = data.spec.scale_feature ? 1 : 0;
  PoseModel m(cfg.model, make_heads(data.spec, cfg.layout, cfg.split_factor), data.spec.feature_dim + shared,
              data.samples.size(), shared);
  m.init_random(cfg.init_scale, cfg.seed ^ 0x5851f42d4c957f2dULL);
  return m;
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.loss = TrainLoss::kKl;
  EXPECT_THROW(c.validate(), ConfigError);
  c.layout = OutputLayout::kSimCC;
  EXPECT_NO_THROW(c.validate());
  c = TrainConfig{};
  c.holdout_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(LrSchedule, MultiStep) {
  TrainConfig c;
  c.lr = 0.1;
  c.lr_decay_epochs = {2, 4};
  c.lr_gamma = 0.1;
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 1), 0.1);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 2), 0.01);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 3), 0.01);
  EXPECT_NEAR(lr_at_epoch(c, 4), 0.001, 1e-15);
}

TEST(Heads, LayoutShapes) {
  const SynthSpec s = tiny_spec(4, 6, 5, 2);
  const auto h2 = make_heads(s, OutputLayout::kHeatmap2D, 2);
  ASSERT_EQ(h2.size(), 2u);
  EXPECT_EQ(h2[1].shape, GridShape::two_d(6, 5));
  EXPECT_EQ(h2[1].keypoint, 1u);
  const auto h1 = make_heads(s, OutputLayout::kSimCC, 3);
  ASSERT_EQ(h1.size(), 4u);
  EXPECT_EQ(h1[0].shape, GridShape::one_d_x(5, 3));
  EXPECT_EQ(h1[1].shape, GridShape::one_d_y(6, 3));
  EXPECT_EQ(h1[3].keypoint, 1u);
}

TEST(PoseModel, LinearLayoutAndSharedWeight) {
  PoseModel m(ModelKind::kLinear, {Head{GridShape::two_d(2, 2), 0}}, 4, 1, 1);
  EXPECT_EQ(m.block_size(0), 5u * 4u);
  auto p = m.params(0);
  // Local inputs 0..2 plus a bias column; the shared weight sits in the last row.
  for (std::size_t c = 0; c < 4; ++c) p[c] = 1.0;
  p[3] = 0.5;
  p[4 * 4] = 2.0;
  const std::vector<double> input{1.0, 2.0, 3.0, 0.25};
  std::vector<double> logits(4);
  m.forward(0, 0, input, logits);
  EXPECT_DOUBLE_EQ(logits[0], 1 + 2 + 3 + 0.5 + 2.0 * 0.25);
  EXPECT_DOUBLE_EQ(logits[1], 0.5);

  std::vector<double> grad(m.block_size(0), 0.0);
  m.backward(0, 0, input, std::vector<double>{1.0, 1.0, 0.0, 0.0}, grad);
  EXPECT_DOUBLE_EQ(grad[0], 1.0);
  EXPECT_DOUBLE_EQ(grad[3], 1.0);
  EXPECT_DOUBLE_EQ(grad[4 * 4], 2 * 0.25);
  EXPECT_EQ(grad[4 * 4 + 1], 0.0);
  EXPECT_THROW(m.forward(0, 0, std::vector<double>(3), logits), ShapeError);
}

TEST(PoseModel, ParamBlocksRoundTrip) {
  PoseModel m(ModelKind::kLinear, {Head{GridShape::two_d(3, 3), 0}, Head{GridShape::two_d(3, 3), 1}}, 6, 1, 1);
  m.init_random(0.1, 9);
  const auto blocks = m.to_param_blocks();
  const PoseModel back = PoseModel::from_param_blocks(blocks, 6, 1, 1);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(std::vector<double>(back.params(h).begin(), back.params(h).end()),
              std::vector<double>(m.params(h).begin(), m.params(h).end()));
  }
  auto broken = blocks;
  broken[1].values.pop_back();
  EXPECT_THROW(PoseModel::from_param_blocks(broken, 6, 1, 1), FormatError);
}

TEST(Train, FreeLogitsMseConverges) {
  const SynthDataset data = generate(tiny_spec(4, 3, 3, 1));
  TrainConfig cfg;
  cfg.model = ModelKind::kFreeLogits;
  cfg.loss = TrainLoss::kMse;
  cfg.annotation = Annotation::dot();
  cfg.lr = 0.5;
  cfg.epochs = 5000;
  cfg.batch_size = 4;
  const TrainResult r = train(data, cfg);
  EXPECT_LT(r.log.epochs.back().loss, 1e-6);
  EXPECT_EQ(r.final_eval.mean_error, 0.0);
}

TEST(Train, PerfectRankingIsAFixedPoint) {
  const SynthDataset data = generate(tiny_spec(6, 5, 4, 2));
  TrainConfig cfg;
  cfg.model = ModelKind::kFreeLogits;
  cfg.loss = TrainLoss::kSpatialRank;
  cfg.annotation = Annotation::dot();
  cfg.epochs = 3;
  cfg.batch_size = 4;
  PoseModel init = fresh_model(data, cfg);
  for (std::size_t h = 0; h < init.num_heads(); ++h) {
    auto p = init.params(h);
    const std::size_t cells = init.head(h).shape.cell_count();
    for (std::size_t n = 0; n < data.samples.size(); ++n) {
      for (std::size_t c = 0; c < cells; ++c) p[n * cells + c] = c == data.samples[n].gt_cells[h] ? 10.0 : 0.0;
    }
  }
  const PoseModel before = init;
  const TrainResult r = train(data, cfg, init);
  for (std::size_t h = 0; h < before.num_heads(); ++h) {
    for (std::size_t i = 0; i < before.block_size(h); ++i) EXPECT_EQ(r.model.params(h)[i], before.params(h)[i]);
  }
  for (const auto& e : r.log.epochs) {
    EXPECT_EQ(e.loss, 0.0);
    EXPECT_EQ(e.positive_mass, 0.0);
  }
}

TEST(Train, InstanceSortOnlyTouchesArgmaxCells) {
  const SynthDataset data = generate(tiny_spec(8, 6, 5, 2));
  TrainConfig cfg;
  cfg.model = ModelKind::kFreeLogits;
  cfg.loss = TrainLoss::kSpatialRSInstanceSort;
  cfg.loss_cfg.rank_coeff = 0.0;
  cfg.loss_cfg.sort_coeff = 0.0;
  cfg.loss_cfg.isort_coeff = 1.0;
  cfg.loss_cfg.isort_delta = 0.05;
  cfg.init_scale = 1.0;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.lr = 0.1;
  const PoseModel before = fresh_model(data, cfg);
  const TrainResult r = train(data, cfg, before);
  std::size_t changed = 0;
  for (std::size_t h = 0; h < before.num_heads(); ++h) {
    const std::size_t cells = before.head(h).shape.cell_count();
    for (std::size_t n = 0; n < data.samples.size(); ++n) {
      const auto old = before.params(h).subspan(n * cells, cells);
      const std::size_t am = static_cast<std::size_t>(std::max_element(old.begin(), old.end()) - old.begin());
      for (std::size_t c = 0; c < cells; ++c) {
        const double delta = r.model.params(h)[n * cells + c] - old[c];
        if (c != am) {
          EXPECT_EQ(delta, 0.0);
        }
        changed += delta != 0.0;
      }
    }
  }
  EXPECT_GT(changed, 0u);
}

TEST(Train, DeterministicAcrossWorkerCounts) {
  SynthSpec spec = tiny_spec(40, 8, 6, 3);
  spec.noise_sigma = 0.5;
  const SynthDataset data = generate(spec);
  TrainConfig cfg;
  cfg.loss = TrainLoss::kSpatialRSInstanceSort;
  cfg.loss_cfg.isort_delta = 1.0;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.lr = 0.01;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 17;
  cfg.workers = 1;
  const TrainResult a = train(data, cfg);
  cfg.workers = 3;
  const TrainResult b = train(data, cfg);
  const TrainResult c = train(data, cfg);
  for (std::size_t h = 0; h < a.model.num_heads(); ++h) {
    const std::vector<double> pa(a.model.params(h).begin(), a.model.params(h).end());
    EXPECT_EQ(pa, std::vector<double>(b.model.params(h).begin(), b.model.params(h).end()));
    EXPECT_EQ(pa, std::vector<double>(c.model.params(h).begin(), c.model.params(h).end()));
  }
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) EXPECT_EQ(a.log.epochs[e].loss, b.log.epochs[e].loss);
}

TEST(Train, LinearMseReducesLoss) {
  const SynthDataset data = generate(tiny_spec(60, 8, 6, 2));
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.lr = 0.02;
  cfg.epochs = 8;
  cfg.batch_size = 10;
  const TrainResult r = train(data, cfg);
  ASSERT_EQ(r.log.epochs.size(), 8u);
  EXPECT_LT(r.log.epochs.back().loss, 0.5 * r.log.epochs.front().loss);
  EXPECT_EQ(r.eval_indices.size(), 12u);
  EXPECT_EQ(r.eval_indices.front(), 48u);
  EXPECT_EQ(r.eval_predictions.size(), 12u);
}

TEST(Train, SimccKlRuns) {
  const SynthDataset data = generate(tiny_spec(30, 6, 5, 1));
  TrainConfig cfg;
  cfg.model = ModelKind::kFreeLogits;
  cfg.loss = TrainLoss::kKl;
  cfg.layout = OutputLayout::kSimCC;
  cfg.lr = 300.0;
  cfg.epochs = 100;
  cfg.batch_size = 30;
  const TrainResult r = train(data, cfg);
  EXPECT_LT(r.log.epochs.back().loss, r.log.epochs.front().loss);
  EXPECT_LT(r.final_eval.mean_error, 0.5);
}

TEST(Train, DivergenceIsReported) {
  const SynthDataset data = generate(tiny_spec(20, 5, 5, 1));
  TrainConfig cfg;
  cfg.lr = 1e30;
  cfg.epochs = 30;
  cfg.batch_size = 5;
  EXPECT_THROW(train(data, cfg), DivergenceError);
}

TEST(GradientMass, RankLossIsBalanced) {
  const SynthDataset data = generate(tiny_spec(10, 16, 12, 2));
  TrainConfig cfg;
  cfg.model = ModelKind::kFreeLogits;
  cfg.loss = TrainLoss::kSpatialRank;
  cfg.init_scale = 1.0;
  const PoseModel m = fresh_model(data, cfg);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const GradientMass g = gradient_mass_probe(m, data, cfg, idx);
  EXPECT_GT(g.positive, 0.0);
  EXPECT_NEAR(g.positive, g.negative, 1e-9);
}

TEST(GradientMass, MseDotIsDominatedByNegatives) {
  const SynthDataset data = generate(tiny_spec(10, 64, 48, 1));
  TrainConfig cfg;
  cfg.model = ModelKind::kFreeLogits;
  cfg.loss = TrainLoss::kMse;
  cfg.annotation = Annotation::dot();
  cfg.init_scale = 0.05;
  const PoseModel m = fresh_model(data, cfg);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const GradientMass g = gradient_mass_probe(m, data, cfg, idx);
  EXPECT_GT(g.negative, 10.0 * g.positive);
}

TEST(Catalog, CyclesCocoFalloffs) {
  const KeypointCatalog coco = KeypointCatalog::coco();
  const KeypointCatalog c = catalog_for(20);
  ASSERT_EQ(c.size(), 20u);
  EXPECT_EQ(c.falloffs[0], coco.falloffs[0]);
  EXPECT_EQ(c.falloffs[17], coco.falloffs[0]);
  EXPECT_EQ(c.falloffs[19], coco.falloffs[2]);
}

TEST(GroundTruth, PixelCoordinates) {
  const SynthDataset data = generate(tiny_spec(3, 7, 9, 2));
  const std::vector<std::size_t> idx{2};
  const auto t = ground_truth(data, idx);
  ASSERT_EQ(t.size(), 1u);
  const Cell c = cell_of(data.spec.grid, data.samples[2].gt_cells[1]);
  EXPECT_EQ(t[0].keypoints[1].x, static_cast<double>(c.col));
  EXPECT_EQ(t[0].keypoints[1].y, static_cast<double>(c.row));
  EXPECT_EQ(t[0].area, data.samples[2].area);
}

}  // namespace
}  // namespace rankpose
