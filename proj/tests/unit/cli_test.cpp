#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "rankpose/error.hpp"
#include "rankpose_cli/commands.hpp"
#include "rankpose_cli/dataset_store.hpp"
#include "rankpose_cli/run_config.hpp"

namespace rankpose::cli {
namespace {

using nlohmann::json;

std::string config_error(const json& doc) {
  try {
    parse_run_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rankpose_cli_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(RunConfig, UnknownKeysNameTheirPath) {
  EXPECT_NE(config_error(json{{"bogus", 1}}).find("unknown key 'bogus'"), std::string::npos);
  EXPECT_NE(config_error(json{{"train", {{"lrr", 0.1}}}}).find("train.lrr"), std::string::npos);
  EXPECT_NE(config_error(json{{"synth", {{"grid", {{"hieght", 4}}}}}}).find("synth.grid.hieght"),
            std::string::npos);
}

TEST(RunConfig, TypeAndRangeErrors) {
  EXPECT_NE(config_error(json{{"train", {{"lr", "fast"}}}}).find("train.lr"), std::string::npos);
  EXPECT_NE(config_error(json{{"train", {{"loss", "hinge"}}}}).find("train.loss"), std::string::npos);
  EXPECT_FALSE(config_error(json{{"train", {{"epochs", 0}}}}).empty());
  EXPECT_FALSE(config_error(json{{"workers", 0}}).empty());
  EXPECT_TRUE(config_error(json::object()).empty());
}

TEST(RunConfig, SeedAndWorkersPropagate) {
  const RunConfig cfg = parse_run_config(json{{"seed", 99}, {"workers", 3}});
  EXPECT_EQ(cfg.synth.seed, 99u);
  EXPECT_EQ(cfg.train.seed, 99u);
  EXPECT_EQ(cfg.train.workers, 3u);
}

TEST(RunConfig, JsonRoundTrip) {
  const RunConfig cfg = parse_run_config(json{
      {"seed", 5},
      {"synth", {{"num_instances", 30}, {"grid", {{"height", 10}, {"width", 8}}}, {"area_range", {5.0, 9.0}}}},
      {"loss", {{"preset", "vitpose_h"}, {"isort_delta", 1.25}}},
      {"train", {{"loss", "spatial_rs_isort"}, {"optimizer", "adam"}, {"lr_decay_epochs", {3, 6}}}}});
  EXPECT_EQ(cfg.train.loss_cfg.isort_coeff, LossConfig::vitpose_h().isort_coeff);
  EXPECT_EQ(cfg.train.loss_cfg.isort_delta, 1.25);
  EXPECT_EQ(cfg.synth.area_range.second, 9.0);
  const json once = to_json(cfg);
  EXPECT_EQ(to_json(parse_run_config(once)), once);
}

TEST(RunConfig, ShippedConfigsParse) {
  for (const char* name : {"quickstart.json", "benchmark.json"}) {
    const auto path = std::filesystem::path(RANKPOSE_CONFIG_DIR) / name;
    EXPECT_NO_THROW(load_run_config(path)) << name;
  }
  const RunConfig bench = load_run_config(std::filesystem::path(RANKPOSE_CONFIG_DIR) / "benchmark.json");
  EXPECT_EQ(bench.synth.num_instances, 500u);
  EXPECT_EQ(bench.synth.num_keypoints, 5u);
  EXPECT_EQ(bench.synth.grid, GridShape::two_d(32, 24));
  EXPECT_EQ(bench.benchmark.seeds.size(), 5u);
}

TEST(Imbalance, TableRows) {
  const auto rows = analyze_imbalance(standard_imbalance_cases());
  ASSERT_GE(rows.size(), 4u);
  EXPECT_EQ(rows[0].ratio, 3071.0);
  const std::string csv = imbalance_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("ratio") != std::string::npos, true);
}

TEST(Verify, SmallSweepPasses) {
  VerifyConfig v;
  v.cases = 30;
  v.finite_diff_cases = 10;
  const VerifyReport r = run_verify(v, 4);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.mse.cases, 10u);
  EXPECT_LT(r.kl.max_rel_error, 1e-5);
}

TEST(DatasetStore, RoundTrip) {
  SynthSpec spec;
  spec.seed = 1;
  spec.num_instances = 5;
  spec.grid = GridShape::two_d(6, 5);
  spec.num_keypoints = 2;
  spec.feature_dim = 8;
  spec.occlusion_prob = 0.3;
  const SynthDataset data = generate(spec);
  const auto dir = scratch_dir("store");
  save_dataset(dir, data, Annotation::gaussian(1.0));
  const SynthDataset back = load_dataset(dir);
  ASSERT_EQ(back.samples.size(), 5u);
  for (std::size_t n = 0; n < 5; ++n) {
    EXPECT_EQ(back.samples[n].gt_cells, data.samples[n].gt_cells);
    EXPECT_EQ(back.samples[n].visibility, data.samples[n].visibility);
    EXPECT_EQ(back.samples[n].area, data.samples[n].area);
    for (std::size_t i = 0; i < data.samples[n].features.size(); ++i) {
      EXPECT_EQ(back.samples[n].features[i], static_cast<double>(static_cast<float>(data.samples[n].features[i])));
    }
  }
  const auto truths = load_truths(dir / "manifest.json");
  ASSERT_EQ(truths.size(), 5u);
  const Cell c = cell_of(spec.grid, data.samples[3].gt_cells[0]);
  EXPECT_EQ(truths[3].keypoints[0].x, c.col);
  EXPECT_EQ(truths[3].keypoints[0].y, c.row);
  std::filesystem::remove_all(dir);
}

TEST(DatasetStore, PredictionsRoundTrip) {
  std::vector<InstancePrediction> preds(2);
  preds[0].keypoints = {{1.0, 2.0, 0.1}, {3.0, 4.0, 1.0 / 3.0}};
  preds[1].keypoints = {{0.0, 0.0, -2.5}, {7.0, 1.0, 0.0}};
  const auto [back, ids] = predictions_from_json(predictions_to_json(preds, {4, 9}));
  EXPECT_EQ(ids, (std::vector<std::size_t>{4, 9}));
  EXPECT_EQ(back[0].keypoints[1].confidence, 1.0 / 3.0);
  EXPECT_EQ(back[1].keypoints[0].confidence, -2.5);
}

TEST(FormatReal, RoundTrips) {
  EXPECT_EQ(format_real(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(format_real(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(format_real(std::nan("")), "nan");
}

TEST(Commands, PipelineWritesArtifacts) {
  const auto dir = scratch_dir("pipeline");
  CommandOptions opts;
  opts.config = std::filesystem::path(RANKPOSE_CONFIG_DIR) / "quickstart.json";
  opts.out = dir / "data";
  ASSERT_EQ(cmd_gen_data(opts), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "config.resolved.json"));
  opts.out = dir / "run";
  ASSERT_EQ(cmd_train(opts, dir / "data"), 0);
  for (const char* f : {"train_log.csv", "train_log.json", "predictions.json", "eval.json", "metadata.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
  }
  opts.out = dir / "eval";
  ASSERT_EQ(cmd_eval(opts, dir / "run" / "predictions.json", dir / "data"), 0);
  const json ev = read_json(dir / "eval" / "eval.json");
  EXPECT_TRUE(ev.contains("map"));
  EXPECT_EQ(slurp(dir / "eval" / "eval.json"), slurp(dir / "run" / "eval.json"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace rankpose::cli
