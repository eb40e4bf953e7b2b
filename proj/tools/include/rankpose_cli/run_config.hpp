#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rankpose/heatmap.hpp"
#include "rankpose/metrics.hpp"
#include "rankpose/synth.hpp"
#include "rankpose/trainer.hpp"

namespace rankpose::cli {

struct ImbalanceCase {
  std::string name;
  GridShape shape;
  Annotation annotation;
  // When set, the Gaussian sigma is searched so the ratio lands near this
  // value instead of being read from `annotation`.
  std::optional<double> target_ratio;
  double tau = 0.0;
};

struct VerifyConfig {
  std::size_t cases = 1000;
  double tolerance = 1e-9;
  std::size_t finite_diff_cases = 100;
  double finite_diff_epsilon = 1e-5;
  double finite_diff_tolerance = 1e-5;
};

struct BenchmarkRun {
  std::string name;
  TrainConfig train;
};

struct BenchmarkConfig {
  std::vector<std::uint64_t> seeds;
  std::vector<BenchmarkRun> runs;
  // Run names compared in the summary.
  std::string reference;
  std::string candidate;
  double min_spearman_gain = 0.05;
  double max_error_ratio = 1.05;
};

struct EvalConfig {
  EvalOptions options;
  // Overrides the cycled COCO falloffs when non-empty.
  std::vector<double> falloffs;
};

// One JSON document drives every subcommand. The top-level seed feeds both
// the data generator and the trainer.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  SynthSpec synth;
  TrainConfig train;
  EvalConfig eval;
  std::vector<ImbalanceCase> imbalance;
  VerifyConfig verify;
  BenchmarkConfig benchmark;

  // Pushes seed and workers down into synth/train.
  void propagate();
};

RunConfig default_run_config();
std::vector<ImbalanceCase> standard_imbalance_cases();

// Throws ConfigError naming the offending field path on unknown keys, wrong
// types, or values that fail validation.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const SynthSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const LossConfig& cfg);
nlohmann::json to_json(const Annotation& annotation);
nlohmann::json to_json(const GridShape& shape);

SynthSpec synth_from_json(const nlohmann::json& doc, const std::string& path = "synth");
Annotation annotation_from_json(const nlohmann::json& doc, const std::string& path);
GridShape grid_from_json(const nlohmann::json& doc, const std::string& path);

const char* to_string(TrainLoss loss);
const char* to_string(ModelKind model);
const char* to_string(OutputLayout layout);
const char* to_string(OptimizerKind optimizer);
const char* to_string(GridMode mode);

}  // namespace rankpose::cli
