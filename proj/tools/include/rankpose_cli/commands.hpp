#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rankpose/metrics.hpp"
#include "rankpose/oracle.hpp"
#include "rankpose_cli/run_config.hpp"

namespace rankpose::cli {

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

// Loads the config file (or the defaults), applies flag overrides and
// propagates seed and workers.
RunConfig resolve_config(const CommandOptions& opts);

// config.resolved.json plus metadata.json, the only file with a timestamp.
void write_run_files(const std::filesystem::path& out, const RunConfig& cfg, const std::string& command);

struct ImbalanceRow {
  std::string name;
  GridShape shape;
  Annotation annotation;
  double tau = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double ratio = 0.0;
};

std::vector<ImbalanceRow> analyze_imbalance(const std::vector<ImbalanceCase>& cases);
std::string imbalance_csv(const std::vector<ImbalanceRow>& rows);

struct FiniteDiffSummary {
  std::size_t cases = 0;
  double max_rel_error = 0.0;
};

struct VerifyReport {
  oracle::EquivalenceReport equivalence;
  FiniteDiffSummary mse;
  FiniteDiffSummary kl;
  double finite_diff_tolerance = 1e-5;
  bool passed() const;
};

VerifyReport run_verify(const VerifyConfig& cfg, std::uint64_t seed);
nlohmann::json to_json(const VerifyReport& report);

nlohmann::json to_json(const EvalResult& result);
std::string eval_csv(const EvalResult& result);

struct BenchmarkEntry {
  std::string run;
  std::uint64_t seed = 0;
  EvalResult eval;
};

struct BenchmarkSummary {
  std::string run;
  double mean_spearman = 0.0;
  double mean_error = 0.0;
  double mean_map = 0.0;
  double mean_ks = 0.0;
};

struct BenchmarkReport {
  std::vector<BenchmarkEntry> entries;
  std::vector<BenchmarkSummary> summaries;
  // Candidate minus reference, and candidate / reference error.
  double spearman_gain = 0.0;
  double error_ratio = 0.0;
  bool compared = false;
  bool passed = false;
};

BenchmarkReport run_benchmark(const RunConfig& cfg);
nlohmann::json to_json(const BenchmarkReport& report, const BenchmarkConfig& cfg);
std::string benchmark_csv(const BenchmarkReport& report);
std::string benchmark_markdown(const BenchmarkReport& report, const BenchmarkConfig& cfg);

// Subcommands. Each returns the process exit code and writes its artifacts
// under opts.out.
int cmd_gen_data(const CommandOptions& opts);
int cmd_train(const CommandOptions& opts, const std::filesystem::path& dataset);
int cmd_eval(const CommandOptions& opts, const std::filesystem::path& predictions,
             const std::filesystem::path& truth);
int cmd_verify(const CommandOptions& opts, std::optional<std::size_t> cases);
int cmd_analyze_imbalance(const CommandOptions& opts, const std::vector<ImbalanceCase>& override_cases);
int cmd_report(const CommandOptions& opts);

}  // namespace rankpose::cli
