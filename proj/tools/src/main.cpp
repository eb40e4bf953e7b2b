#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "rankpose/error.hpp"
#include "rankpose_cli/commands.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("rankpose");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("RANKPOSE_LOG");
  spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rankpose;
  setup_logging();

  CLI::App app{"rankpose: ranking losses for keypoint heatmaps on a synthetic pose task"};
  app.require_subcommand(1);
  app.fallthrough();

  cli::CommandOptions opts;
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  auto* config_opt = app.add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
  app.add_option("--out", out, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for data generation and training");
  auto* workers_opt = app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");

  auto* train = app.add_subcommand("train", "Train on a generated dataset");
  std::string dataset;
  train->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* eval = app.add_subcommand("eval", "Evaluate predictions against a dataset manifest");
  std::string pred;
  std::string gt;
  eval->add_option("--pred", pred, "Prediction JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt, "Dataset directory or manifest.json")->required()->check(CLI::ExistingPath);

  auto* verify = app.add_subcommand("verify", "Compare loss kernels against the brute-force oracle");
  std::size_t cases = 0;
  auto* cases_opt = verify->add_option("--cases", cases, "Random cases per loss");

  auto* imbalance = app.add_subcommand("analyze-imbalance", "Positive/negative imbalance ratios");
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t split = 1;
  std::string mode = "2d";
  std::string annotation = "dot";
  double sigma = 2.0;
  double tau = 0.0;
  auto* height_opt = imbalance->add_option("--height", height, "Grid height");
  auto* width_opt = imbalance->add_option("--width", width, "Grid width");
  imbalance->add_option("--mode", mode, "2d, 1d_x or 1d_y")->check(CLI::IsMember({"2d", "1d_x", "1d_y"}));
  imbalance->add_option("--split-factor", split, "Bins per pixel in 1D modes");
  imbalance->add_option("--annotation", annotation, "dot or gaussian")->check(CLI::IsMember({"dot", "gaussian"}));
  imbalance->add_option("--sigma", sigma, "Gaussian sigma");
  imbalance->add_option("--tau", tau, "Positivity threshold");

  auto* report = app.add_subcommand("report", "Run the configured benchmark and emit a comparison report");

  CLI11_PARSE(app, argc, argv);

  if (*config_opt) opts.config = config;
  opts.out = out;
  if (*seed_opt) opts.seed = seed;
  if (*workers_opt) opts.workers = workers;

  try {
    if (gen->parsed()) return cli::cmd_gen_data(opts);
    if (train->parsed()) return cli::cmd_train(opts, dataset);
    if (eval->parsed()) return cli::cmd_eval(opts, pred, gt);
    if (verify->parsed()) {
      return cli::cmd_verify(opts, *cases_opt ? std::optional<std::size_t>(cases) : std::nullopt);
    }
    if (imbalance->parsed()) {
      std::vector<cli::ImbalanceCase> single;
      if (*height_opt || *width_opt) {
        GridShape shape;
        if (mode == "2d") {
          shape = GridShape::two_d(height, width);
        } else if (mode == "1d_x") {
          shape = GridShape::one_d_x(width, split);
        } else {
          shape = GridShape::one_d_y(height, split);
        }
        const Annotation ann = annotation == "dot" ? Annotation::dot() : Annotation::gaussian(sigma);
        single.push_back({"cli", shape, ann, std::nullopt, tau});
      }
      return cli::cmd_analyze_imbalance(opts, single);
    }
    if (report->parsed()) return cli::cmd_report(opts);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
