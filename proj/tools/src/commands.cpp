#include "rankpose_cli/commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "rankpose/error.hpp"
#include "rankpose/field_io.hpp"
#include "rankpose/losses.hpp"
#include "rankpose/synth.hpp"
#include "rankpose/trainer.hpp"
#include "rankpose_cli/dataset_store.hpp"

namespace rankpose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

KeypointCatalog catalog_from(const EvalConfig& cfg, std::size_t num_keypoints) {
  if (cfg.falloffs.empty()) return catalog_for(num_keypoints);
  if (cfg.falloffs.size() != num_keypoints) {
    throw ConfigError("eval.falloffs: expected " + std::to_string(num_keypoints) + " entries");
  }
  KeypointCatalog cat;
  for (std::size_t k = 0; k < num_keypoints; ++k) {
    cat.names.push_back("kp" + std::to_string(k));
    cat.falloffs.push_back(cfg.falloffs[k]);
  }
  return cat;
}

json train_log_json(const TrainLog& log) {
  json rows = json::array();
  for (const auto& e : log.epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"lr", e.lr},
                    {"loss", e.loss},
                    {"positive_mass", e.positive_mass},
                    {"negative_mass", e.negative_mass},
                    {"mean_ks", e.mean_ks},
                    {"spearman", real_or_null(e.spearman)},
                    {"map", e.map},
                    {"mean_error", e.mean_error}});
  }
  return {{"epochs", rows}};
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream out;
  out << "epoch,lr,loss,positive_mass,negative_mass,mean_ks,spearman,map,mean_error\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << format_real(e.lr) << ',' << format_real(e.loss) << ','
        << format_real(e.positive_mass) << ',' << format_real(e.negative_mass) << ',' << format_real(e.mean_ks)
        << ',' << format_real(e.spearman) << ',' << format_real(e.map) << ',' << format_real(e.mean_error)
        << '\n';
  }
  return out.str();
}

double mean_finite(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  }
  return n == 0 ? std::nan("") : sum / static_cast<double>(n);
}

}  // namespace

RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig cfg = opts.config ? load_run_config(*opts.config) : default_run_config();
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers) {
    if (*opts.workers < 1) throw ConfigError("--workers: must be >= 1");
    cfg.workers = *opts.workers;
  }
  cfg.propagate();
  return cfg;
}

void write_run_files(const fs::path& out, const RunConfig& cfg, const std::string& command) {
  fs::create_directories(out);
  write_json(out / "config.resolved.json", to_json(cfg));
  write_json(out / "metadata.json", {{"command", command}, {"timestamp", utc_timestamp()}, {"version", "0.1.0"}});
}

std::vector<ImbalanceRow> analyze_imbalance(const std::vector<ImbalanceCase>& cases) {
  std::vector<ImbalanceRow> rows;
  for (const auto& c : cases) {
    ImbalanceRow row{c.name, c.shape, c.annotation, c.tau};
    if (c.target_ratio) row.annotation = Annotation::gaussian(sigma_for_ratio(c.shape, *c.target_ratio));
    const std::size_t cells = c.shape.cell_count();
    std::size_t joint = 0;
    if (c.shape.mode == GridMode::kTwoD) {
      joint = cell_index(c.shape, {c.shape.height / 2, c.shape.width / 2});
    } else {
      joint = cells / 2;
    }
    const PixelPartition part = partition(make_label(c.shape, joint, row.annotation), c.tau);
    row.positives = part.positives.size();
    row.negatives = part.negatives.size();
    row.ratio = imbalance_ratio(part);
    rows.push_back(row);
  }
  return rows;
}

std::string imbalance_csv(const std::vector<ImbalanceRow>& rows) {
  std::ostringstream out;
  out << "name,mode,height,width,split_factor,annotation,sigma,truncation_radius,tau,positives,negatives,ratio,"
         "ratio_floor\n";
  for (const auto& r : rows) {
    const bool gauss = r.annotation.kind == AnnotationKind::kGaussian;
    out << r.name << ',' << to_string(r.shape.mode) << ',' << r.shape.height << ',' << r.shape.width << ','
        << r.shape.split_factor << ',' << (gauss ? "gaussian" : "dot") << ','
        << (gauss ? format_real(r.annotation.sigma) : "") << ',' << (gauss ? std::to_string(r.annotation.truncation_radius) : "")
        << ',' << format_real(r.tau) << ',' << r.positives << ',' << r.negatives << ',' << format_real(r.ratio)
        << ',' << static_cast<long long>(std::floor(r.ratio)) << '\n';
  }
  return out.str();
}

bool VerifyReport::passed() const {
  return equivalence.passed() && mse.max_rel_error < finite_diff_tolerance &&
         kl.max_rel_error < finite_diff_tolerance;
}

VerifyReport run_verify(const VerifyConfig& cfg, std::uint64_t seed) {
  VerifyReport report;
  report.equivalence = oracle::run_equivalence(cfg.cases, seed, cfg.tolerance);
  report.finite_diff_tolerance = cfg.finite_diff_tolerance;

  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::uniform_real_distribution<double> logit(-2.0, 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 0; c < cfg.finite_diff_cases; ++c) {
    std::vector<double> pred(16);
    std::vector<double> label(16);
    for (double& v : pred) v = logit(rng);
    for (double& v : label) v = unit(rng);
    const auto mse = oracle::finite_diff_check(
        oracle::LossKind::kMse, [&](std::span<const double> x) { return mse_loss(x, label); }, pred,
        cfg.finite_diff_epsilon);
    report.mse.max_rel_error = std::max(report.mse.max_rel_error, mse.max_rel_error);
    ++report.mse.cases;

    std::vector<double> logits(16);
    std::vector<double> tx(8);
    std::vector<double> ty(8);
    for (double& v : logits) v = logit(rng);
    double sx = 0.0, sy = 0.0;
    for (double& v : tx) sx += (v = unit(rng) + 1e-3);
    for (double& v : ty) sy += (v = unit(rng) + 1e-3);
    for (double& v : tx) v /= sx;
    for (double& v : ty) v /= sy;
    const double beta = 0.5 + 1.5 * unit(rng);
    const auto kl = oracle::finite_diff_check(
        oracle::LossKind::kKl,
        [&](std::span<const double> x) { return kl_loss(x.subspan(0, 8), x.subspan(8, 8), tx, ty, beta); },
        logits, cfg.finite_diff_epsilon);
    report.kl.max_rel_error = std::max(report.kl.max_rel_error, kl.max_rel_error);
    ++report.kl.cases;
  }
  return report;
}

json to_json(const VerifyReport& report) {
  const auto disc = [](const oracle::Discrepancy& d) {
    return json{{"cases", d.cases},
                {"failures", d.failures},
                {"max_value_error", d.max_value_error},
                {"max_grad_error", d.max_grad_error}};
  };
  return {{"equivalence",
           {{"tolerance", report.equivalence.tolerance},
            {"spatial_rank", disc(report.equivalence.rank)},
            {"spatial_sort", disc(report.equivalence.sort)},
            {"instance_sort", disc(report.equivalence.isort)}}},
          {"finite_diff",
           {{"tolerance", report.finite_diff_tolerance},
            {"mse", {{"cases", report.mse.cases}, {"max_rel_error", report.mse.max_rel_error}}},
            {"kl", {{"cases", report.kl.cases}, {"max_rel_error", report.kl.max_rel_error}}}}},
          {"passed", report.passed()}};
}

json to_json(const EvalResult& r) {
  return {{"thresholds", r.thresholds},
          {"ap_per_threshold", r.ap_per_threshold},
          {"ar_per_threshold", r.ar_per_threshold},
          {"map", r.map},
          {"ar", r.ar},
          {"pck", r.pck},
          {"spearman", real_or_null(r.spearman)},
          {"mean_ks", r.mean_ks},
          {"mean_error", r.mean_error}};
}

std::string eval_csv(const EvalResult& r) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "map," << format_real(r.map) << '\n';
  out << "ar," << format_real(r.ar) << '\n';
  out << "pck," << format_real(r.pck) << '\n';
  out << "spearman," << format_real(r.spearman) << '\n';
  out << "mean_ks," << format_real(r.mean_ks) << '\n';
  out << "mean_error," << format_real(r.mean_error) << '\n';
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "ap@%.2f", r.thresholds[i]);
    out << name << ',' << format_real(r.ap_per_threshold[i]) << '\n';
  }
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "ar@%.2f", r.thresholds[i]);
    out << name << ',' << format_real(r.ar_per_threshold[i]) << '\n';
  }
  return out.str();
}

BenchmarkReport run_benchmark(const RunConfig& cfg) {
  const BenchmarkConfig& bench = cfg.benchmark;
  if (bench.runs.empty()) throw ConfigError("benchmark.runs: no runs configured");
  if (bench.seeds.empty()) throw ConfigError("benchmark.seeds: no seeds configured");
  BenchmarkReport report;
  for (std::uint64_t seed : bench.seeds) {
    SynthSpec spec = cfg.synth;
    spec.seed = seed;
    const SynthDataset data = generate(spec);
    for (const auto& run : bench.runs) {
      TrainConfig tc = run.train;
      tc.seed = seed;
      tc.workers = cfg.workers;
      spdlog::info("benchmark: run {} seed {}", run.name, seed);
      const TrainResult result = train(data, tc);
      report.entries.push_back({run.name, seed, result.final_eval});
    }
  }
  for (const auto& run : bench.runs) {
    std::vector<double> sp, err, map, ks;
    for (const auto& e : report.entries) {
      if (e.run != run.name) continue;
      sp.push_back(e.eval.spearman);
      err.push_back(e.eval.mean_error);
      map.push_back(e.eval.map);
      ks.push_back(e.eval.mean_ks);
    }
    report.summaries.push_back({run.name, mean_finite(sp), mean_finite(err), mean_finite(map), mean_finite(ks)});
  }
  const BenchmarkSummary* ref = nullptr;
  const BenchmarkSummary* cand = nullptr;
  for (const auto& s : report.summaries) {
    if (s.run == bench.reference) ref = &s;
    if (s.run == bench.candidate) cand = &s;
  }
  if (ref != nullptr && cand != nullptr) {
    report.compared = true;
    report.spearman_gain = cand->mean_spearman - ref->mean_spearman;
    report.error_ratio = ref->mean_error > 0.0 ? cand->mean_error / ref->mean_error
                                               : (cand->mean_error > 0.0 ? INFINITY : 1.0);
    report.passed = report.spearman_gain >= bench.min_spearman_gain && report.error_ratio <= bench.max_error_ratio;
  }
  return report;
}

json to_json(const BenchmarkReport& report, const BenchmarkConfig& cfg) {
  json entries = json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"run", e.run}, {"seed", e.seed}, {"eval", to_json(e.eval)}});
  }
  json summaries = json::array();
  for (const auto& s : report.summaries) {
    summaries.push_back({{"run", s.run},
                         {"mean_spearman", real_or_null(s.mean_spearman)},
                         {"mean_error", real_or_null(s.mean_error)},
                         {"mean_map", real_or_null(s.mean_map)},
                         {"mean_ks", real_or_null(s.mean_ks)}});
  }
  json doc = {{"entries", entries}, {"summaries", summaries}};
  if (report.compared) {
    doc["comparison"] = {{"reference", cfg.reference},
                         {"candidate", cfg.candidate},
                         {"spearman_gain", real_or_null(report.spearman_gain)},
                         {"error_ratio", real_or_null(report.error_ratio)},
                         {"min_spearman_gain", cfg.min_spearman_gain},
                         {"max_error_ratio", cfg.max_error_ratio},
                         {"passed", report.passed}};
  }
  return doc;
}

std::string benchmark_csv(const BenchmarkReport& report) {
  std::ostringstream out;
  out << "run,seed,spearman,mean_error,map,ar,pck,mean_ks\n";
  for (const auto& e : report.entries) {
    out << e.run << ',' << e.seed << ',' << format_real(e.eval.spearman) << ',' << format_real(e.eval.mean_error)
        << ',' << format_real(e.eval.map) << ',' << format_real(e.eval.ar) << ',' << format_real(e.eval.pck) << ','
        << format_real(e.eval.mean_ks) << '\n';
  }
  return out.str();
}

std::string benchmark_markdown(const BenchmarkReport& report, const BenchmarkConfig& cfg) {
  std::ostringstream out;
  char line[256];
  out << "| run | Spearman (%) | mean error (cells) | mAP | mean KS |\n";
  out << "|---|---:|---:|---:|---:|\n";
  for (const auto& s : report.summaries) {
    std::snprintf(line, sizeof line, "| %s | %.1f | %.3f | %.3f | %.3f |\n", s.run.c_str(), 100.0 * s.mean_spearman,
                  s.mean_error, s.mean_map, s.mean_ks);
    out << line;
  }
  if (report.compared) {
    std::snprintf(line, sizeof line,
                  "\n%s vs %s: Spearman gain %+.1f points (need >= %.1f), error ratio %.3f (need <= %.3f): %s\n",
                  cfg.candidate.c_str(), cfg.reference.c_str(), 100.0 * report.spearman_gain,
                  100.0 * cfg.min_spearman_gain, report.error_ratio, cfg.max_error_ratio,
                  report.passed ? "PASS" : "FAIL");
    out << line;
  }
  return out.str();
}

int cmd_gen_data(const CommandOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  write_run_files(opts.out, cfg, "gen-data");
  const SynthDataset data = generate(cfg.synth);
  save_dataset(opts.out, data, cfg.train.annotation);
  spdlog::info("gen-data: wrote {} samples to {}", data.samples.size(), opts.out.string());
  return 0;
}

int cmd_train(const CommandOptions& opts, const fs::path& dataset) {
  const RunConfig cfg = resolve_config(opts);
  const SynthDataset data = load_dataset(dataset);
  write_run_files(opts.out, cfg, "train");
  spdlog::info("train: {} samples, loss {}, {} epochs", data.samples.size(), to_string(cfg.train.loss),
               cfg.train.epochs);
  const TrainResult result = train(data, cfg.train);

  write_text(opts.out / "train_log.csv", train_log_csv(result.log));
  write_json(opts.out / "train_log.json", train_log_json(result.log));
  fs::create_directories(opts.out / "params");
  const auto blocks = result.model.to_param_blocks();
  for (std::size_t h = 0; h < blocks.size(); ++h) {
    char name[32];
    std::snprintf(name, sizeof name, "head_%02zu.rppm", h);
    io::save_params(opts.out / "params" / name, blocks[h]);
  }
  write_json(opts.out / "predictions.json", predictions_to_json(result.eval_predictions, result.eval_indices));
  write_json(opts.out / "eval.json", to_json(result.final_eval));
  const auto& last = result.log.epochs.back();
  spdlog::info("train: final loss {:.6g}, mAP {:.4f}, Spearman {:.4f}, mean error {:.4f}", last.loss, last.map,
               last.spearman, last.mean_error);
  return 0;
}

int cmd_eval(const CommandOptions& opts, const fs::path& predictions, const fs::path& truth) {
  const RunConfig cfg = resolve_config(opts);
  const auto [preds, ids] = predictions_from_json(read_json(predictions));
  const std::vector<InstanceTruth> all = load_truths(truth);
  std::vector<InstanceTruth> truths;
  for (std::size_t id : ids) {
    if (id >= all.size()) throw FormatError("prediction instance_id " + std::to_string(id) + " not in ground truth");
    truths.push_back(all[id]);
  }
  const std::size_t num_kp = all.empty() ? 0 : all.front().keypoints.size();
  const EvalResult result = evaluate(preds, truths, catalog_from(cfg.eval, num_kp), cfg.eval.options);
  write_run_files(opts.out, cfg, "eval");
  write_json(opts.out / "eval.json", to_json(result));
  write_text(opts.out / "eval.csv", eval_csv(result));
  spdlog::info("eval: mAP {:.4f}, AR {:.4f}, PCK {:.4f}, Spearman {:.4f}", result.map, result.ar, result.pck,
               result.spearman);
  return 0;
}

int cmd_verify(const CommandOptions& opts, std::optional<std::size_t> cases) {
  RunConfig cfg = resolve_config(opts);
  if (cases) cfg.verify.cases = *cases;
  write_run_files(opts.out, cfg, "verify");
  const VerifyReport report = run_verify(cfg.verify, cfg.seed);
  write_json(opts.out / "verify.json", to_json(report));
  spdlog::info("verify: {} cases per loss, failures rank/sort/isort = {}/{}/{}, finite-diff mse {:.3g} kl {:.3g}",
               cfg.verify.cases, report.equivalence.rank.failures, report.equivalence.sort.failures,
               report.equivalence.isort.failures, report.mse.max_rel_error, report.kl.max_rel_error);
  return report.passed() ? 0 : 1;
}

int cmd_analyze_imbalance(const CommandOptions& opts, const std::vector<ImbalanceCase>& override_cases) {
  RunConfig cfg = resolve_config(opts);
  if (!override_cases.empty()) cfg.imbalance = override_cases;
  write_run_files(opts.out, cfg, "analyze-imbalance");
  const auto rows = analyze_imbalance(cfg.imbalance);
  const std::string csv = imbalance_csv(rows);
  write_text(opts.out / "imbalance.csv", csv);
  json doc = json::array();
  for (const auto& r : rows) {
    doc.push_back({{"name", r.name},
                   {"grid", to_json(r.shape)},
                   {"annotation", to_json(r.annotation)},
                   {"tau", r.tau},
                   {"positives", r.positives},
                   {"negatives", r.negatives},
                   {"ratio", r.ratio},
                   {"ratio_floor", static_cast<long long>(std::floor(r.ratio))}});
  }
  write_json(opts.out / "imbalance.json", doc);
  for (const auto& r : rows) {
    std::printf("%-20s %-5s |P|=%-6zu |N|=%-6zu ratio=%.4f floor=%lld\n", r.name.c_str(), to_string(r.shape.mode),
                r.positives, r.negatives, r.ratio, static_cast<long long>(std::floor(r.ratio)));
  }
  return 0;
}

int cmd_report(const CommandOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  write_run_files(opts.out, cfg, "report");
  const BenchmarkReport report = run_benchmark(cfg);
  write_json(opts.out / "report.json", to_json(report, cfg.benchmark));
  write_text(opts.out / "report.csv", benchmark_csv(report));
  const std::string md = benchmark_markdown(report, cfg.benchmark);
  write_text(opts.out / "report.md", md);
  std::fputs(md.c_str(), stdout);
  return report.compared && !report.passed ? 1 : 0;
}

}  // namespace rankpose::cli
