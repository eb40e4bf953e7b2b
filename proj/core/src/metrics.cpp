#include "rankpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "rankpose/error.hpp"

namespace rankpose {

KeypointCatalog KeypointCatalog::coco() {
  static const char* const kNames[] = {
      "nose",       "left_eye",    "right_eye",  "left_ear",    "right_ear",  "left_shoulder",
      "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip",
      "right_hip",  "left_knee",   "right_knee", "left_ankle",  "right_ankle"};
  static const double kSigmas[] = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
                                    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};
  KeypointCatalog catalog;
  for (std::size_t i = 0; i < 17; ++i) {
    catalog.names.emplace_back(kNames[i]);
    catalog.falloffs.push_back(2.0 * kSigmas[i]);
  }
  return catalog;
}

void KeypointCatalog::validate() const {
  if (!names.empty() && names.size() != falloffs.size()) {
    throw ParameterError("catalog names and falloffs differ in length");
  }
  for (double k : falloffs) {
    if (!(k > 0.0)) throw ParameterError("keypoint falloff must be positive");
  }
}

double keypoint_similarity(double distance, double area, double falloff) {
  if (!(area > 0.0)) throw ParameterError("instance area must be positive");
  if (!(falloff > 0.0)) throw ParameterError("keypoint falloff must be positive");
  const double sk = area * falloff;
  return std::exp(-(distance * distance) / (2.0 * sk * sk));
}

double keypoint_similarity(const InstanceRecord& rec) {
  const double d = std::hypot(rec.pred_coord.x - rec.gt_coord.x, rec.pred_coord.y - rec.gt_coord.y);
  return keypoint_similarity(d, rec.area, rec.falloff);
}

double oks(std::span<const InstanceRecord> keypoints) {
  double total = 0.0;
  std::size_t visible = 0;
  for (const auto& rec : keypoints) {
    if (!rec.visible) continue;
    total += keypoint_similarity(rec);
    ++visible;
  }
  if (visible == 0) throw UndefinedError("OKS undefined: no visible keypoints");
  return total / static_cast<double>(visible);
}

std::vector<double> coco_oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
  return t;
}

EvalResult mean_ap(std::span<const ScoredInstance> instances, std::span<const double> thresholds) {
  if (instances.empty()) throw PreconditionError("mean_ap: empty instance list");
  if (thresholds.empty()) throw ParameterError("mean_ap: no OKS thresholds");
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ParameterError("OKS thresholds must lie in (0, 1)");
  }

  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return instances[a].confidence > instances[b].confidence;
  });

  const auto n = static_cast<double>(instances.size());
  EvalResult result;
  result.thresholds.assign(thresholds.begin(), thresholds.end());
  std::vector<double> precision(order.size());
  std::vector<double> recall(order.size());
  for (double t : thresholds) {
    std::size_t tp = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (instances[order[r]].oks >= t) ++tp;
      precision[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
      recall[r] = static_cast<double>(tp) / n;
    }
    // Precision envelope, then sum over recall increments.
    for (std::size_t r = order.size() - 1; r > 0; --r) {
      precision[r - 1] = std::max(precision[r - 1], precision[r]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      ap += (recall[r] - prev_recall) * precision[r];
      prev_recall = recall[r];
    }
    result.ap_per_threshold.push_back(ap);
    result.ar_per_threshold.push_back(static_cast<double>(tp) / n);
  }
  const auto k = static_cast<double>(thresholds.size());
  result.map = std::accumulate(result.ap_per_threshold.begin(), result.ap_per_threshold.end(), 0.0) / k;
  result.ar = std::accumulate(result.ar_per_threshold.begin(), result.ar_per_threshold.end(), 0.0) / k;
  return result;
}

EvalResult mean_ap(std::span<const ScoredInstance> instances) {
  const auto thresholds = coco_oks_thresholds();
  return mean_ap(instances, thresholds);
}

double pck(std::span<const PckInstance> instances, double alpha, PckReference reference) {
  if (!(alpha > 0.0)) throw ParameterError("PCK alpha must be positive");
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& inst : instances) {
    const auto& ref = reference == PckReference::kBBoxDiag ? inst.bbox_diag : inst.head_size;
    if (!ref || !(*ref > 0.0)) {
      throw ParameterError(reference == PckReference::kBBoxDiag
                               ? "PCK: instance lacks a bounding-box diagonal"
                               : "PCK: instance lacks a head size");
    }
    const double limit = alpha * *ref;
    for (double d : inst.distances) {
      ++total;
      if (d <= limit) ++correct;
    }
  }
  if (total == 0) throw UndefinedError("PCK undefined: no keypoints");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share rank mean(i+1..j+1)
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: inputs differ in length");
  if (x.size() < 2) throw UndefinedError("spearman: need at least two observations");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double mean = 0.5 * static_cast<double>(x.size() + 1);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedError("spearman: zero rank variance");
  return sxy / std::sqrt(sxx * syy);
}

MinMaxCalibration calibrate_minmax(std::span<const double> observed) {
  if (observed.empty()) throw ParameterError("cannot calibrate from an empty sample");
  const auto [lo, hi] = std::minmax_element(observed.begin(), observed.end());
  return {*lo, *hi};
}

std::vector<double> minmax_scale(std::span<const double> confidences, const MinMaxCalibration& cal) {
  if (!(cal.max > cal.min)) throw ParameterError("degenerate min-max calibration (max <= min)");
  const double range = cal.max - cal.min;
  std::vector<double> out;
  out.reserve(confidences.size());
  for (double c : confidences) out.push_back(std::clamp((c - cal.min) / range, 0.0, 1.0));
  return out;
}

std::vector<double> minmax_scale(std::span<const InstanceRecord> records,
                                 std::span<const MinMaxCalibration> per_type) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    if (rec.keypoint_id >= per_type.size()) {
      throw ParameterError("no calibration for keypoint type " + std::to_string(rec.keypoint_id));
    }
    const auto& cal = per_type[rec.keypoint_id];
    if (!(cal.max > cal.min)) throw ParameterError("degenerate min-max calibration (max <= min)");
    out.push_back(std::clamp((rec.confidence - cal.min) / (cal.max - cal.min), 0.0, 1.0));
  }
  return out;
}

double covariance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("covariance: inputs differ in length");
  if (a.size() < 2) throw UndefinedError("covariance needs at least two samples");
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / n;
}

CovarianceReport covariance_identity_check(const KeypointMatrix& quality,
                                           const KeypointMatrix& confidence) {
  if (quality.keypoints != confidence.keypoints || quality.instances != confidence.instances) {
    throw ShapeError("quality and confidence matrices differ in shape");
  }
  const std::size_t k = quality.keypoints;
  const std::size_t n = quality.instances;
  if (k < 1) throw ParameterError("need at least one keypoint");
  if (n < 2) throw UndefinedError("covariance needs at least two instances");

  std::vector<double> oks_col(n, 0.0);
  std::vector<double> conf_col(n, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      oks_col[i] += quality.at(j, i);
      conf_col[i] += confidence.at(j, i);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    oks_col[i] /= static_cast<double>(k);
    conf_col[i] /= static_cast<double>(k);
  }

  CovarianceReport report;
  report.cov_oks_conf = covariance(oks_col, conf_col);
  const double k2 = static_cast<double>(k * k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t m = 0; m < k; ++m) {
      const double c = covariance(quality.row(j), confidence.row(m));
      report.double_sum += c;
      if (j == m) {
        report.diagonal_sum += c;
      } else {
        report.max_abs_cross = std::max(report.max_abs_cross, std::abs(c));
      }
    }
  }
  report.double_sum /= k2;
  report.diagonal_sum /= k2;
  report.discrepancy = std::abs(report.cov_oks_conf - report.double_sum);
  return report;
}

namespace {

// Orthonormal vectors orthogonal to the all-ones vector (zero sample mean),
// by modified Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> centred_orthonormal(std::size_t count, std::size_t n,
                                                     std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  basis.emplace_back(n, 1.0 / std::sqrt(static_cast<double>(n)));
  while (basis.size() < count + 1) {
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += v[i] * b[i];
        for (std::size_t i = 0; i < n; ++i) v[i] -= dot * b[i];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  basis.erase(basis.begin());
  return basis;
}

}  // namespace

ZeroCrossPair make_zero_cross_pair(std::span<const double> diagonal, std::size_t instances,
                                   std::uint64_t seed) {
  const std::size_t k = diagonal.size();
  if (k < 1) throw ParameterError("need at least one keypoint");
  if (instances < 3 * k + 1) {
    throw ParameterError("zero-cross construction needs at least 3K + 1 instances");
  }
  std::mt19937_64 rng(seed);
  const auto basis = centred_orthonormal(3 * k, instances, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double n = static_cast<double>(instances);
  const double root_n = std::sqrt(n);

  ZeroCrossPair out{KeypointMatrix(k, instances), KeypointMatrix(k, instances)};
  for (std::size_t j = 0; j < k; ++j) {
    const auto& shared = basis[3 * j];
    const auto& quality_only = basis[3 * j + 1];
    const auto& confidence_only = basis[3 * j + 2];
    const double conf_scale = root_n * (0.1 + 0.2 * unit(rng));
    const double quality_noise = root_n * 0.1 * unit(rng);
    const double conf_noise = root_n * 0.1 * unit(rng);
    const double quality_offset = 0.5 + 0.2 * unit(rng);
    const double conf_offset = 0.5 + 0.2 * unit(rng);
    // Cov(L_j, C_j) = quality_scale * conf_scale / n
    const double quality_scale = diagonal[j] * n / conf_scale;
    for (std::size_t i = 0; i < instances; ++i) {
      out.quality.at(j, i) =
          quality_offset + quality_scale * shared[i] + quality_noise * quality_only[i];
      out.confidence.at(j, i) =
          conf_offset + conf_scale * shared[i] + conf_noise * confidence_only[i];
    }
  }
  return out;
}

MonotonicityReport check_diagonal_monotonicity(std::span<const double> diagonal,
                                               std::size_t instances, std::size_t which,
                                               double increment, std::uint64_t seed) {
  if (which >= diagonal.size()) throw BoundsError("keypoint index out of range");
  if (!(increment > 0.0)) throw ParameterError("increment must be positive");
  const auto base = make_zero_cross_pair(diagonal, instances, seed);
  std::vector<double> raised(diagonal.begin(), diagonal.end());
  raised[which] += increment;
  const auto bumped = make_zero_cross_pair(raised, instances, seed);

  MonotonicityReport report;
  report.before = covariance_identity_check(base.quality, base.confidence);
  report.after = covariance_identity_check(bumped.quality, bumped.confidence);
  report.increased = report.after.cov_oks_conf > report.before.cov_oks_conf;
  return report;
}

EvalResult evaluate(std::span<const InstancePrediction> predictions,
                    std::span<const InstanceTruth> truths, const KeypointCatalog& catalog,
                    const EvalOptions& options) {
  if (predictions.size() != truths.size()) {
    throw ShapeError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(truths.size()) + " ground-truth instances");
  }
  if (predictions.empty()) throw PreconditionError("evaluate: empty instance list");
  catalog.validate();

  std::vector<ScoredInstance> scored;
  std::vector<PckInstance> pck_inputs;
  std::vector<std::vector<double>> conf_by_type(catalog.size());
  std::vector<std::vector<double>> ks_by_type(catalog.size());
  double ks_total = 0.0;
  double err_total = 0.0;
  std::size_t visible_total = 0;

  for (std::size_t n = 0; n < predictions.size(); ++n) {
    const auto& pred = predictions[n];
    const auto& truth = truths[n];
    if (pred.keypoints.size() != truth.keypoints.size()) {
      throw ShapeError("evaluate: keypoint count mismatch for instance " + std::to_string(n));
    }
    if (truth.keypoints.size() > catalog.size()) {
      throw ParameterError("evaluate: instance has more keypoints than the catalog");
    }
    double ks_sum = 0.0;
    double conf_sum = 0.0;
    std::size_t visible = 0;
    PckInstance pck_inst{{}, truth.bbox_diag, truth.head_size};
    for (std::size_t k = 0; k < truth.keypoints.size(); ++k) {
      const auto& gt = truth.keypoints[k];
      if (!gt.visible) continue;
      const auto& p = pred.keypoints[k];
      const double d = std::hypot(p.x - gt.x, p.y - gt.y);
      const double ks = keypoint_similarity(d, truth.area, catalog.falloffs[k]);
      ks_sum += ks;
      conf_sum += p.confidence;
      ++visible;
      pck_inst.distances.push_back(d);
      conf_by_type[k].push_back(p.confidence);
      ks_by_type[k].push_back(ks);
      err_total += d;
    }
    if (visible == 0) continue;
    ks_total += ks_sum;
    visible_total += visible;
    scored.push_back({conf_sum / static_cast<double>(visible), ks_sum / static_cast<double>(visible)});
    pck_inputs.push_back(std::move(pck_inst));
  }
  if (scored.empty()) throw UndefinedError("evaluate: no visible keypoints");

  EvalResult result = mean_ap(scored, options.thresholds);
  result.pck = pck(pck_inputs, options.pck_alpha, options.pck_reference);
  result.mean_ks = ks_total / static_cast<double>(visible_total);
  result.mean_error = err_total / static_cast<double>(visible_total);

  double rho_sum = 0.0;
  std::size_t rho_count = 0;
  for (std::size_t k = 0; k < catalog.size(); ++k) {
    if (conf_by_type[k].size() < 2) continue;
    try {
      rho_sum += spearman(conf_by_type[k], ks_by_type[k]);
      ++rho_count;
    } catch (const UndefinedError&) {
    }
  }
  result.spearman = rho_count > 0 ? rho_sum / static_cast<double>(rho_count)
                                  : std::numeric_limits<double>::quiet_NaN();
  return result;
}

}  // namespace rankpose
