#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rankpose {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// One keypoint of one person instance. `area` is the instance scale s that
// enters the similarity kernel as s^2; `falloff` is the per-type constant k.
struct InstanceRecord {
  std::uint32_t instance_id = 0;
  std::uint32_t keypoint_id = 0;
  double confidence = 0.0;
  Point2 pred_coord;
  Point2 gt_coord;
  double area = 1.0;
  double falloff = 1.0;
  bool visible = true;
};

struct KeypointCatalog {
  std::vector<std::string> names;
  std::vector<double> falloffs;

  // The 17 COCO person keypoints. Falloff k = 2 * sigma with the published
  // per-keypoint sigmas, as in the COCO OKS definition.
  static KeypointCatalog coco();
  std::size_t size() const { return falloffs.size(); }
  void validate() const;
};

// exp(-d^2 / (2 s^2 k^2)) for Euclidean d between predicted and true point.
double keypoint_similarity(double distance, double area, double falloff);
double keypoint_similarity(const InstanceRecord& rec);

// Unweighted mean of KS over the visible keypoints of one instance.
double oks(std::span<const InstanceRecord> keypoints);

// 0.50, 0.55, ..., 0.95
std::vector<double> coco_oks_thresholds();

struct ScoredInstance {
  double confidence = 0.0;
  double oks = 0.0;
};

struct EvalResult {
  std::vector<double> thresholds;
  std::vector<double> ap_per_threshold;
  std::vector<double> ar_per_threshold;
  double map = 0.0;
  double ar = 0.0;
  double pck = 0.0;
  // NaN when undefined (e.g. every KS identical).
  double spearman = 0.0;
  double mean_ks = 0.0;
  double mean_error = 0.0;
};

// Ranks instances by descending confidence (stable on ties) and computes
// all-point interpolated AP at each OKS threshold. One prediction per ground
// truth instance, so recall is TP / instances.size().
EvalResult mean_ap(std::span<const ScoredInstance> instances,
                   std::span<const double> thresholds);
EvalResult mean_ap(std::span<const ScoredInstance> instances);

enum class PckReference { kBBoxDiag, kHeadSize };

struct PckInstance {
  std::vector<double> distances;  // visible keypoints only
  std::optional<double> bbox_diag;
  std::optional<double> head_size;
};

double pck(std::span<const PckInstance> instances, double alpha, PckReference reference);

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> fractional_ranks(std::span<const double> values);
double spearman(std::span<const double> x, std::span<const double> y);

struct MinMaxCalibration {
  double min = 0.0;
  double max = 1.0;
};

MinMaxCalibration calibrate_minmax(std::span<const double> observed);
std::vector<double> minmax_scale(std::span<const double> confidences, const MinMaxCalibration& cal);
// Scales each record's confidence with the calibration of its keypoint type.
std::vector<double> minmax_scale(std::span<const InstanceRecord> records,
                                 std::span<const MinMaxCalibration> per_type);

// K x n matrix, row j holds keypoint j across n instances.
struct KeypointMatrix {
  std::size_t keypoints = 0;
  std::size_t instances = 0;
  std::vector<double> values;

  KeypointMatrix() = default;
  KeypointMatrix(std::size_t k, std::size_t n) : keypoints(k), instances(n), values(k * n, 0.0) {}
  double& at(std::size_t j, std::size_t i) { return values[j * instances + i]; }
  double at(std::size_t j, std::size_t i) const { return values[j * instances + i]; }
  std::span<const double> row(std::size_t j) const {
    return {values.data() + j * instances, instances};
  }
};

// Population (1/n) sample covariance.
double covariance(std::span<const double> a, std::span<const double> b);

struct CovarianceReport {
  double cov_oks_conf = 0.0;   // Cov(mean_j L_j, mean_j C_j)
  double double_sum = 0.0;     // (1/K^2) sum_j sum_m Cov(L_j, C_m)
  double diagonal_sum = 0.0;   // (1/K^2) sum_j Cov(L_j, C_j)
  double max_abs_cross = 0.0;  // max_{j != m} |Cov(L_j, C_m)|
  double discrepancy = 0.0;    // |cov_oks_conf - double_sum|
};

CovarianceReport covariance_identity_check(const KeypointMatrix& quality,
                                           const KeypointMatrix& confidence);

struct ZeroCrossPair {
  KeypointMatrix quality;
  KeypointMatrix confidence;
};

// Builds L, C whose sample cross-covariances Cov(L_j, C_m), j != m, vanish
// (up to rounding) and whose diagonal covariances equal `diagonal`. Each
// row is an offset plus combinations of orthonormal, zero-mean directions, so
// n must be at least 3K + 1.
ZeroCrossPair make_zero_cross_pair(std::span<const double> diagonal, std::size_t instances,
                                   std::uint64_t seed);

struct MonotonicityReport {
  CovarianceReport before;
  CovarianceReport after;
  bool increased = false;
};

// Rebuilds the zero-cross construction with diagonal[which] raised by
// `increment` (same seed, so every other component is unchanged) and compares
// Cov(OKS, Conf) before and after.
MonotonicityReport check_diagonal_monotonicity(std::span<const double> diagonal,
                                               std::size_t instances, std::size_t which,
                                               double increment, std::uint64_t seed);

// Full evaluation of per-keypoint predictions against ground truth.
struct KeypointPrediction {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
};

struct KeypointTruth {
  double x = 0.0;
  double y = 0.0;
  bool visible = true;
};

struct InstancePrediction {
  std::vector<KeypointPrediction> keypoints;
};

struct InstanceTruth {
  std::vector<KeypointTruth> keypoints;
  double area = 1.0;
  std::optional<double> bbox_diag;
  std::optional<double> head_size;
};

struct EvalOptions {
  std::vector<double> thresholds = coco_oks_thresholds();
  double pck_alpha = 0.1;
  PckReference pck_reference = PckReference::kBBoxDiag;
};

// Instance confidence is the mean keypoint confidence over visible keypoints.
// The reported Spearman coefficient is the mean over keypoint types of the
// per-type correlation between keypoint confidence and KS; types where it is
// undefined are skipped.
EvalResult evaluate(std::span<const InstancePrediction> predictions,
                    std::span<const InstanceTruth> truths, const KeypointCatalog& catalog,
                    const EvalOptions& options = {});

}  // namespace rankpose
