#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rankpose/heatmap.hpp"
#include "rankpose/metrics.hpp"

namespace rankpose {

// Deltas and weights of the ranking objective. The defaults are the ViTPose
// ViT-B setting.
struct LossConfig {
  double rank_delta = 0.4;
  double rank_coeff = 1.0;
  double sort_delta = 1.5;
  double sort_coeff = 2.0;
  double isort_delta = 3.0;
  double isort_coeff = 0.25;
  double positivity_threshold = 0.0;
  // Count the pair (i, i), H(0) = 0.5, in rank(i) and rank+(i).
  bool include_self_pair = true;

  void validate() const;

  static LossConfig vitpose_b();
  static LossConfig vitpose_h();
  // No instance term for this setting: isort_coeff is 0.
  static LossConfig simcc_res50();
  static LossConfig simcc_hrnet48();
};

enum class SelfPair : std::uint8_t { kInclude, kExclude };

inline SelfPair self_pair_of(const LossConfig& cfg) {
  return cfg.include_self_pair ? SelfPair::kInclude : SelfPair::kExclude;
}

struct LossOutput {
  // Loss under the smoothed step; consistent with `grad`.
  double value = 0.0;
  // Same layout as the scored input (cells, bins, or instances).
  std::vector<double> grad;
  // Loss under the hard step H(x) = [x > 0], for reporting.
  double hard_value = 0.0;
  // Set when the input was degenerate and contributed nothing (instance
  // batches with fewer than two members).
  bool skipped = false;
};

// Dense pairwise terms over n cells: primary(i, j) = L_ij, indicator(i, j) =
// t_ij and diff(i, j) = x_ij = score_j - score_i.
struct PairTerms {
  std::size_t n = 0;
  std::vector<double> primary;
  std::vector<std::uint8_t> indicator;
  std::vector<double> diff;

  explicit PairTerms(std::size_t cells = 0)
      : n(cells), primary(cells * cells, 0.0), indicator(cells * cells, 0), diff(cells * cells, 0.0) {}
  std::size_t idx(std::size_t i, std::size_t j) const { return i * n + j; }
};

// Piecewise-linear ramp of half-width delta: 0 below -delta, 1 above delta,
// x / (2 delta) + 1/2 in between.
double smoothed_step(double x, double delta);

// Rank positives above negatives. Per positive i,
//   l(i) = sum_{j in N} H(x_ij) / sum_{j in P u N} H(x_ij),  x_ij = s_j - s_i,
// value = mean_i l(i). The error-driven gradient moves l(i) from each
// positive to the negatives that outrank it in proportion to H(x_ij), divided
// by |P|. Runs in O((|P| + |N|) log n) using sorted prefix sums.
LossOutput spatial_rank(std::span<const double> scores, const PixelPartition& part, double delta,
                        SelfPair self = SelfPair::kInclude);
LossOutput spatial_rank(const HeatmapField& pred, const PixelPartition& part, double delta,
                        SelfPair self = SelfPair::kInclude);

// Sort positives by their labels. Per positive i the current error is the
// H-weighted mean of (1 - p_j) over positives, the target error the same mean
// restricted to p_j >= p_i. The excess is pushed onto the positives that
// outrank i while carrying a lower label.
LossOutput spatial_sort(std::span<const double> scores, const PixelPartition& part, double delta,
                        SelfPair self = SelfPair::kInclude);
LossOutput spatial_sort(const HeatmapField& pred, const PixelPartition& part, double delta,
                        SelfPair self = SelfPair::kInclude);

// Sorting objective across the instances of one keypoint type, with keypoint
// similarity in place of labels. grad has one entry per instance, meant for
// that instance's argmax cell.
LossOutput instance_sort(std::span<const double> confidences, std::span<const double> similarity,
                         double delta, SelfPair self = SelfPair::kInclude);
// Throws PreconditionError when the records mix keypoint types.
LossOutput instance_sort(std::span<const InstanceRecord> batch, double delta,
                         SelfPair self = SelfPair::kInclude);

// (1 / cells) * sum (pred - label)^2.
LossOutput mse_loss(std::span<const double> pred, std::span<const double> label);
LossOutput mse_loss(const HeatmapField& pred, const LabelField& label);

// KL divergence between 1D targets and softmax(beta * logits) on each axis,
// each axis averaged over its bin count (so a uniform prediction against a
// one-hot target on n bins gives log(n) / n for that axis). grad is laid out
// as [x bins..., y bins...].
LossOutput kl_loss(std::span<const double> logits_x, std::span<const double> logits_y,
                   std::span<const double> target_x, std::span<const double> target_y, double beta);
LossOutput kl_loss(const HeatmapField& logits_x, const HeatmapField& logits_y,
                   const LabelField& target_x, const LabelField& target_y, double beta);

// rank_coeff * rank + sort_coeff * sort + isort_coeff * isort, on values and
// gradients alike. An empty grad counts as zero.
LossOutput total_loss(const LossOutput& rank, const LossOutput& sort, const LossOutput& isort,
                      const LossConfig& cfg);

}  // namespace rankpose
