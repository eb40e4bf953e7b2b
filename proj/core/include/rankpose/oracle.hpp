#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rankpose/heatmap.hpp"
#include "rankpose/losses.hpp"
#include "rankpose/metrics.hpp"

// Literal double-loop reference implementations of the ranking losses and
// their error-driven gradients. Nothing here calls into losses.cpp: the step
// function, the per-pair primary terms and the gradient accumulation are all
// re-derived so the kernels can be checked against an independent path.
namespace rankpose::oracle {

// Every quantity is materialised over all n x n ordered cell pairs and the
// gradient is the generic sum_j L_ji t_ji - sum_j L_ij t_ij, divided by |P|.
LossOutput brute_rank(std::span<const double> scores, const PixelPartition& part, double delta,
                      SelfPair self = SelfPair::kInclude);
LossOutput brute_sort(std::span<const double> scores, const PixelPartition& part, double delta,
                      SelfPair self = SelfPair::kInclude);
LossOutput brute_isort(std::span<const InstanceRecord> batch, double delta,
                       SelfPair self = SelfPair::kInclude);
LossOutput brute_isort(std::span<const double> confidences, std::span<const double> similarity,
                       double delta, SelfPair self = SelfPair::kInclude);

PairTerms rank_pair_terms(std::span<const double> scores, const PixelPartition& part, double delta,
                          SelfPair self = SelfPair::kInclude);
PairTerms sort_pair_terms(std::span<const double> scores, const PixelPartition& part, double delta,
                          SelfPair self = SelfPair::kInclude);

enum class LossKind { kMse, kKl, kSpatialRank, kSpatialSort, kInstanceSort };

const char* to_string(LossKind kind);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t evaluated = 0;
};

// Central differences against the analytic gradient of a smooth loss. The
// relative error of component c is |a - f| / max(|a|, |f|, 1e-3). Ranking
// losses are rejected with ContractError: their error-driven update is not
// the derivative of their value.
FiniteDiffReport finite_diff_check(LossKind kind,
                                   const std::function<LossOutput(std::span<const double>)>& loss_fn,
                                   std::span<const double> input, double epsilon = 1e-5);

// Random inputs used by the equivalence sweeps.
struct SpatialCase {
  std::vector<double> scores;
  PixelPartition part;
  double delta = 1.0;
  SelfPair self = SelfPair::kInclude;
};

struct InstanceCase {
  std::vector<double> confidences;
  std::vector<double> similarity;
  double delta = 1.0;
  SelfPair self = SelfPair::kInclude;
};

// Fields up to 8x6 with 1..10 positives; scores are occasionally quantised to
// produce exact ties.
SpatialCase random_spatial_case(std::mt19937_64& rng);
// Batches of 2..16 instances.
InstanceCase random_instance_case(std::mt19937_64& rng);

struct Discrepancy {
  double max_value_error = 0.0;
  double max_grad_error = 0.0;
  std::size_t cases = 0;
  std::size_t failures = 0;
};

struct EquivalenceReport {
  Discrepancy rank;
  Discrepancy sort;
  Discrepancy isort;
  double tolerance = 1e-9;
  bool passed() const { return rank.failures + sort.failures + isort.failures == 0; }
};

// Kernel vs brute force on `cases` random inputs per loss.
EquivalenceReport run_equivalence(std::size_t cases, std::uint64_t seed, double tolerance = 1e-9);

}  // namespace rankpose::oracle
