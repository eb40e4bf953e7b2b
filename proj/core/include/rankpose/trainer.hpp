#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rankpose/field_io.hpp"
#include "rankpose/heatmap.hpp"
#include "rankpose/losses.hpp"
#include "rankpose/metrics.hpp"
#include "rankpose/synth.hpp"

namespace rankpose {

enum class ModelKind : std::uint8_t { kFreeLogits = 0, kLinear = 1 };
enum class TrainLoss : std::uint8_t { kMse, kKl, kSpatialRank, kSpatialRS, kSpatialRSInstanceSort };
// kHeatmap2D: one H x W field per keypoint. kSimCC: an x-axis field of W * k
// bins and a y-axis field of H * k bins per keypoint.
enum class OutputLayout : std::uint8_t { kHeatmap2D, kSimCC };
enum class OptimizerKind : std::uint8_t { kSgd, kAdam };

struct TrainConfig {
  ModelKind model = ModelKind::kLinear;
  TrainLoss loss = TrainLoss::kMse;
  LossConfig loss_cfg;
  OutputLayout layout = OutputLayout::kHeatmap2D;
  std::uint32_t split_factor = 2;
  Annotation annotation = Annotation::gaussian(2.0);
  Annotation annotation_1d = Annotation::gaussian(4.0);
  double kl_beta = 1.0;
  double lr = 0.1;
  int epochs = 10;
  std::size_t batch_size = 32;
  std::vector<int> lr_decay_epochs;
  double lr_gamma = 0.1;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  // Trailing share of the dataset held out for per-epoch evaluation. Free
  // logit tables cannot score unseen samples and are evaluated on the
  // training split instead.
  double holdout_fraction = 0.2;
  double init_scale = 0.05;
  std::size_t workers = 1;

  void validate() const;
};

// base lr * gamma^(number of decay epochs <= epoch), epochs counted from 0.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

bool uses_instance_sort(TrainLoss loss);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  // Gradient mass of the spatial loss over P and N cells of the training
  // split, probed on the parameters entering the epoch.
  double positive_mass = 0.0;
  double negative_mass = 0.0;
  double mean_ks = 0.0;
  double spearman = 0.0;
  double map = 0.0;
  double mean_error = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

struct Head {
  GridShape shape;
  std::uint32_t keypoint = 0;
};

std::vector<Head> make_heads(const SynthSpec& spec, OutputLayout layout, std::uint32_t split_factor);

// Either a free logit table (one field per sample and head) or a linear map
// from each keypoint's feature block to that keypoint's logits. In the linear
// case the first input_dim - shared_dim inputs get one weight per cell plus a
// per-cell bias; the trailing shared_dim inputs (the instance scale feature)
// get one weight per head, which shifts every cell of the head equally.
// Linear blocks are stored as (cells + 1) rows of (local inputs + 1) columns;
// the extra last row holds the shared weights, zero padded.
class PoseModel {
 public:
  PoseModel(ModelKind kind, std::vector<Head> heads, std::size_t input_dim, std::size_t num_samples,
            std::size_t shared_dim = 0);

  ModelKind kind() const { return kind_; }
  std::size_t num_heads() const { return heads_.size(); }
  const Head& head(std::size_t h) const { return heads_[h]; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t shared_dim() const { return shared_dim_; }
  std::size_t num_samples() const { return num_samples_; }
  std::size_t block_size(std::size_t h) const { return params_[h].size(); }

  std::span<double> params(std::size_t h) { return params_[h]; }
  std::span<const double> params(std::size_t h) const { return params_[h]; }

  void init_random(double scale, std::uint64_t seed);

  void forward(std::size_t h, std::size_t sample, std::span<const double> input,
               std::span<double> logits) const;
  // grad += d logits / d params applied to dlogits.
  void backward(std::size_t h, std::size_t sample, std::span<const double> input,
                std::span<const double> dlogits, std::span<double> grad) const;

  std::vector<io::ParamBlock> to_param_blocks() const;
  static PoseModel from_param_blocks(std::span<const io::ParamBlock> blocks, std::size_t input_dim,
                                     std::size_t num_samples, std::size_t shared_dim = 0);

 private:
  ModelKind kind_;
  std::vector<Head> heads_;
  std::size_t input_dim_;
  std::size_t num_samples_;
  std::size_t shared_dim_;
  std::vector<std::vector<double>> params_;
};

// Model input of keypoint k: its encoding block followed by the scale feature.
std::vector<double> keypoint_input(const SynthSpec& spec, const SynthSample& sample,
                                   std::size_t keypoint);

// Falloff constants for a synthetic skeleton: the COCO constants, cycled.
KeypointCatalog catalog_for(std::size_t num_keypoints);

// Pixel coordinates as (x = col, y = row).
std::vector<InstanceTruth> ground_truth(const SynthDataset& data, std::span<const std::size_t> indices);
std::vector<InstancePrediction> predict(const PoseModel& model, const SynthDataset& data,
                                        const TrainConfig& cfg, std::span<const std::size_t> indices);

struct GradientMass {
  double positive = 0.0;
  double negative = 0.0;
};

// Sums |d spatial loss / d logits| over P and N cells of every visible
// keypoint field of the listed samples.
GradientMass gradient_mass_probe(const PoseModel& model, const SynthDataset& data,
                                 const TrainConfig& cfg, std::span<const std::size_t> indices);

struct TrainResult {
  TrainLog log;
  PoseModel model;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;
  std::vector<InstancePrediction> eval_predictions;
  EvalResult final_eval;
};

// Plain (or Adam) gradient descent on mini-batches with a multi-step
// schedule. Deterministic for a fixed config regardless of `workers`.
// Throws DivergenceError if the loss stops being finite.
TrainResult train(const SynthDataset& data, const TrainConfig& cfg,
                  std::optional<PoseModel> initial = std::nullopt);

}  // namespace rankpose
