#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rankpose/heatmap.hpp"

namespace rankpose {

// A toy pose task: each keypoint of each instance sits at a grid cell and is
// observed through a fixed random Fourier encoding of that cell plus Gaussian
// noise. A linear read-out of the encoding can in principle recover the cell.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t num_instances = 500;
  GridShape grid = GridShape{32, 24, GridMode::kTwoD, 1};
  std::size_t num_keypoints = 5;
  // Encoding width per keypoint.
  std::size_t feature_dim = 64;
  // Noise norm relative to the (unit) norm of a clean encoding.
  double noise_sigma = 0.0;
  std::pair<double, double> area_range{10.0, 40.0};
  double occlusion_prob = 0.0;
  // Length scale, in cells, of the encoding's similarity kernel.
  double encoding_length_scale = 2.0;
  // Append the instance scale, mapped to [0, 1] over area_range, as one
  // shared feature after the keypoint blocks.
  bool scale_feature = true;

  void validate() const;
  // Features per sample: num_keypoints * feature_dim (+1 with scale_feature).
  std::size_t feature_length() const;
};

struct SynthSample {
  std::vector<double> features;
  std::vector<std::size_t> gt_cells;
  double area = 1.0;
  std::vector<bool> visibility;
};

class FeatureEncoder {
 public:
  explicit FeatureEncoder(const SynthSpec& spec);

  // Clean encoding of a 2D cell: random Fourier features, unit norm in
  // expectation.
  std::vector<double> encode(std::size_t cell) const;
  // Nearest clean encoding in Euclidean distance (least squares over the
  // one-hot cell candidates).
  std::size_t decode(std::span<const double> block) const;

 private:
  GridShape grid_;
  std::size_t dim_;
  double length_scale_;
  std::vector<double> omega_row_;
  std::vector<double> omega_col_;
  std::vector<double> phase_;
};

struct SynthDataset {
  SynthSpec spec;
  std::vector<SynthSample> samples;
};

// Deterministic for a fixed spec. Joints are uniform over interior cells.
// Occluded keypoints carry noise only and are flagged invisible.
SynthDataset generate(const SynthSpec& spec);

// Encoding block of keypoint k inside a sample's feature vector.
std::span<const double> keypoint_block(const SynthSpec& spec, const SynthSample& sample,
                                       std::size_t keypoint);

// Cell of keypoint k decoded from the sample's features.
std::size_t decode_keypoint(const FeatureEncoder& encoder, const SynthSpec& spec,
                            const SynthSample& sample, std::size_t keypoint);

// One label field per keypoint of the sample on `shape`. For 1D shapes the
// joint's column (x) or row (y) is mapped to bin col * k (row * k).
std::vector<LabelField> labels_for(const SynthSample& sample, const GridShape& grid,
                                   const GridShape& shape, const Annotation& annotation);

// Bin index of a 2D cell along a 1D axis shape.
std::size_t axis_bin(const GridShape& grid, std::size_t cell, const GridShape& axis_shape);

}  // namespace rankpose
