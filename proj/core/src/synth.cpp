#include "rankpose/synth.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "rankpose/error.hpp"

namespace rankpose {

void SynthSpec::validate() const {
  if (grid.mode != GridMode::kTwoD) throw ConfigError("synthetic grid must be 2D");
  if (grid.height < 3 || grid.width < 3) throw ConfigError("synthetic grid must be at least 3x3");
  if (num_instances < 1) throw ConfigError("num_instances must be >= 1");
  if (num_keypoints < 1) throw ConfigError("num_keypoints must be >= 1");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (!(area_range.first > 0.0) || area_range.second < area_range.first) {
    throw ConfigError("area_range must satisfy 0 < min <= max");
  }
  if (!(occlusion_prob >= 0.0 && occlusion_prob < 1.0)) {
    throw ConfigError("occlusion_prob must lie in [0, 1)");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(encoding_length_scale > 0.0)) throw ConfigError("encoding_length_scale must be positive");
}

std::size_t SynthSpec::feature_length() const {
  return num_keypoints * feature_dim + (scale_feature ? 1 : 0);
}

FeatureEncoder::FeatureEncoder(const SynthSpec& spec)
    : grid_(spec.grid), dim_(spec.feature_dim), length_scale_(spec.encoding_length_scale) {
  // Separate stream from the sample draws so the encoding does not depend on
  // num_instances.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (std::size_t d = 0; d < dim_; ++d) {
    omega_row_.push_back(normal(rng) / length_scale_);
    omega_col_.push_back(normal(rng) / length_scale_);
    phase_.push_back(angle(rng));
  }
}

std::vector<double> FeatureEncoder::encode(std::size_t cell) const {
  const Cell rc = cell_of(grid_, cell);
  const double scale = std::sqrt(2.0 / static_cast<double>(dim_));
  std::vector<double> out(dim_);
  for (std::size_t d = 0; d < dim_; ++d) {
    out[d] = scale * std::cos(omega_row_[d] * static_cast<double>(rc.row) +
                              omega_col_[d] * static_cast<double>(rc.col) + phase_[d]);
  }
  return out;
}

std::size_t FeatureEncoder::decode(std::span<const double> block) const {
  if (block.size() != dim_) throw ShapeError("decode: block width differs from encoder");
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < grid_.cell_count(); ++c) {
    const auto e = encode(c);
    double dist = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) dist += (block[d] - e[d]) * (block[d] - e[d]);
    if (dist < best_dist) {
      best_dist = dist;
      best = c;
    }
  }
  return best;
}

SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  const FeatureEncoder encoder(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> row(1, spec.grid.height - 2);
  std::uniform_int_distribution<std::uint32_t> col(1, spec.grid.width - 2);
  const double noise = spec.noise_sigma / std::sqrt(static_cast<double>(spec.feature_dim));
  const auto [area_lo, area_hi] = spec.area_range;

  SynthDataset data{spec, {}};
  data.samples.reserve(spec.num_instances);
  for (std::size_t n = 0; n < spec.num_instances; ++n) {
    SynthSample s;
    s.area = area_lo + (area_hi - area_lo) * unit(rng);
    s.features.reserve(spec.feature_length());
    for (std::size_t k = 0; k < spec.num_keypoints; ++k) {
      const std::size_t cell = cell_index(spec.grid, {row(rng), col(rng)});
      const bool visible = unit(rng) >= spec.occlusion_prob;
      s.gt_cells.push_back(cell);
      s.visibility.push_back(visible);
      const auto clean = encoder.encode(cell);
      for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        const double jitter = noise * normal(rng);
        s.features.push_back(visible ? clean[d] + jitter : jitter);
      }
    }
    if (spec.scale_feature) {
      s.features.push_back(area_hi > area_lo ? (s.area - area_lo) / (area_hi - area_lo) : 0.0);
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

std::span<const double> keypoint_block(const SynthSpec& spec, const SynthSample& sample,
                                       std::size_t keypoint) {
  if (keypoint >= spec.num_keypoints) throw BoundsError("keypoint index out of range");
  return std::span<const double>(sample.features).subspan(keypoint * spec.feature_dim,
                                                          spec.feature_dim);
}

std::size_t decode_keypoint(const FeatureEncoder& encoder, const SynthSpec& spec,
                            const SynthSample& sample, std::size_t keypoint) {
  return encoder.decode(keypoint_block(spec, sample, keypoint));
}

std::size_t axis_bin(const GridShape& grid, std::size_t cell, const GridShape& axis_shape) {
  const Cell rc = cell_of(grid, cell);
  switch (axis_shape.mode) {
    case GridMode::kOneDX:
      return static_cast<std::size_t>(rc.col) * axis_shape.split_factor;
    case GridMode::kOneDY:
      return static_cast<std::size_t>(rc.row) * axis_shape.split_factor;
    case GridMode::kTwoD:
      break;
  }
  return cell;
}

std::vector<LabelField> labels_for(const SynthSample& sample, const GridShape& grid,
                                   const GridShape& shape, const Annotation& annotation) {
  std::vector<LabelField> out;
  out.reserve(sample.gt_cells.size());
  for (std::size_t cell : sample.gt_cells) {
    const std::size_t target = shape.mode == GridMode::kTwoD ? cell : axis_bin(grid, cell, shape);
    out.push_back(make_label(shape, target, annotation));
  }
  return out;
}

}  // namespace rankpose
