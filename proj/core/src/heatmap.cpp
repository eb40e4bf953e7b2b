#include "rankpose/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rankpose/error.hpp"

namespace rankpose {

GridShape GridShape::two_d(std::uint32_t height, std::uint32_t width) {
  GridShape s{height, width, GridMode::kTwoD, 1};
  s.validate();
  return s;
}

GridShape GridShape::one_d_x(std::uint32_t width, std::uint32_t split_factor) {
  GridShape s{1, width, GridMode::kOneDX, split_factor};
  s.validate();
  return s;
}

GridShape GridShape::one_d_y(std::uint32_t height, std::uint32_t split_factor) {
  GridShape s{height, 1, GridMode::kOneDY, split_factor};
  s.validate();
  return s;
}

std::size_t GridShape::cell_count() const {
  switch (mode) {
    case GridMode::kTwoD:
      return static_cast<std::size_t>(height) * width;
    case GridMode::kOneDX:
      return static_cast<std::size_t>(width) * split_factor;
    case GridMode::kOneDY:
      return static_cast<std::size_t>(height) * split_factor;
  }
  return 0;
}

void GridShape::validate() const {
  if (height < 1 || width < 1) {
    throw ShapeError("grid height and width must be >= 1");
  }
  if (mode != GridMode::kTwoD && split_factor < 1) {
    throw ShapeError("1D split factor must be >= 1");
  }
  if (mode != GridMode::kTwoD && mode != GridMode::kOneDX && mode != GridMode::kOneDY) {
    throw ShapeError("unknown grid mode");
  }
}

std::size_t cell_index(const GridShape& shape, Cell cell) {
  if (shape.mode != GridMode::kTwoD) {
    throw ShapeError("cell_index requires a 2D grid");
  }
  if (cell.row < 0 || cell.col < 0 || cell.row >= shape.height || cell.col >= shape.width) {
    throw BoundsError("cell (" + std::to_string(cell.row) + ", " + std::to_string(cell.col) +
                      ") outside " + std::to_string(shape.height) + "x" +
                      std::to_string(shape.width) + " grid");
  }
  return static_cast<std::size_t>(cell.row) * shape.width + static_cast<std::size_t>(cell.col);
}

Cell cell_of(const GridShape& shape, std::size_t index) {
  if (index >= shape.cell_count()) {
    throw BoundsError("cell index " + std::to_string(index) + " out of range");
  }
  if (shape.mode != GridMode::kTwoD) {
    return {0, static_cast<std::int64_t>(index)};
  }
  return {static_cast<std::int64_t>(index / shape.width),
          static_cast<std::int64_t>(index % shape.width)};
}

HeatmapField::HeatmapField(GridShape s, std::vector<double> v, std::uint32_t id, ValueKind k)
    : shape(s), values(std::move(v)), keypoint_id(id), kind(k) {
  validate();
}

void HeatmapField::validate() const {
  shape.validate();
  if (values.size() != shape.cell_count()) {
    throw ShapeError("field has " + std::to_string(values.size()) + " values, shape implies " +
                     std::to_string(shape.cell_count()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ParameterError("heatmap values must be finite");
  }
}

std::size_t HeatmapField::argmax() const {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Annotation Annotation::gaussian(double sigma, int truncation_radius) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian sigma must be positive");
  return {AnnotationKind::kGaussian, sigma,
          truncation_radius < 0 ? default_truncation_radius(sigma) : truncation_radius};
}

int default_truncation_radius(double sigma) { return static_cast<int>(std::floor(3.0 * sigma)); }

LabelField make_dot_label(const GridShape& shape, std::size_t joint_cell) {
  shape.validate();
  if (joint_cell >= shape.cell_count()) {
    throw BoundsError("joint cell " + std::to_string(joint_cell) + " outside field of " +
                      std::to_string(shape.cell_count()) + " cells");
  }
  LabelField out{shape, std::vector<double>(shape.cell_count(), 0.0), Annotation::dot(), false};
  out.labels[joint_cell] = 1.0;
  return out;
}

LabelField make_gaussian_label(const GridShape& shape, std::size_t joint_cell, double sigma,
                               int truncation_radius) {
  shape.validate();
  if (!(sigma > 0.0)) throw ParameterError("gaussian sigma must be positive");
  if (truncation_radius < 0) throw ParameterError("truncation radius must be >= 0");
  if (joint_cell >= shape.cell_count()) {
    throw BoundsError("joint cell " + std::to_string(joint_cell) + " outside field of " +
                      std::to_string(shape.cell_count()) + " cells");
  }
  LabelField out{shape, std::vector<double>(shape.cell_count(), 0.0),
                 Annotation{AnnotationKind::kGaussian, sigma, truncation_radius}, false};
  const double denom = 2.0 * sigma * sigma;
  const std::int64_t r = truncation_radius;

  if (shape.mode == GridMode::kTwoD) {
    const Cell joint = cell_of(shape, joint_cell);
    const std::int64_t rows = shape.height;
    const std::int64_t cols = shape.width;
    for (std::int64_t dr = -r; dr <= r; ++dr) {
      const std::int64_t row = joint.row + dr;
      if (row < 0 || row >= rows) continue;
      for (std::int64_t dc = -r; dc <= r; ++dc) {
        const std::int64_t col = joint.col + dc;
        if (col < 0 || col >= cols) continue;
        const double d2 = static_cast<double>(dr * dr + dc * dc);
        out.labels[static_cast<std::size_t>(row * cols + col)] = std::exp(-d2 / denom);
      }
    }
  } else {
    const auto n = static_cast<std::int64_t>(shape.cell_count());
    const auto joint = static_cast<std::int64_t>(joint_cell);
    for (std::int64_t d = -r; d <= r; ++d) {
      const std::int64_t bin = joint + d;
      if (bin < 0 || bin >= n) continue;
      out.labels[static_cast<std::size_t>(bin)] = std::exp(-static_cast<double>(d * d) / denom);
    }
  }
  return out;
}

LabelField make_label(const GridShape& shape, std::size_t joint_cell, const Annotation& annotation) {
  if (annotation.kind == AnnotationKind::kDot) return make_dot_label(shape, joint_cell);
  return make_gaussian_label(shape, joint_cell, annotation.sigma, annotation.truncation_radius);
}

LabelField normalize_to_distribution(const LabelField& label) {
  double total = 0.0;
  for (double v : label.labels) total += v;
  if (!(total > 0.0)) throw NormalizationError("cannot normalize an all-zero label field");
  LabelField out = label;
  for (double& v : out.labels) v /= total;
  out.normalized = true;
  return out;
}

std::vector<bool> PixelPartition::positive_mask() const {
  std::vector<bool> mask(cell_count(), false);
  for (std::size_t idx : positives) mask[idx] = true;
  return mask;
}

PixelPartition partition(std::span<const double> labels, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw ParameterError("positivity threshold must lie in [0, 1)");
  PixelPartition part;
  part.positivity_threshold = tau;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > tau) {
      part.positives.push_back(i);
      part.positive_labels.push_back(labels[i]);
    } else {
      part.negatives.push_back(i);
    }
  }
  return part;
}

PixelPartition partition(const LabelField& label, double tau) { return partition(label.labels, tau); }

double imbalance_ratio(const PixelPartition& part) {
  if (part.positives.empty()) {
    throw UndefinedError("imbalance ratio undefined: no positive cells");
  }
  return static_cast<double>(part.negatives.size()) / static_cast<double>(part.positives.size());
}

double sigma_for_ratio(const GridShape& shape, double target, double lo, double hi, double step) {
  if (!(step > 0.0) || !(lo > 0.0) || hi < lo) throw ParameterError("invalid sigma sweep range");
  const std::size_t centre = shape.mode == GridMode::kTwoD
                                 ? cell_index(shape, {shape.height / 2, shape.width / 2})
                                 : shape.cell_count() / 2;
  double best_sigma = lo;
  double best_gap = std::numeric_limits<double>::infinity();
  const auto steps = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
  for (int s = 0; s <= steps; ++s) {
    const double sigma = lo + step * s;
    const auto label = make_gaussian_label(shape, centre, sigma, default_truncation_radius(sigma));
    const auto part = partition(label, 0.0);
    const double gap = std::abs(imbalance_ratio(part) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best_sigma = sigma;
    }
  }
  return best_sigma;
}

}  // namespace rankpose
