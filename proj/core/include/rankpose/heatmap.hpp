#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rankpose {

enum class GridMode : std::uint8_t { kTwoD = 0, kOneDX = 1, kOneDY = 2 };

// Geometry of a heatmap. In 2D mode cells are laid out row-major
// (index = row * width + col). In the 1D modes the field is a single axis of
// width * split_factor (x) or height * split_factor (y) bins.
struct GridShape {
  std::uint32_t height = 1;
  std::uint32_t width = 1;
  GridMode mode = GridMode::kTwoD;
  std::uint32_t split_factor = 1;

  static GridShape two_d(std::uint32_t height, std::uint32_t width);
  static GridShape one_d_x(std::uint32_t width, std::uint32_t split_factor);
  static GridShape one_d_y(std::uint32_t height, std::uint32_t split_factor);

  std::size_t cell_count() const;
  // Throws ShapeError when the invariants do not hold.
  void validate() const;

  bool operator==(const GridShape&) const = default;
};

struct Cell {
  std::int64_t row = 0;
  std::int64_t col = 0;
};

// 2D only. Throws BoundsError for cells outside the grid.
std::size_t cell_index(const GridShape& shape, Cell cell);
Cell cell_of(const GridShape& shape, std::size_t index);

enum class ValueKind : std::uint8_t { kLogits, kProbabilities };

struct HeatmapField {
  GridShape shape;
  std::vector<double> values;
  std::uint32_t keypoint_id = 0;
  ValueKind kind = ValueKind::kLogits;

  HeatmapField() = default;
  HeatmapField(GridShape shape, std::vector<double> values, std::uint32_t keypoint_id = 0,
               ValueKind kind = ValueKind::kLogits);

  // Size and finiteness check.
  void validate() const;
  std::size_t argmax() const;
};

enum class AnnotationKind : std::uint8_t { kDot, kGaussian };

struct Annotation {
  AnnotationKind kind = AnnotationKind::kDot;
  double sigma = 0.0;
  int truncation_radius = 0;

  static Annotation dot() { return {}; }
  // A negative radius selects the default floor(3 * sigma).
  static Annotation gaussian(double sigma, int truncation_radius = -1);
};

int default_truncation_radius(double sigma);

struct LabelField {
  GridShape shape;
  std::vector<double> labels;
  Annotation annotation;
  // Set when the labels were rescaled to sum to one (KL targets).
  bool normalized = false;
};

// Single positive cell with label 1. `joint_cell` is a flat index.
LabelField make_dot_label(const GridShape& shape, std::size_t joint_cell);

// Truncated Gaussian bump with peak exactly 1 at `joint_cell`. The window is
// the (2r+1)-cell square (2D) or segment (1D) around the joint; mass outside
// the grid is dropped.
LabelField make_gaussian_label(const GridShape& shape, std::size_t joint_cell, double sigma,
                               int truncation_radius);

LabelField make_label(const GridShape& shape, std::size_t joint_cell, const Annotation& annotation);

// Rescales labels to a probability distribution. Throws NormalizationError for
// an all-zero field.
LabelField normalize_to_distribution(const LabelField& label);

struct PixelPartition {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  std::vector<double> positive_labels;
  double positivity_threshold = 0.0;

  std::size_t cell_count() const { return positives.size() + negatives.size(); }
  // Membership mask, true for positives.
  std::vector<bool> positive_mask() const;
};

// Cells with label > tau go to P (in index order), the rest to N.
PixelPartition partition(const LabelField& label, double tau = 0.0);
PixelPartition partition(std::span<const double> labels, double tau = 0.0);

// |N| / |P|. Throws UndefinedError when P is empty.
double imbalance_ratio(const PixelPartition& part);

// Smallest sigma on a `step` grid in [lo, hi] whose default-truncated Gaussian
// label, centred in the field, gives the imbalance ratio closest to `target`.
double sigma_for_ratio(const GridShape& shape, double target, double lo = 0.25, double hi = 64.0,
                       double step = 0.25);

}  // namespace rankpose
