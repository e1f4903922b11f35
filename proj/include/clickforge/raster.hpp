#pragma once

#include "clickforge/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace clickforge {

/// Binary H×W mask, values exactly 0 or 1.
using Mask = Plane<std::uint8_t>;

/// Per-pixel foreground confidence.
template <typename Scalar = Real>
using ProbMap = Plane<Scalar>;

/// H×W RGB image with intensities in [0, 1]. Column k of `pixels` holds the
/// three channels of pixel k in row-major order, which is also the layout the
/// network consumes.
struct RasterImage {
  static constexpr int kChannels = 3;
  static constexpr int kMinExtent = 16;

  int height = 0;
  int width = 0;
  Eigen::Matrix<float, 3, Eigen::Dynamic> pixels;

  RasterImage() = default;
  RasterImage(int h, int w);

  float& at(int channel, int row, int col) { return pixels(channel, row * width + col); }
  float at(int channel, int row, int col) const { return pixels(channel, row * width + col); }

  /// Throws InvalidArgument if extents or value ranges are violated.
  void validate() const;

  bool operator==(const RasterImage& other) const {
    return height == other.height && width == other.width && pixels == other.pixels;
  }
};

struct LabeledImage {
  RasterImage image;
  Mask mask;

  bool operator==(const LabeledImage& other) const {
    return image == other.image && mask.rows() == other.mask.rows() &&
           mask.cols() == other.mask.cols() && (mask == other.mask).all();
  }
};

using Dataset = std::vector<LabeledImage>;

bool is_binary(const Mask& mask);

/// |a ∩ b| / |a ∪ b|. Two empty masks score 1.
double iou(const Mask& a, const Mask& b);

/// 1 where p > threshold.
template <typename Derived>
Mask binarize(const Eigen::ArrayBase<Derived>& p, typename Derived::Scalar threshold = 0.5) {
  return (p > threshold).template cast<std::uint8_t>();
}

/// Ratio of principal standard deviations of the foreground pixel cloud
/// (≥ 1; 1 for isotropic shapes). Throws on masks with fewer than two pixels.
double aspect_ratio(const Mask& mask);

// ---------------------------------------------------------------------------
// Synthetic domains

enum class DomainKind { kSource, kShifted, kChanged };
enum class ShapeFamily { kDefault, kEllipse, kPolygon, kStrip, kCurve };

const char* to_string(DomainKind kind);
DomainKind parse_domain_kind(const std::string& text);

struct DomainSpec {
  DomainKind kind = DomainKind::kSource;
  /// kDefault picks ellipse/polygon for source and shifted, strip/curve for changed.
  ShapeFamily family = ShapeFamily::kDefault;
  int height = 64;
  int width = 64;
  /// Major extent of the object as a fraction of min(height, width).
  double scale_min = 0.35;
  double scale_max = 0.75;
  /// Gaussian noise std; negative selects the per-domain default.
  double noise_sigma = -1.0;
  bool distractors = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Geometric description of the generated object, in pixel-center coordinates.
struct ShapeGeometry {
  ShapeFamily family = ShapeFamily::kEllipse;
  double center_row = 0.0;
  double center_col = 0.0;
  /// Ellipse semi-axes, or strip half-length / half-width.
  double semi_major = 0.0;
  double semi_minor = 0.0;
  /// Radians, counter-clockwise from the column axis.
  double angle = 0.0;
  /// Polygon vertices (row, col), or curve polyline points.
  std::vector<Eigen::Vector2d> points;
  /// Curve half-thickness.
  double half_thickness = 0.0;

  bool contains(double row, double col) const;
};

Mask rasterize(const ShapeGeometry& shape, int height, int width);

struct GeneratedSample {
  LabeledImage labeled;
  ShapeGeometry shape;
};

GeneratedSample generate_sample(const DomainSpec& spec, std::uint64_t index);

/// Deterministic in `spec`; sample i depends only on (spec, i).
Dataset generate_dataset(const DomainSpec& spec, int count);

}  // namespace clickforge
