#pragma once

#include "clickforge/raster.hpp"

#include <cstdint>
#include <vector>

namespace clickforge {

enum class Polarity : std::uint8_t { kPositive, kNegative };

const char* to_string(Polarity polarity);
Polarity parse_polarity(const std::string& text);

struct Click {
  int row = 0;
  int col = 0;
  Polarity polarity = Polarity::kPositive;
  /// 1-based position within a session.
  int ordinal = 1;

  bool operator==(const Click&) const = default;
};

/// Rendered click disks: `positive` is c_f, `negative` is c_b.
struct GuidanceMaps {
  Mask positive;
  Mask negative;
};

constexpr int kDefaultDiskRadius = 5;

void require_in_bounds(const Click& click, int height, int width);

/// Pixel (i, j) of a polarity's map is 1 iff some click of that polarity lies
/// within Euclidean distance `radius`. Disks clip at the image border.
GuidanceMaps render_disks(const std::vector<Click>& clicks, int height, int width,
                          int radius = kDefaultDiskRadius);

/// 4-connected component labels in row-major discovery order (0 = background,
/// labels 1..n). Component k's first pixel in row-major order precedes
/// component k+1's.
struct Components {
  Plane<int> labels;
  std::vector<Eigen::Index> areas;  // areas[k-1] for label k
};
Components connected_components(const Mask& mask);

/// Exact squared Euclidean distance from each foreground pixel to the nearest
/// background pixel; pixels outside the frame count as background. Background
/// pixels get 0.
Plane<std::int64_t> squared_distance_to_background(const Mask& mask);

/// Robot clicker: picks the largest 4-connected error region (false negatives
/// win ties against false positives) and clicks its interior-most pixel.
/// Throws StateError when pred == gt.
Click next_robot_click(const Mask& pred, const Mask& gt, int ordinal = 1);

/// 1–10 clicks; the first is always positive. Positives come from the eroded
/// foreground, negatives from a band around the object or anywhere in the
/// background.
std::vector<Click> sample_training_clicks(const Mask& gt, std::uint64_t seed);

}  // namespace clickforge
