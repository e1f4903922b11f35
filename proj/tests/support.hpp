#pragma once

#include "clickforge/guidance.hpp"
#include "clickforge/netcore.hpp"
#include "clickforge/raster.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

namespace cftest {

using namespace clickforge;

/// Narrow network for fast tests.
inline ModelConfig small_model() {
  ModelConfig m;
  m.encoder_widths = {4, 6, 8, 8};
  m.bottleneck_width = 8;
  m.adm_widths = {4, 4, 4};
  return m;
}

inline Mask random_mask(int h, int w, double density, std::mt19937_64& gen) {
  std::bernoulli_distribution coin(density);
  Mask m(h, w);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = coin(gen) ? 1 : 0;
  return m;
}

inline Mask box_mask(int h, int w, int r0, int c0, int r1, int c1) {
  Mask m = Mask::Zero(h, w);
  m.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).setOnes();
  return m;
}

inline RasterImage random_image(int h, int w, std::mt19937_64& gen) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  RasterImage img(h, w);
  for (Eigen::Index k = 0; k < img.pixels.size(); ++k) img.pixels.data()[k] = u(gen);
  return img;
}

/// Brute-force squared distance from (r, c) to the nearest pixel that is
/// background or outside the frame.
inline std::int64_t brute_sq_distance(const Mask& mask, int r, int c) {
  if (!mask(r, c)) return 0;
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  for (int i = -1; i <= h; ++i)
    for (int j = -1; j <= w; ++j) {
      const bool background = i < 0 || j < 0 || i >= h || j >= w || !mask(i, j);
      if (!background) continue;
      const std::int64_t d = std::int64_t(i - r) * (i - r) + std::int64_t(j - c) * (j - c);
      best = std::min(best, d);
    }
  return best;
}

/// Flood-fill labels with 4-connectivity (independent of the library).
inline Plane<int> flood_labels(const Mask& mask, int& count) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Plane<int> labels = Plane<int>::Zero(h, w);
  count = 0;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c) || labels(r, c)) continue;
      ++count;
      stack.push_back({r, c});
      labels(r, c) = count;
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        const int dy[] = {-1, 1, 0, 0};
        const int dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k];
          const int nx = x + dx[k];
          if (ny < 0 || nx < 0 || ny >= h || nx >= w || !mask(ny, nx) || labels(ny, nx)) continue;
          labels(ny, nx) = count;
          stack.push_back({ny, nx});
        }
      }
    }
  return labels;
}

/// Independent reference robot clicker: flood fill + brute-force distances.
inline Click reference_robot_click(const Mask& pred, const Mask& gt) {
  const Mask fn = ((gt != 0) && (pred == 0)).cast<std::uint8_t>();
  const Mask fp = ((gt == 0) && (pred != 0)).cast<std::uint8_t>();
  auto largest = [](const Mask& m, Mask& component) {
    int n = 0;
    const Plane<int> labels = flood_labels(m, n);
    std::int64_t best_area = 0;
    int best = 0;
    for (int k = 1; k <= n; ++k) {
      const std::int64_t area = (labels == k).count();
      if (area > best_area) {
        best_area = area;
        best = k;
      }
    }
    component = (labels == best && labels > 0).cast<std::uint8_t>();
    return best_area;
  };
  Mask fn_comp, fp_comp;
  const auto fn_area = largest(fn, fn_comp);
  const auto fp_area = largest(fp, fp_comp);
  const bool positive = fn_area > 0 && fn_area >= fp_area;
  const Mask& comp = positive ? fn_comp : fp_comp;
  Click best{0, 0, positive ? Polarity::kPositive : Polarity::kNegative, 1};
  std::int64_t best_d = -1;
  for (int r = 0; r < comp.rows(); ++r)
    for (int c = 0; c < comp.cols(); ++c) {
      if (!comp(r, c)) continue;
      const auto d = brute_sq_distance(comp, r, c);
      if (d > best_d) {
        best_d = d;
        best.row = r;
        best.col = c;
      }
    }
  return best;
}

/// Central difference of a scalar function of one variable.
template <typename F>
double central_difference(double& x, double step, F&& f) {
  const double saved = x;
  x = saved + step;
  const double up = f();
  x = saved - step;
  const double down = f();
  x = saved;
  return (up - down) / (2 * step);
}

/// |a − n| / max(|a|, |n|), with both below `floor` treated as agreement.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < floor) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("cftest-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cftest
