#include "clickforge/guidance.hpp"

#include <algorithm>
#include <limits>

namespace clickforge {

const char* to_string(Polarity polarity) {
  return polarity == Polarity::kPositive ? "positive" : "negative";
}

Polarity parse_polarity(const std::string& text) {
  if (text == "positive") return Polarity::kPositive;
  if (text == "negative") return Polarity::kNegative;
  throw InvalidArgument("unknown polarity '" + text + "'");
}

void require_in_bounds(const Click& click, int height, int width) {
  if (click.row < 0 || click.row >= height || click.col < 0 || click.col >= width) {
    throw InvalidArgument("click (" + std::to_string(click.row) + "," + std::to_string(click.col) +
                          ") outside " + std::to_string(height) + "x" + std::to_string(width) + " image");
  }
}

GuidanceMaps render_disks(const std::vector<Click>& clicks, int height, int width, int radius) {
  if (radius < 1) throw InvalidArgument("disk radius must be >= 1");
  GuidanceMaps maps{Mask::Zero(height, width), Mask::Zero(height, width)};
  const int r2 = radius * radius;
  for (const Click& click : clicks) {
    require_in_bounds(click, height, width);
    Mask& target = click.polarity == Polarity::kPositive ? maps.positive : maps.negative;
    const int r0 = std::max(0, click.row - radius);
    const int r1 = std::min(height - 1, click.row + radius);
    const int c0 = std::max(0, click.col - radius);
    const int c1 = std::min(width - 1, click.col + radius);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const int dr = r - click.row;
        const int dc = c - click.col;
        if (dr * dr + dc * dc <= r2) target(r, c) = 1;
      }
  }
  return maps;
}

Components connected_components(const Mask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Components out{Plane<int>::Zero(h, w), {}};
  std::vector<std::pair<int, int>> stack;
  int next = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c) || out.labels(r, c)) continue;
      const int label = ++next;
      Eigen::Index area = 0;
      stack.assign(1, {r, c});
      out.labels(r, c) = label;
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        ++area;
        constexpr int dy[4] = {-1, 1, 0, 0};
        constexpr int dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k];
          const int nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (!mask(ny, nx) || out.labels(ny, nx)) continue;
          out.labels(ny, nx) = label;
          stack.emplace_back(ny, nx);
        }
      }
      out.areas.push_back(area);
    }
  }
  return out;
}

namespace {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), exact on
// integer inputs.
void distance_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d) {
  const int n = static_cast<int>(f.size());
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  int first = 0;
  while (first < n && f[first] >= kInf) ++first;
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  v[0] = first;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = first + 1; q < n; ++q) {
    if (f[q] >= kInf) continue;
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = (static_cast<double>(f[q] + static_cast<std::int64_t>(q) * q) -
           static_cast<double>(f[p] + static_cast<std::int64_t>(p) * p)) /
          (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const std::int64_t dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

Plane<std::int64_t> squared_distance_to_background(const Mask& mask) {
  const int h = static_cast<int>(mask.rows()) + 2;
  const int w = static_cast<int>(mask.cols()) + 2;
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  Plane<std::int64_t> grid(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const bool inside = r > 0 && c > 0 && r < h - 1 && c < w - 1 && mask(r - 1, c - 1);
      grid(r, c) = inside ? kInf : 0;
    }
  std::vector<std::int64_t> f, d;
  f.resize(h);
  d.resize(h);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[r] = grid(r, c);
    distance_1d(f, d);
    for (int r = 0; r < h; ++r) grid(r, c) = d[r];
  }
  f.resize(w);
  d.resize(w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[c] = grid(r, c);
    distance_1d(f, d);
    for (int c = 0; c < w; ++c) grid(r, c) = d[c];
  }
  return grid.block(1, 1, h - 2, w - 2);
}

namespace {

struct Region {
  Eigen::Index area = 0;
  int label = 0;
};

Region largest_component(const Components& comps) {
  Region best;
  for (std::size_t k = 0; k < comps.areas.size(); ++k) {
    // Strict comparison keeps the earliest (topmost-leftmost) component on ties.
    if (comps.areas[k] > best.area) best = {comps.areas[k], static_cast<int>(k) + 1};
  }
  return best;
}

}  // namespace

Click next_robot_click(const Mask& pred, const Mask& gt, int ordinal) {
  require_same_shape(pred, gt, "next_robot_click");
  const Mask fn = ((gt != 0) && (pred == 0)).cast<std::uint8_t>();
  const Mask fp = ((gt == 0) && (pred != 0)).cast<std::uint8_t>();
  const Components fn_comps = connected_components(fn);
  const Components fp_comps = connected_components(fp);
  const Region fn_best = largest_component(fn_comps);
  const Region fp_best = largest_component(fp_comps);
  if (fn_best.area == 0 && fp_best.area == 0) throw StateError("prediction already equals ground truth");

  const bool positive = fn_best.area >= fp_best.area;
  const Components& comps = positive ? fn_comps : fp_comps;
  const int label = positive ? fn_best.label : fp_best.label;
  const Mask region = (comps.labels == label).cast<std::uint8_t>();
  const Plane<std::int64_t> dist = squared_distance_to_background(region);

  Click click;
  click.polarity = positive ? Polarity::kPositive : Polarity::kNegative;
  click.ordinal = ordinal;
  std::int64_t best = -1;
  for (Eigen::Index r = 0; r < region.rows(); ++r)
    for (Eigen::Index c = 0; c < region.cols(); ++c)
      if (region(r, c) && dist(r, c) > best) {
        best = dist(r, c);
        click.row = static_cast<int>(r);
        click.col = static_cast<int>(c);
      }
  return click;
}

std::vector<Click> sample_training_clicks(const Mask& gt, std::uint64_t seed) {
  const auto fg_count = (gt != 0).count();
  if (fg_count == 0) throw InvalidArgument("sample_training_clicks: ground truth is empty");
  Rng rng(seed);
  const int h = static_cast<int>(gt.rows());
  const int w = static_cast<int>(gt.cols());

  const Plane<std::int64_t> inner = squared_distance_to_background(gt);
  const Mask background = (gt == 0).cast<std::uint8_t>();
  const Plane<std::int64_t> outer = squared_distance_to_background(background);

  std::vector<std::pair<int, int>> eroded, foreground, band, anywhere;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (gt(r, c)) {
        foreground.emplace_back(r, c);
        if (inner(r, c) >= 9) eroded.emplace_back(r, c);
      } else {
        anywhere.emplace_back(r, c);
        if (outer(r, c) <= 100) band.emplace_back(r, c);
      }
    }
  const auto& positives = eroded.empty() ? foreground : eroded;

  const int total = static_cast<int>(rng.uniform_int(1, 10));
  int n_pos = static_cast<int>(rng.uniform_int(1, total));
  int n_neg = anywhere.empty() ? 0 : total - n_pos;

  auto pick = [&rng](const std::vector<std::pair<int, int>>& pool) {
    return pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
  };

  std::vector<Click> clicks;
  for (int k = 0; k < n_pos; ++k) {
    const auto [r, c] = pick(positives);
    clicks.push_back({r, c, Polarity::kPositive, 0});
  }
  for (int k = 0; k < n_neg; ++k) {
    const bool near = !band.empty() && rng.bernoulli(0.6);
    const auto [r, c] = pick(near ? band : anywhere);
    clicks.push_back({r, c, Polarity::kNegative, 0});
  }
  // Keep the first click positive, shuffle the rest.
  for (std::size_t k = clicks.size(); k > 2; --k) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(k) - 1));
    std::swap(clicks[k - 1], clicks[j]);
  }
  for (std::size_t k = 0; k < clicks.size(); ++k) clicks[k].ordinal = static_cast<int>(k) + 1;
  return clicks;
}

}  // namespace clickforge
