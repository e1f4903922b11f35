#include "clickforge/raster.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>

namespace clickforge {

RasterImage::RasterImage(int h, int w) : height(h), width(w), pixels(3, static_cast<Eigen::Index>(h) * w) {
  pixels.setZero();
}

void RasterImage::validate() const {
  if (height < kMinExtent || width < kMinExtent) {
    throw InvalidArgument("image extent " + std::to_string(height) + "x" + std::to_string(width) +
                          " below minimum " + std::to_string(kMinExtent));
  }
  if (pixels.cols() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("image pixel buffer does not match extent");
  }
  if (!((pixels.array() >= 0.0f).all() && (pixels.array() <= 1.0f).all())) {
    throw InvalidArgument("image intensities must lie in [0, 1]");
  }
}

bool is_binary(const Mask& mask) { return (mask <= 1).all(); }

double iou(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "iou");
  const auto fa = a != 0;
  const auto fb = b != 0;
  const auto inter = (fa && fb).count();
  const auto uni = (fa || fb).count();
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double aspect_ratio(const Mask& mask) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Index n = 0;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        mean += Eigen::Vector2d(r, c);
        ++n;
      }
  if (n < 2) throw InvalidArgument("aspect_ratio needs at least two foreground pixels");
  mean /= static_cast<double>(n);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        const Eigen::Vector2d d = Eigen::Vector2d(r, c) - mean;
        cov += d * d.transpose();
      }
  cov /= static_cast<double>(n);
  // A one-pixel-wide line has zero minor variance; the 1/12 term is the
  // variance of a unit pixel footprint.
  cov += Eigen::Matrix2d::Identity() / 12.0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(cov);
  const Eigen::Vector2d ev = solver.eigenvalues();
  return std::sqrt(ev(1) / ev(0));
}

const char* to_string(DomainKind kind) {
  switch (kind) {
    case DomainKind::kSource: return "source";
    case DomainKind::kShifted: return "shifted";
    case DomainKind::kChanged: return "changed";
  }
  return "source";
}

DomainKind parse_domain_kind(const std::string& text) {
  if (text == "source") return DomainKind::kSource;
  if (text == "shifted") return DomainKind::kShifted;
  if (text == "changed") return DomainKind::kChanged;
  throw InvalidArgument("unknown domain kind '" + text + "'");
}

void DomainSpec::validate() const {
  if (height < RasterImage::kMinExtent || width < RasterImage::kMinExtent)
    throw InvalidArgument("domain extent below minimum");
  if (!(scale_min > 0.0) || !(scale_max >= scale_min) || scale_max > 1.0)
    throw InvalidArgument("degenerate domain spec: shape scale range must satisfy 0 < min <= max <= 1");
  if (!std::isfinite(noise_sigma)) throw InvalidArgument("noise sigma must be finite");
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

bool ShapeGeometry::contains(double row, double col) const {
  const double dy = row - center_row;
  const double dx = col - center_col;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  switch (family) {
    case ShapeFamily::kDefault:
    case ShapeFamily::kEllipse:
      return (u / semi_major) * (u / semi_major) + (v / semi_minor) * (v / semi_minor) <= 1.0;
    case ShapeFamily::kStrip:
      return std::abs(u) <= semi_major && std::abs(v) <= semi_minor;
    case ShapeFamily::kPolygon: {
      // Convex, vertices in counter-clockwise (row, col) order.
      const Eigen::Vector2d p(row, col);
      const std::size_t n = points.size();
      for (std::size_t k = 0; k < n; ++k) {
        const Eigen::Vector2d& a = points[k];
        const Eigen::Vector2d& b = points[(k + 1) % n];
        const double cross = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
        if (cross < 0.0) return false;
      }
      return n >= 3;
    }
    case ShapeFamily::kCurve: {
      const Eigen::Vector2d p(row, col);
      for (std::size_t k = 0; k + 1 < points.size(); ++k)
        if (segment_distance(p, points[k], points[k + 1]) <= half_thickness) return true;
      return false;
    }
  }
  return false;
}

Mask rasterize(const ShapeGeometry& shape, int height, int width) {
  Mask mask(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) mask(r, c) = shape.contains(r, c) ? 1 : 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Appearance

namespace {

using Color = Eigen::Vector3d;

Color random_color(Rng& rng) { return Color(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)); }

Color contrasting_color(Rng& rng, const Color& against, double min_l1) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Color c = random_color(rng);
    if ((c - against).cwiseAbs().sum() >= min_l1) return c;
  }
  // Fallback: push each channel away from the reference.
  Color c;
  for (int k = 0; k < 3; ++k) c(k) = against(k) > 0.5 ? 0.1 : 0.9;
  return c;
}

ShapeFamily pick_family(const DomainSpec& spec, Rng& rng) {
  if (spec.family != ShapeFamily::kDefault) return spec.family;
  if (spec.kind == DomainKind::kChanged) return rng.bernoulli(0.5) ? ShapeFamily::kStrip : ShapeFamily::kCurve;
  return rng.bernoulli(0.5) ? ShapeFamily::kEllipse : ShapeFamily::kPolygon;
}

ShapeGeometry random_shape(const DomainSpec& spec, ShapeFamily family, Rng& rng) {
  const double extent = std::min(spec.height, spec.width);
  const double major = rng.uniform(spec.scale_min, spec.scale_max) * extent / 2.0;
  ShapeGeometry g;
  g.family = family;
  g.angle = rng.uniform(0.0, M_PI);
  switch (family) {
    case ShapeFamily::kDefault:
    case ShapeFamily::kEllipse: {
      g.semi_major = major;
      g.semi_minor = major / rng.uniform(1.0, 2.0);
      break;
    }
    case ShapeFamily::kPolygon: {
      const int n = static_cast<int>(rng.uniform_int(3, 7));
      std::vector<double> angles(n);
      for (auto& a : angles) a = rng.uniform(0.0, 2.0 * M_PI);
      std::sort(angles.begin(), angles.end());
      g.semi_major = major;
      g.semi_minor = major;
      g.points.clear();
      for (double a : angles) {
        const double radius = major * rng.uniform(0.75, 1.0);
        // (row, col) with increasing angle is counter-clockwise in the cross test.
        g.points.emplace_back(radius * std::cos(a), radius * std::sin(a));
      }
      break;
    }
    case ShapeFamily::kStrip: {
      g.semi_major = std::max(major, 0.3 * extent);
      g.semi_minor = rng.uniform(3.0, 5.0);
      break;
    }
    case ShapeFamily::kCurve: {
      const double half_len = std::max(major, 0.3 * extent);
      const double bend = rng.uniform(-0.5, 0.5) * half_len;
      g.half_thickness = rng.uniform(3.0, 5.0);
      g.semi_major = half_len;
      g.semi_minor = g.half_thickness;
      const double c = std::cos(g.angle);
      const double s = std::sin(g.angle);
      constexpr int kSegments = 16;
      for (int k = 0; k <= kSegments; ++k) {
        const double t = -1.0 + 2.0 * k / kSegments;
        const double u = t * half_len;
        const double v = bend * (1.0 - t * t);
        // Offsets are relative to the center; translated below.
        g.points.emplace_back(u * s + v * c, u * c - v * s);
      }
      break;
    }
  }
  const double margin = family == ShapeFamily::kStrip || family == ShapeFamily::kCurve ? 0.5 * major : major;
  const double lo = std::min(margin, extent / 2.0);
  g.center_row = rng.uniform(lo, spec.height - 1 - lo);
  g.center_col = rng.uniform(lo, spec.width - 1 - lo);
  if (family == ShapeFamily::kPolygon || family == ShapeFamily::kCurve) {
    for (auto& p : g.points) p += Eigen::Vector2d(g.center_row, g.center_col);
  }
  return g;
}

struct Texture {
  double amplitude = 0.0;
  double fr = 0.0, fc = 0.0, phase = 0.0;
  double fr2 = 0.0, fc2 = 0.0, phase2 = 0.0;

  double operator()(int r, int c) const {
    if (amplitude == 0.0) return 0.0;
    return amplitude * 0.5 * (std::sin(fr * r + fc * c + phase) + std::sin(fr2 * r + fc2 * c + phase2));
  }
};

Texture random_texture(Rng& rng, double amplitude) {
  Texture t;
  t.amplitude = amplitude;
  t.fr = rng.uniform(-1.2, 1.2);
  t.fc = rng.uniform(-1.2, 1.2);
  t.phase = rng.uniform(0.0, 2.0 * M_PI);
  t.fr2 = rng.uniform(-0.6, 0.6);
  t.fc2 = rng.uniform(-0.6, 0.6);
  t.phase2 = rng.uniform(0.0, 2.0 * M_PI);
  return t;
}

double default_noise(DomainKind kind) {
  switch (kind) {
    case DomainKind::kSource: return 0.03;
    case DomainKind::kShifted: return 0.06;
    case DomainKind::kChanged: return 0.05;
  }
  return 0.03;
}

float quantize(double v) {
  const long k = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(k) / 255.0f;
}

GeneratedSample render_attempt(const DomainSpec& spec, Rng& rng) {
  const int h = spec.height;
  const int w = spec.width;
  const ShapeFamily family = pick_family(spec, rng);
  GeneratedSample out;
  out.shape = random_shape(spec, family, rng);
  out.labeled.mask = rasterize(out.shape, h, w);

  // Background: linear blend of two colors along a random direction.
  const Color bg0 = random_color(rng);
  const Color bg1 = random_color(rng);
  const double dir = rng.uniform(0.0, 2.0 * M_PI);
  const Color bg_mean = 0.5 * (bg0 + bg1);
  const Color fg0 = contrasting_color(rng, bg_mean, 0.6);
  const Color fg1 = fg0 + Color(rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08));

  const bool textured = spec.kind != DomainKind::kSource;
  const Texture bg_tex = random_texture(rng, textured ? (spec.kind == DomainKind::kChanged ? 0.18 : 0.14) : 0.0);
  const Texture fg_tex = random_texture(rng, spec.kind == DomainKind::kShifted ? 0.10 : 0.0);

  std::array<int, 3> perm{0, 1, 2};
  if (spec.kind == DomainKind::kShifted) {
    for (int k = 2; k > 0; --k) std::swap(perm[k], perm[rng.uniform_int(0, k)]);
  }

  Mask distractor = Mask::Zero(h, w);
  Color distractor_color = Color::Zero();
  if (spec.distractors && rng.bernoulli(0.5)) {
    DomainSpec small = spec;
    small.scale_min = spec.scale_min * 0.5;
    small.scale_max = spec.scale_max * 0.6;
    const ShapeGeometry d = random_shape(small, pick_family(spec, rng), rng);
    distractor = rasterize(d, h, w);
    distractor_color = contrasting_color(rng, fg0, 0.5);
  }

  const double sigma = spec.noise_sigma >= 0.0 ? spec.noise_sigma : default_noise(spec.kind);
  const double c = std::cos(dir);
  const double s = std::sin(dir);
  const double diag = std::hypot(h, w);
  RasterImage img(h, w);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const double t = std::clamp(0.5 + ((r - h / 2.0) * s + (col - w / 2.0) * c) / diag, 0.0, 1.0);
      Color v;
      if (out.labeled.mask(r, col)) {
        v = (1.0 - t) * fg0 + t * fg1;
        v.array() += fg_tex(r, col);
      } else if (distractor(r, col)) {
        v = distractor_color;
        v.array() += bg_tex(r, col) * 0.5;
      } else {
        v = (1.0 - t) * bg0 + t * bg1;
        v.array() += bg_tex(r, col);
      }
      if (spec.kind == DomainKind::kShifted) {
        const Color inverted = Color::Ones() - v;
        v = Color(inverted(perm[0]), inverted(perm[1]), inverted(perm[2]));
      }
      for (int k = 0; k < 3; ++k) img.at(k, r, col) = quantize(v(k) + sigma * rng.normal());
    }
  }
  out.labeled.image = std::move(img);
  return out;
}

}  // namespace

GeneratedSample generate_sample(const DomainSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, index));
  const double total = static_cast<double>(spec.height) * spec.width;
  for (int attempt = 0; attempt < 200; ++attempt) {
    GeneratedSample sample = render_attempt(spec, rng);
    const double fraction = static_cast<double>(sample.labeled.mask.count()) / total;
    if (fraction >= 0.05 && fraction <= 0.60) return sample;
  }
  throw InvalidArgument("degenerate domain spec: could not place an object covering 5%-60% of the frame");
}

Dataset generate_dataset(const DomainSpec& spec, int count) {
  if (count < 1) throw InvalidArgument("generate_dataset: count must be >= 1");
  spec.validate();
  Dataset out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(generate_sample(spec, static_cast<std::uint64_t>(i)).labeled);
  return out;
}

}  // namespace clickforge
