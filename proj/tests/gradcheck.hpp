#pragma once

// Central-difference gradient checks shared by the unit tests and the
// acceptance binary. Everything runs in double.

#include "clickforge/losses.hpp"
#include "clickforge/netcore.hpp"
#include "support.hpp"

#include <string>

namespace cftest {

constexpr double kFdStep = 1e-4;
constexpr double kGradTolerance = 1e-3;

/// A loss value plus the on/off pattern of every ReLU and output clamp that
/// produced it. Two evaluations with equal patterns lie on the same linear
/// piece of the network, so a central difference between them is valid.
struct Eval {
  double value = 0.0;
  std::vector<bool> pattern;
};

struct GradCheck {
  double max_rel = 0.0;
  long coordinates = 0;
  /// Coordinates whose ±kFdStep stencil crossed a kink; re-checked with the
  /// largest step in kFineSteps whose stencil does not.
  long kinks = 0;
  /// Kinks no fine step could avoid; counted as failures.
  long unresolved = 0;
  std::string worst;

  void record(double analytic, double numeric, const std::string& where) {
    ++coordinates;
    const double e = relative_error(analytic, numeric);
    if (e > max_rel) {
      max_rel = e;
      worst = where + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
    }
  }

  bool passed() const { return max_rel <= kGradTolerance && unresolved == 0; }

  template <typename F>
  void probe(double& x, F&& f, double analytic, const std::string& where) {
    const double saved = x;
    const Eval base = f();
    double numeric = 0.0;
    bool resolved = false;
    bool first = true;
    for (double step : {kFdStep, 1e-6, 1e-8}) {
      x = saved + step;
      const Eval up = f();
      x = saved - step;
      const Eval down = f();
      x = saved;
      if (up.pattern == base.pattern && down.pattern == base.pattern) {
        numeric = (up.value - down.value) / (2 * step);
        resolved = true;
        break;
      }
      if (first) ++kinks;
      first = false;
    }
    if (!resolved) {
      ++unresolved;
      worst = where + " (kink at the evaluation point)";
      return;
    }
    record(analytic, numeric, where);
  }
};

template <typename Scalar>
void append_pattern(std::vector<bool>& out, const FeatureMap<Scalar>& activated) {
  for (Eigen::Index k = 0; k < activated.data.size(); ++k) out.push_back(activated.data.data()[k] > 0);
}

template <typename Scalar>
void append_pattern(std::vector<bool>& out, const Plane<bool>& unclamped) {
  for (Eigen::Index k = 0; k < unclamped.size(); ++k) out.push_back(unclamped.data()[k]);
}

template <typename Scalar>
std::vector<bool> kink_pattern(const BsmTape<Scalar>& t) {
  std::vector<bool> out;
  append_pattern(out, t.enc0a_out);
  for (const auto& m : t.skips) append_pattern(out, m);
  append_pattern(out, t.bottleneck_out);
  for (const auto& m : t.dec_out) append_pattern(out, m);
  append_pattern<Scalar>(out, t.output.unclamped);
  return out;
}

template <typename Scalar>
std::vector<bool> kink_pattern(const AdmTape<Scalar>& t) {
  std::vector<bool> out;
  for (const auto& m : t.activated) append_pattern(out, m);
  append_pattern<Scalar>(out, t.output.unclamped);
  return out;
}

/// Three-stage encoder so that an 8×8 input pools down to 1×1.
inline ModelConfig gradcheck_model(std::uint64_t seed) {
  ModelConfig m;
  m.encoder_widths = {4, 6, 8};
  m.bottleneck_width = 8;
  m.adm_widths = {4, 4, 4};
  m.adm_dilations = {1, 2, 4};
  m.init_seed = seed;
  return m;
}

inline ProbMap<double> random_prob(int h, int w, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  ProbMap<double> p(h, w);
  for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = u(gen);
  return p;
}

inline std::vector<Click> random_clicks(int h, int w, int n, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> rd(0, h - 1), cd(0, w - 1);
  std::vector<Click> clicks;
  for (int k = 0; k < n; ++k)
    clicks.push_back({rd(gen), cd(gen), k % 2 == 0 ? Polarity::kPositive : Polarity::kNegative, k + 1});
  return clicks;
}

template <typename LossFn>
GradCheck check_map_loss(ProbMap<double> p, LossFn&& loss) {
  GradCheck out;
  const ProbMap<double> grad = loss(p).grad;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    out.probe(p.data()[k], [&] { return Eval{static_cast<double>(loss(p).value), {}}; }, grad.data()[k],
              "pixel " + std::to_string(k));
  }
  return out;
}

inline GradCheck check_nfl(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const ProbMap<double> p = random_prob(8, 8, gen);
  const Mask y = random_mask(8, 8, 0.5, gen);
  const double gamma = std::uniform_real_distribution<double>(0.0, 3.0)(gen);
  return check_map_loss(p, [&](const ProbMap<double>& q) { return normalized_focal_loss_grad(q, y, gamma); });
}

inline GradCheck check_sparse(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const ProbMap<double> p = random_prob(8, 8, gen);
  const GuidanceMaps g = render_disks(random_clicks(8, 8, 3, gen), 8, 8, 2);
  return check_map_loss(p, [&](const ProbMap<double>& q) { return sparse_click_loss_grad(q, g); });
}

inline ParamSet<double> jitter(ParamSet<double> params, double scale, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& v = params.mutable_at(k).values;
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += n(gen);
  }
  return params;
}

inline GradCheck check_anchor(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const ModelConfig model = gradcheck_model(seed);
  const Scope scope = seed % 2 ? Scope{Partition::kAdm} : Scope{Partition::kAdm, Partition::kBsm};
  const ParamSet<double> anchor = select(init_params<double>(model), scope);
  ParamSet<double> theta = jitter(init_params<double>(model), 0.05, gen);
  const ParamSet<double> grad = anchor_regularizer_grad(theta, anchor, scope).grad;
  GradCheck out;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    for (Eigen::Index i = 0; i < theta.at(t).size(); i += 7) {
      double& x = theta.mutable_at(t).values(i);
      out.probe(x, [&] { return Eval{anchor_regularizer(theta, anchor, scope), {}}; }, grad.at(t).values(i),
                theta.names()[t] + "[" + std::to_string(i) + "]");
    }
  }
  return out;
}

/// λ1·L_s + λ2·L_d + λ3·L_r on the refined map, differentiated through
/// adm_forward and (global scope) bsm_forward. The dense pseudo-label is
/// taken from the unperturbed forward pass and held fixed.
inline GradCheck check_total(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const ModelConfig model = gradcheck_model(seed);
  const RasterImage image = random_image(8, 8, gen);
  const GuidanceMaps g = render_disks(random_clicks(8, 8, 4, gen), 8, 8, 2);
  const FeatureMap<double> x = assemble_input<double>(image, g);
  const LossConfig cfg;
  const Scope scope{Partition::kAdm, Partition::kBsm};
  const ParamSet<double> anchor = select(init_params<double>(model), scope);
  ParamSet<double> theta = jitter(init_params<double>(model), 0.02, gen);

  const Mask pseudo = binarize(predict(image, g, theta, model).refined, 0.5);
  const auto gamma = cfg.gamma;
  auto value = [&] {
    const auto bsm = bsm_forward(x, theta, model);
    const auto adm = adm_forward(x, bsm.coarse, theta, model);
    const auto& p = adm.refined;
    Eval e;
    e.value = cfg.lambda_sparse * sparse_click_loss(p, g) + cfg.lambda_dense * normalized_focal_loss(p, pseudo, gamma) +
              cfg.lambda_anchor * anchor_regularizer(theta, anchor, scope);
    e.pattern = kink_pattern(bsm.tape);
    const auto tail = kink_pattern(adm.tape);
    e.pattern.insert(e.pattern.end(), tail.begin(), tail.end());
    return e;
  };

  ParamSet<double> grad;
  {
    auto bsm = bsm_forward(x, theta, model);
    auto adm = adm_forward(x, bsm.coarse, theta, model);
    const auto& p = adm.refined;
    const ProbMap<double> dp = cfg.lambda_sparse * sparse_click_loss_grad(p, g).grad +
                               cfg.lambda_dense * normalized_focal_loss_grad(p, pseudo, gamma).grad;
    grad = backward_composed(bsm.tape, adm.tape, dp);
    const auto reg = anchor_regularizer_grad(theta, anchor, scope);
    for (std::size_t t = 0; t < grad.size(); ++t)
      grad.mutable_at(t).values += cfg.lambda_anchor * reg.grad.at(t).values;
  }

  GradCheck out;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    const bool adm = theta.at(t).partition == Partition::kAdm;
    // Every ADM coordinate; a stride through the BSM keeps the runtime small.
    const Eigen::Index stride = adm ? 1 : 11;
    for (Eigen::Index i = 0; i < theta.at(t).size(); i += stride) {
      double& v = theta.mutable_at(t).values(i);
      out.probe(v, value, grad.at(t).values(i), theta.names()[t] + "[" + std::to_string(i) + "]");
    }
  }
  return out;
}

}  // namespace cftest
