#pragma once

#include "clickforge/guidance.hpp"
#include "clickforge/params.hpp"
#include "clickforge/raster.hpp"

#include <cmath>
#include <initializer_list>

namespace clickforge {

struct LossConfig {
  double gamma = 2.0;
  double epsilon = 1e-7;
  double lambda_sparse = 1.0;   // λ1
  double lambda_dense = 10.0;   // λ2
  double lambda_anchor = 5e-3;  // λ3
  double gt_weight = 1.0;
  double coarse_weight = 0.4;
  /// Dense pseudo-label loss is active once a session has this many clicks.
  int dense_activation_clicks = 4;

  void validate() const {
    if (!(gamma >= 0.0)) throw InvalidArgument("focal exponent must be >= 0");
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidArgument("epsilon must lie in (0, 0.5)");
    if (!(lambda_sparse >= 0.0 && lambda_dense >= 0.0 && lambda_anchor >= 0.0))
      throw InvalidArgument("loss weights must be >= 0");
    if (!(gt_weight >= 0.0 && coarse_weight >= 0.0)) throw InvalidArgument("supervision weights must be >= 0");
  }
};

/// A scalar loss and its gradient with respect to the probability map.
template <typename Scalar>
struct LossGrad {
  Scalar value = 0;
  ProbMap<Scalar> grad;
};

// ---------------------------------------------------------------------------
// Normalized focal loss
//
//   L = Σ (1−q)^γ · (−log q) / Σ (1−q)^γ,   q = p where y = 1, 1 − p where y = 0
//
// p is clamped to [ε, 1−ε] first. Both numerator and normalizer are
// differentiated; clamped pixels receive zero gradient.

template <typename Scalar>
LossGrad<Scalar> normalized_focal_loss_grad(const ProbMap<Scalar>& p, const Mask& y, Scalar gamma,
                                            Scalar epsilon = Scalar(1e-7)) {
  require_same_shape(p, y, "normalized_focal_loss");
  const Plane<Scalar> pc = p.max(epsilon).min(Scalar(1) - epsilon);
  const Plane<bool> positive = y != 0;
  const Plane<Scalar> q = positive.select(pc, Scalar(1) - pc);
  const Plane<Scalar> one_minus_q = Scalar(1) - q;
  const Plane<Scalar> weight = one_minus_q.pow(gamma);
  const Plane<Scalar> ce = -q.log();
  const Scalar norm = weight.sum();
  LossGrad<Scalar> out;
  if (!(norm > Scalar(0))) {
    out.grad = ProbMap<Scalar>::Zero(p.rows(), p.cols());
    return out;
  }
  out.value = (weight * ce).sum() / norm;
  // dw/dq = −γ(1−q)^(γ−1); written as −γ·w/(1−q) to stay finite for γ < 1.
  const Plane<Scalar> dweight = gamma == Scalar(0) ? Plane<Scalar>::Zero(p.rows(), p.cols()).eval()
                                                   : (-gamma * weight / one_minus_q).eval();
  const Plane<Scalar> dq = (dweight * (ce - out.value) - weight / q) / norm;
  const Plane<bool> free = (p > epsilon) && (p < Scalar(1) - epsilon);
  out.grad = free.select(positive.select(dq, -dq), Scalar(0));
  return out;
}

template <typename Scalar>
Scalar normalized_focal_loss(const ProbMap<Scalar>& p, const Mask& y, Scalar gamma, Scalar epsilon = Scalar(1e-7)) {
  return normalized_focal_loss_grad(p, y, gamma, epsilon).value;
}

// ---------------------------------------------------------------------------
// Sparse click loss
//
//   L = Σ[(1−p)·c_f]² / Σ1[c_f=1] + Σ[p·c_b]² / Σ1[c_b=1]
//
// A polarity with no disk pixels contributes 0.

template <typename Scalar>
LossGrad<Scalar> sparse_click_loss_grad(const ProbMap<Scalar>& p, const GuidanceMaps& g) {
  require_same_shape(p, g.positive, "sparse_click_loss");
  require_same_shape(p, g.negative, "sparse_click_loss");
  const Plane<Scalar> cf = g.positive.template cast<Scalar>();
  const Plane<Scalar> cb = g.negative.template cast<Scalar>();
  const auto nf = static_cast<Scalar>((g.positive != 0).count());
  const auto nb = static_cast<Scalar>((g.negative != 0).count());
  LossGrad<Scalar> out;
  out.grad = ProbMap<Scalar>::Zero(p.rows(), p.cols());
  if (nf > 0) {
    const Plane<Scalar> miss = (Scalar(1) - p) * cf;
    out.value += miss.square().sum() / nf;
    out.grad -= Scalar(2) * miss * cf / nf;
  }
  if (nb > 0) {
    const Plane<Scalar> hit = p * cb;
    out.value += hit.square().sum() / nb;
    out.grad += Scalar(2) * hit * cb / nb;
  }
  return out;
}

template <typename Scalar>
Scalar sparse_click_loss(const ProbMap<Scalar>& p, const GuidanceMaps& g) {
  return sparse_click_loss_grad(p, g).value;
}

// ---------------------------------------------------------------------------
// Anchor regularizer: mean of (θ − θ′)² over the tensors whose tag is in scope.

template <typename Scalar>
struct AnchorGrad {
  Scalar value = 0;
  /// Same layout as θ; zero outside the scope.
  ParamSet<Scalar> grad;
};

namespace detail {
inline bool in_scope(Partition p, const Scope& scope) {
  for (Partition s : scope)
    if (s == p) return true;
  return false;
}
}  // namespace detail

/// θ′ may hold only the scoped tensors (an anchor snapshot) or the full set.
template <typename Scalar>
AnchorGrad<Scalar> anchor_regularizer_grad(const ParamSet<Scalar>& theta, const ParamSet<Scalar>& anchor,
                                           const Scope& scope) {
  AnchorGrad<Scalar> out{0, theta.zeros_like()};
  Eigen::Index count = 0;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const auto& t = theta.at(k);
    if (!detail::in_scope(t.partition, scope)) continue;
    const auto& name = theta.names()[k];
    if (!anchor.contains(name)) throw InvalidArgument("anchor is missing tensor '" + name + "'");
    const auto& a = anchor.at(name);
    if (a.shape != t.shape || a.partition != t.partition)
      throw DimensionError("anchor tensor '" + name + "' differs structurally from the live tensor");
    count += t.size();
  }
  if (count == 0) return out;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const auto& t = theta.at(k);
    if (!detail::in_scope(t.partition, scope)) continue;
    const auto diff = (t.values - anchor.at(theta.names()[k]).values).array();
    out.value += diff.square().sum() * inv;
    out.grad.mutable_at(k).values = (Scalar(2) * inv * diff).matrix();
  }
  return out;
}

template <typename Scalar>
Scalar anchor_regularizer(const ParamSet<Scalar>& theta, const ParamSet<Scalar>& anchor,
                          const Scope& scope) {
  return anchor_regularizer_grad(theta, anchor, scope).value;
}

// ---------------------------------------------------------------------------

/// λ1·L_s + λ2·L_d + λ3·L_r.
inline double total_adaptation_loss(double sparse, double dense, double anchor, const LossConfig& cfg) {
  if (!std::isfinite(sparse) || !std::isfinite(dense) || !std::isfinite(anchor))
    throw NumericError("non-finite loss component");
  return cfg.lambda_sparse * sparse + cfg.lambda_dense * dense + cfg.lambda_anchor * anchor;
}

/// gt_weight·NFL(p, gt) + coarse_weight·NFL(p, binarize(coarse)).
template <typename Scalar>
LossGrad<Scalar> training_loss_grad(const ProbMap<Scalar>& p_adm, const Mask& gt, const ProbMap<Scalar>& coarse,
                                    const LossConfig& cfg) {
  require_same_shape(p_adm, coarse, "training_loss");
  const auto gamma = static_cast<Scalar>(cfg.gamma);
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  LossGrad<Scalar> gt_term = normalized_focal_loss_grad(p_adm, gt, gamma, eps);
  LossGrad<Scalar> out;
  out.value = static_cast<Scalar>(cfg.gt_weight) * gt_term.value;
  out.grad = static_cast<Scalar>(cfg.gt_weight) * gt_term.grad;
  if (cfg.coarse_weight != 0.0) {
    const LossGrad<Scalar> c = normalized_focal_loss_grad(p_adm, binarize(coarse, Scalar(0.5)), gamma, eps);
    out.value += static_cast<Scalar>(cfg.coarse_weight) * c.value;
    out.grad += static_cast<Scalar>(cfg.coarse_weight) * c.grad;
  }
  return out;
}

template <typename Scalar>
Scalar training_loss(const ProbMap<Scalar>& p_adm, const Mask& gt, const ProbMap<Scalar>& coarse,
                     const LossConfig& cfg) {
  return training_loss_grad(p_adm, gt, coarse, cfg).value;
}

}  // namespace clickforge
