#pragma once

#include "clickforge/guidance.hpp"
#include "clickforge/layers.hpp"
#include "clickforge/params.hpp"
#include "clickforge/raster.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace clickforge {

/// Network shape. The BSM is an encoder–decoder with skip connections; the
/// ADM is three atrous blocks (dilated 3×3 conv, ReLU, 1×1 mix) followed by a
/// plain 3×3 conv to one logit channel.
struct ModelConfig {
  /// One entry per encoder stage; each stage after the first is preceded by
  /// 2×2 pooling and the bottleneck adds one more.
  std::vector<int> encoder_widths{16, 24, 32, 48};
  int bottleneck_width = 48;
  std::vector<int> adm_widths{16, 16, 16};
  std::vector<int> adm_dilations{2, 4, 8};
  std::uint64_t init_seed = 7;

  static constexpr int kBsmInputChannels = 5;
  static constexpr int kAdmInputChannels = 6;

  int depth() const { return static_cast<int>(encoder_widths.size()); }

  void validate() const {
    if (encoder_widths.empty()) throw InvalidArgument("model needs at least one encoder stage");
    for (int w : encoder_widths)
      if (w < 4) throw InvalidArgument("encoder widths must be >= 4");
    if (bottleneck_width < 4) throw InvalidArgument("bottleneck width must be >= 4");
    if (adm_widths.size() != 3 || adm_dilations.size() != 3)
      throw InvalidArgument("the adaptation module has exactly three atrous blocks");
    for (int w : adm_widths)
      if (w < 4) throw InvalidArgument("adaptation widths must be >= 4");
    for (std::size_t k = 0; k < adm_dilations.size(); ++k) {
      if (adm_dilations[k] < 1) throw InvalidArgument("dilation rates must be >= 1");
      if (k > 0 && adm_dilations[k] <= adm_dilations[k - 1])
        throw InvalidArgument("dilation rates must be strictly increasing");
    }
  }
};

/// Probability clamp applied to every network output.
template <typename Scalar>
constexpr Scalar kProbEpsilon = Scalar(1e-7);

namespace detail {

inline void add_conv(ParamSet<double>& params, const std::string& name, int in, int out, int kernel,
                     Partition partition, Rng& rng) {
  auto& w = params.add(name + ".weight", {out, in, kernel, kernel}, partition);
  const double bound = std::sqrt(6.0 / (in * kernel * kernel));
  for (Eigen::Index k = 0; k < w.values.size(); ++k) w.values(k) = rng.uniform(-bound, bound);
  params.add(name + ".bias", {out}, partition);
}

}  // namespace detail

/// Fan-in scaled uniform weights (bound √(6/fan_in)), zero biases; a pure
/// function of cfg.init_seed.
template <typename Scalar>
ParamSet<Scalar> init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  ParamSet<double> p;
  const auto& ew = cfg.encoder_widths;
  detail::add_conv(p, "bsm.enc0a", ModelConfig::kBsmInputChannels, ew[0], 3, Partition::kBsm, rng);
  detail::add_conv(p, "bsm.enc0", ew[0], ew[0], 3, Partition::kBsm, rng);
  for (int l = 1; l < cfg.depth(); ++l)
    detail::add_conv(p, "bsm.enc" + std::to_string(l), ew[l - 1], ew[l], 3, Partition::kBsm, rng);
  detail::add_conv(p, "bsm.bottleneck", ew.back(), cfg.bottleneck_width, 3, Partition::kBsm, rng);
  int below = cfg.bottleneck_width;
  for (int l = cfg.depth() - 1; l >= 0; --l) {
    detail::add_conv(p, "bsm.dec" + std::to_string(l), below + ew[l], ew[l], 3, Partition::kBsm, rng);
    below = ew[l];
  }
  detail::add_conv(p, "bsm.head", ew[0], 1, 1, Partition::kBsm, rng);

  int in = ModelConfig::kAdmInputChannels;
  for (int b = 0; b < 3; ++b) {
    const std::string block = "adm.atrous" + std::to_string(b);
    detail::add_conv(p, block + ".dilated", in, cfg.adm_widths[b], 3, Partition::kAdm, rng);
    detail::add_conv(p, block + ".mix", cfg.adm_widths[b], cfg.adm_widths[b], 1, Partition::kAdm, rng);
    in = cfg.adm_widths[b];
  }
  detail::add_conv(p, "adm.out", in, 1, 3, Partition::kAdm, rng);
  if constexpr (std::is_same_v<Scalar, double>) return p;
  else return p.template cast<Scalar>();
}

/// RGB + positive disks + negative disks.
template <typename Scalar>
FeatureMap<Scalar> assemble_input(const RasterImage& image, const GuidanceMaps& guidance) {
  require_same_shape(guidance.positive, Mask(image.height, image.width), "assemble_input");
  require_same_shape(guidance.negative, Mask(image.height, image.width), "assemble_input");
  FeatureMap<Scalar> x(ModelConfig::kBsmInputChannels, image.height, image.width);
  x.data.topRows(3) = image.pixels.template cast<Scalar>();
  x.data.row(3) = Eigen::Map<const Eigen::Matrix<std::uint8_t, 1, Eigen::Dynamic>>(guidance.positive.data(),
                                                                                    guidance.positive.size())
                      .template cast<Scalar>();
  x.data.row(4) = Eigen::Map<const Eigen::Matrix<std::uint8_t, 1, Eigen::Dynamic>>(guidance.negative.data(),
                                                                                    guidance.negative.size())
                      .template cast<Scalar>();
  return x;
}

// ---------------------------------------------------------------------------
// Forward tapes

/// Logistic output with clamp to [ε, 1−ε]; records which pixels were clamped.
template <typename Scalar>
struct OutputCache {
  ProbMap<Scalar> prob;
  Plane<bool> unclamped;
};

template <typename Scalar>
OutputCache<Scalar> logistic_output(const FeatureMap<Scalar>& logits) {
  const Scalar eps = kProbEpsilon<Scalar>;
  const auto z = Eigen::Map<const Plane<Scalar>>(logits.data.data(), logits.height, logits.width);
  const Plane<Scalar> sig = Scalar(1) / (Scalar(1) + (-z).exp());
  OutputCache<Scalar> out;
  out.prob = sig.max(eps).min(Scalar(1) - eps);
  out.unclamped = (sig > eps) && (sig < Scalar(1) - eps);
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> logistic_backward(const OutputCache<Scalar>& out, const ProbMap<Scalar>& dprob) {
  require_same_shape(dprob, out.prob, "backward");
  const Plane<Scalar> dz = out.unclamped.select(dprob * out.prob * (Scalar(1) - out.prob), Scalar(0));
  FeatureMap<Scalar> g(1, static_cast<int>(dz.rows()), static_cast<int>(dz.cols()));
  g.data.row(0) = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(dz.data(), dz.size());
  return g;
}

template <typename Scalar>
struct TapeBinding {
  const ParamSet<Scalar>* params = nullptr;
  std::uint64_t id = 0;
  std::uint64_t generation = 0;

  void bind(const ParamSet<Scalar>& p) {
    params = &p;
    id = p.id();
    generation = p.generation();
  }
  /// The recorded parameter set; throws if it was replaced or mutated since
  /// the forward pass. The set must outlive the tape.
  const ParamSet<Scalar>& checked() const {
    if (params == nullptr || id != params->id())
      throw StateError("tape is not bound to a live parameter set");
    if (generation != params->generation())
      throw StateError("stale tape: parameters changed after the forward pass");
    return *params;
  }
};

template <typename Scalar>
struct BsmTape {
  TapeBinding<Scalar> binding;
  ModelConfig config;
  ConvCache<Scalar> enc0a;
  FeatureMap<Scalar> enc0a_out;
  std::vector<ConvCache<Scalar>> enc;
  std::vector<FeatureMap<Scalar>> skips;
  ConvCache<Scalar> bottleneck;
  FeatureMap<Scalar> bottleneck_out;
  std::vector<ConvCache<Scalar>> dec;       // indexed by level
  std::vector<FeatureMap<Scalar>> dec_out;  // indexed by level
  ConvCache<Scalar> head;
  OutputCache<Scalar> output;
};

template <typename Scalar>
struct AdmTape {
  TapeBinding<Scalar> binding;
  ModelConfig config;
  std::vector<ConvCache<Scalar>> dilated;
  std::vector<FeatureMap<Scalar>> activated;
  std::vector<ConvCache<Scalar>> mix;
  ConvCache<Scalar> out_conv;
  OutputCache<Scalar> output;
};

template <typename Scalar>
struct BsmResult {
  ProbMap<Scalar> coarse;
  BsmTape<Scalar> tape;
};

template <typename Scalar>
struct AdmResult {
  ProbMap<Scalar> refined;
  AdmTape<Scalar> tape;
};

// ---------------------------------------------------------------------------
// Forward passes

/// Coarse mask from the 5-channel input.
template <typename Scalar>
BsmResult<Scalar> bsm_forward(const FeatureMap<Scalar>& input, const ParamSet<Scalar>& params,
                              const ModelConfig& cfg) {
  if (input.channels() != ModelConfig::kBsmInputChannels)
    throw DimensionError("bsm_forward expects 5 input channels, got " + std::to_string(input.channels()));
  BsmResult<Scalar> r;
  auto& t = r.tape;
  t.binding.bind(params);
  t.config = cfg;
  const int depth = cfg.depth();
  t.enc.resize(depth);
  t.skips.resize(depth);
  t.dec.resize(depth);
  t.dec_out.resize(depth);

  t.enc0a_out = conv2d(params, "bsm.enc0a", input, 3, 1, t.enc0a);
  relu_inplace(t.enc0a_out);
  for (int l = 0; l < depth; ++l) {
    const FeatureMap<Scalar> in = l == 0 ? t.enc0a_out : avg_pool2(t.skips[l - 1]);
    t.skips[l] = conv2d(params, "bsm.enc" + std::to_string(l), in, 3, 1, t.enc[l]);
    relu_inplace(t.skips[l]);
  }
  t.bottleneck_out = conv2d(params, "bsm.bottleneck", avg_pool2(t.skips[depth - 1]), 3, 1, t.bottleneck);
  relu_inplace(t.bottleneck_out);
  const FeatureMap<Scalar>* below = &t.bottleneck_out;
  for (int l = depth - 1; l >= 0; --l) {
    const auto& skip = t.skips[l];
    const FeatureMap<Scalar> joined = concat(upsample2(*below, skip.height, skip.width), skip);
    t.dec_out[l] = conv2d(params, "bsm.dec" + std::to_string(l), joined, 3, 1, t.dec[l]);
    relu_inplace(t.dec_out[l]);
    below = &t.dec_out[l];
  }
  const FeatureMap<Scalar> logits = conv2d(params, "bsm.head", t.dec_out[0], 1, 1, t.head);
  t.output = logistic_output(logits);
  r.coarse = t.output.prob;
  return r;
}

/// Refined mask from the 5-channel input plus the coarse mask.
template <typename Scalar>
AdmResult<Scalar> adm_forward(const FeatureMap<Scalar>& input, const ProbMap<Scalar>& coarse,
                              const ParamSet<Scalar>& params, const ModelConfig& cfg) {
  if (input.channels() != ModelConfig::kBsmInputChannels)
    throw DimensionError("adm_forward expects 5 input channels, got " + std::to_string(input.channels()));
  if (coarse.rows() != input.height || coarse.cols() != input.width)
    throw DimensionError("adm_forward: coarse mask extent differs from input");
  AdmResult<Scalar> r;
  auto& t = r.tape;
  t.binding.bind(params);
  t.config = cfg;
  t.dilated.resize(3);
  t.activated.resize(3);
  t.mix.resize(3);

  FeatureMap<Scalar> x(ModelConfig::kAdmInputChannels, input.height, input.width);
  x.data.topRows(5) = input.data;
  x.data.row(5) = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(coarse.data(), coarse.size());
  for (int b = 0; b < 3; ++b) {
    const std::string block = "adm.atrous" + std::to_string(b);
    t.activated[b] = conv2d(params, block + ".dilated", x, 3, cfg.adm_dilations[b], t.dilated[b]);
    relu_inplace(t.activated[b]);
    x = conv2d(params, block + ".mix", t.activated[b], 1, 1, t.mix[b]);
  }
  const FeatureMap<Scalar> logits = conv2d(params, "adm.out", x, 3, 1, t.out_conv);
  t.output = logistic_output(logits);
  r.refined = t.output.prob;
  return r;
}

// ---------------------------------------------------------------------------
// Reverse mode

/// Adds d(loss)/d(BSM params) to `grads` given d(loss)/d(coarse).
template <typename Scalar>
void backward_into(const BsmTape<Scalar>& t, const ProbMap<Scalar>& dcoarse, ParamSet<Scalar>& grads) {
  const ParamSet<Scalar>& params = t.binding.checked();
  const int depth = t.config.depth();
  FeatureMap<Scalar> d = conv2d_backward(params, t.head, logistic_backward(t.output, dcoarse), grads, true);
  std::vector<FeatureMap<Scalar>> dskip(depth);
  for (int l = 0; l < depth; ++l) {
    relu_backward_inplace(t.dec_out[l], d);
    FeatureMap<Scalar> djoined = conv2d_backward(params, t.dec[l], d, grads, true);
    const int skip_channels = t.skips[l].channels();
    const int up_channels = djoined.channels() - skip_channels;
    dskip[l] = FeatureMap<Scalar>(djoined.height, djoined.width, djoined.data.bottomRows(skip_channels));
    const FeatureMap<Scalar> dup(djoined.height, djoined.width, djoined.data.topRows(up_channels));
    const FeatureMap<Scalar>& below = l + 1 < depth ? t.dec_out[l + 1] : t.bottleneck_out;
    d = upsample2_backward(dup, below.height, below.width);
  }
  relu_backward_inplace(t.bottleneck_out, d);
  d = conv2d_backward(params, t.bottleneck, d, grads, true);
  for (int l = depth - 1; l >= 0; --l) {
    FeatureMap<Scalar> ds = avg_pool2_backward(d, t.skips[l].height, t.skips[l].width);
    ds.data += dskip[l].data;
    relu_backward_inplace(t.skips[l], ds);
    d = conv2d_backward(params, t.enc[l], ds, grads, true);
  }
  relu_backward_inplace(t.enc0a_out, d);
  conv2d_backward(params, t.enc0a, d, grads, false);
}

/// Adds d(loss)/d(ADM params) to `grads`; returns d(loss)/d(coarse).
template <typename Scalar>
ProbMap<Scalar> backward_into(const AdmTape<Scalar>& t, const ProbMap<Scalar>& drefined, ParamSet<Scalar>& grads) {
  const ParamSet<Scalar>& params = t.binding.checked();
  FeatureMap<Scalar> d = conv2d_backward(params, t.out_conv, logistic_backward(t.output, drefined), grads, true);
  for (int b = 2; b >= 0; --b) {
    d = conv2d_backward(params, t.mix[b], d, grads, true);
    relu_backward_inplace(t.activated[b], d);
    d = conv2d_backward(params, t.dilated[b], d, grads, true);
  }
  ProbMap<Scalar> dcoarse(d.height, d.width);
  Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(dcoarse.data(), dcoarse.size()) = d.data.row(5);
  return dcoarse;
}

/// One gradient tensor per parameter tensor; only BSM entries are nonzero.
template <typename Scalar>
ParamSet<Scalar> backward(const BsmTape<Scalar>& tape, const ProbMap<Scalar>& dcoarse) {
  ParamSet<Scalar> grads = tape.binding.checked().zeros_like();
  backward_into(tape, dcoarse, grads);
  return grads;
}

template <typename Scalar>
struct AdmGradients {
  ParamSet<Scalar> grads;
  ProbMap<Scalar> dcoarse;
};

template <typename Scalar>
AdmGradients<Scalar> backward(const AdmTape<Scalar>& tape, const ProbMap<Scalar>& drefined) {
  AdmGradients<Scalar> out{tape.binding.checked().zeros_like(), {}};
  out.dcoarse = backward_into(tape, drefined, out.grads);
  return out;
}

/// Gradient of a loss on the refined map w.r.t. all parameters, chaining
/// through the coarse-mask channel into the BSM.
template <typename Scalar>
ParamSet<Scalar> backward_composed(const BsmTape<Scalar>& bsm_tape, const AdmTape<Scalar>& adm_tape,
                                   const ProbMap<Scalar>& drefined) {
  ParamSet<Scalar> grads = adm_tape.binding.checked().zeros_like();
  const ProbMap<Scalar> dcoarse = backward_into(adm_tape, drefined, grads);
  backward_into(bsm_tape, dcoarse, grads);
  return grads;
}

/// Full inference: coarse and refined maps for an image and its clicks.
template <typename Scalar>
struct Prediction {
  ProbMap<Scalar> coarse;
  ProbMap<Scalar> refined;
};

template <typename Scalar>
Prediction<Scalar> predict(const RasterImage& image, const GuidanceMaps& guidance, const ParamSet<Scalar>& params,
                           const ModelConfig& cfg) {
  const FeatureMap<Scalar> x = assemble_input<Scalar>(image, guidance);
  auto bsm = bsm_forward(x, params, cfg);
  auto adm = adm_forward(x, bsm.coarse, params, cfg);
  return {std::move(bsm.coarse), std::move(adm.refined)};
}

}  // namespace clickforge
