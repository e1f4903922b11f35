#include "clickforge/trainer.hpp"

#include "clickforge/guidance.hpp"

#include <chrono>
#include <numeric>
#include <ostream>

namespace clickforge {

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (!(lr_bsm > 0.0) || !(lr_adm > 0.0)) throw InvalidArgument("learning rates must be > 0");
  if (!(iterative_click_prob >= 0.0 && iterative_click_prob <= 1.0))
    throw InvalidArgument("iterative click probability must lie in [0, 1]");
  loss.validate();
}

namespace {

LabeledImage flipped(const LabeledImage& item) {
  LabeledImage out;
  out.image = RasterImage(item.image.height, item.image.width);
  for (int r = 0; r < item.image.height; ++r)
    for (int c = 0; c < item.image.width; ++c)
      for (int ch = 0; ch < 3; ++ch) out.image.at(ch, r, c) = item.image.at(ch, r, item.image.width - 1 - c);
  out.mask = item.mask.rowwise().reverse();
  return out;
}

struct Example {
  LabeledImage item;
  GuidanceMaps guidance;
};

/// Clicks for one training example; with some probability one corrective
/// click is appended from the current model's prediction.
template <typename Predict>
Example make_example(const LabeledImage& source, const TrainConfig& cfg, std::uint64_t seed, Predict&& predict) {
  Rng rng(seed);
  Example ex;
  ex.item = cfg.flip_augment && rng.bernoulli(0.5) ? flipped(source) : source;
  const int h = ex.item.image.height;
  const int w = ex.item.image.width;
  std::vector<Click> clicks = sample_training_clicks(ex.item.mask, rng.next());
  if (rng.bernoulli(cfg.iterative_click_prob)) {
    const Mask pred = binarize(predict(ex.item.image, render_disks(clicks, h, w)), Real(0.5));
    if (!(pred == ex.item.mask).all()) {
      clicks.push_back(next_robot_click(pred, ex.item.mask, static_cast<int>(clicks.size()) + 1));
    }
  }
  ex.guidance = render_disks(clicks, h, w);
  return ex;
}

void emit(TrainLog* log, const EpochRecord& rec) {
  if (!log) return;
  log->epochs.push_back(rec);
  if (log->sink) {
    *log->sink << (rec.phase == TrainPhase::kBsm ? "bsm" : "adm") << '\t' << rec.epoch << '\t' << rec.mean_loss
               << '\t' << rec.seconds << '\n';
    log->sink->flush();
  }
}

/// Shared epoch/batch loop. `sample_loss` accumulates one example's gradient
/// into `grads` and returns its loss.
template <typename SampleLoss>
void run_phase(const Dataset& dataset, const TrainConfig& cfg, TrainPhase phase, ParamSet<Real>& params,
               const LearningRates& lr, TrainLog* log, SampleLoss&& sample_loss) {
  if (dataset.empty()) throw InvalidArgument("training dataset is empty");
  cfg.validate();
  Optimizer<Real> optimizer(cfg.optimizer);
  const std::uint64_t phase_seed = mix_seed(cfg.seed, phase == TrainPhase::kBsm ? 1 : 2);
  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(mix_seed(phase_seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t k = order.size(); k > 1; --k)
      std::swap(order[k - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(k) - 1))]);

    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size), ++step) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      ParamSet<Real> grads = params.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const std::uint64_t seed = mix_seed(phase_seed, (static_cast<std::uint64_t>(epoch) << 32) + order[k]);
        batch_loss += sample_loss(dataset[order[k]], seed, grads);
      }
      const auto diverged = [&](const char* what) {
        return NumericError(std::string("training diverged: non-finite ") + what + " in " +
                            (phase == TrainPhase::kBsm ? "bsm" : "adm") + " phase, epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step));
      };
      if (!std::isfinite(batch_loss)) throw diverged("loss");
      const auto scale = static_cast<Real>(1.0 / static_cast<double>(end - begin));
      for (std::size_t t = 0; t < grads.size(); ++t) grads.mutable_at(t).values *= scale;
      optimizer.step(params, grads, lr);
      for (std::size_t t = 0; t < params.size(); ++t)
        if (!params.at(t).values.allFinite()) throw diverged("parameters");
      loss_sum += batch_loss;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit(log, {phase, epoch, loss_sum / static_cast<double>(dataset.size()), seconds});
  }
}

}  // namespace

ParamSet<Real> train_bsm(const Dataset& dataset, const TrainConfig& cfg, const ModelConfig& model, TrainLog* log) {
  ParamSet<Real> params = init_params<Real>(model);
  const auto gamma = static_cast<Real>(cfg.loss.gamma);
  const auto eps = static_cast<Real>(cfg.loss.epsilon);
  auto predict = [&](const RasterImage& image, const GuidanceMaps& g) {
    return bsm_forward(assemble_input<Real>(image, g), params, model).coarse;
  };
  run_phase(dataset, cfg, TrainPhase::kBsm, params, {cfg.lr_bsm, 0.0}, log,
            [&](const LabeledImage& item, std::uint64_t seed, ParamSet<Real>& grads) {
              const Example ex = make_example(item, cfg, seed, predict);
              const auto bsm = bsm_forward(assemble_input<Real>(ex.item.image, ex.guidance), params, model);
              const LossGrad<Real> loss = normalized_focal_loss_grad(bsm.coarse, ex.item.mask, gamma, eps);
              backward_into(bsm.tape, loss.grad, grads);
              return static_cast<double>(loss.value);
            });
  return params;
}

ParamSet<Real> train_adm(const Dataset& dataset, const ParamSet<Real>& bsm_params, const TrainConfig& cfg,
                         const ModelConfig& model, TrainLog* log) {
  (void)partition(bsm_params);
  ParamSet<Real> params = bsm_params;
  auto predict = [&](const RasterImage& image, const GuidanceMaps& g) {
    return clickforge::predict(image, g, params, model).refined;
  };
  run_phase(dataset, cfg, TrainPhase::kAdm, params, {0.0, cfg.lr_adm}, log,
            [&](const LabeledImage& item, std::uint64_t seed, ParamSet<Real>& grads) {
              const Example ex = make_example(item, cfg, seed, predict);
              const FeatureMap<Real> x = assemble_input<Real>(ex.item.image, ex.guidance);
              const auto bsm = bsm_forward(x, params, model);
              const auto adm = adm_forward(x, bsm.coarse, params, model);
              const LossGrad<Real> loss = training_loss_grad(adm.refined, ex.item.mask, bsm.coarse, cfg.loss);
              backward_into(adm.tape, loss.grad, grads);
              return static_cast<double>(loss.value);
            });
  return params;
}

}  // namespace clickforge
