#pragma once

#include "clickforge/losses.hpp"
#include "clickforge/netcore.hpp"
#include "clickforge/optim.hpp"
#include "clickforge/raster.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace clickforge {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double lr_bsm = 1e-3;
  double lr_adm = 5e-4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  /// Chance that a training sample gets one extra robot click computed from
  /// the current model's prediction.
  double iterative_click_prob = 0.3;
  bool flip_augment = true;
  LossConfig loss;

  void validate() const;
};

enum class TrainPhase { kBsm, kAdm };

struct EpochRecord {
  TrainPhase phase = TrainPhase::kBsm;
  int epoch = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
};

/// Per-epoch records; also streamed as tab-separated lines
/// "phase epoch mean_loss seconds" when a sink is given.
struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::ostream* sink = nullptr;
};

/// Phase 1: optimizes BSM tensors with the normalized focal loss against the
/// ground truth. ADM tensors keep their initialization.
ParamSet<Real> train_bsm(const Dataset& dataset, const TrainConfig& cfg, const ModelConfig& model,
                         TrainLog* log = nullptr);

/// Phase 2: BSM frozen; optimizes ADM tensors with the two-term supervision
/// (ground truth and binarized coarse mask).
ParamSet<Real> train_adm(const Dataset& dataset, const ParamSet<Real>& bsm_params, const TrainConfig& cfg,
                         const ModelConfig& model, TrainLog* log = nullptr);

}  // namespace clickforge
