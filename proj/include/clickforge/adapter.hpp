#pragma once

#include "clickforge/guidance.hpp"
#include "clickforge/losses.hpp"
#include "clickforge/netcore.hpp"
#include "clickforge/optim.hpp"
#include "clickforge/raster.hpp"

#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace clickforge {

enum class AdaptMode { kOff, kLocal, kGlobal };

const char* to_string(AdaptMode mode);
AdaptMode parse_adapt_mode(const std::string& text);

struct AdaptConfig {
  AdaptMode mode = AdaptMode::kLocal;
  double lr_adm = 1e-4;
  double lr_bsm = 1e-6;
  int steps_per_click = 3;
  LossConfig loss;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  /// Skip the ADM head: the coarse map is the output, and adaptation (when on)
  /// updates the BSM at lr_adm.
  bool bypass_adm = false;
  /// Per-click parameter snapshots kept for undo.
  int history_limit = 50;

  void validate() const;
  /// Non-fatal configuration notes (e.g. a global-mode rate ratio other than 1%).
  std::vector<std::string> warnings() const;
  /// Partitions updated by adaptation steps; empty when mode is off.
  Scope scope() const;
  LearningRates rates() const;
};

/// Loss components of one adaptation step.
struct StepRecord {
  std::string session_id;
  int ordinal = 0;
  int step = 0;
  double sparse = 0.0;
  double dense = 0.0;
  double anchor = 0.0;
  double total = 0.0;
  /// The loss was non-finite; parameters were restored and no update applied.
  bool aborted = false;
};

/// Tab-separated: session ordinal step L_s L_d L_r L_t aborted.
void write_step_record(std::ostream& out, const StepRecord& rec);

struct Session {
  struct Snapshot {
    ParamSet<Real> scoped;
    Optimizer<Real> optimizer;
    ProbMap<Real> coarse;
    ProbMap<Real> refined;
    bool coarse_fresh = false;
  };

  std::string id;
  RasterImage image;
  ModelConfig model;
  AdaptConfig cfg;
  /// Working parameters; adapted in place when the mode is on.
  ParamSet<Real> params;
  /// θ′: deep copy of the scoped tensors at session start. Absent in mode off.
  std::optional<ParamSet<Real>> anchor;
  Optimizer<Real> optimizer;
  std::vector<Click> clicks;
  GuidanceMaps guidance;
  ProbMap<Real> coarse;
  ProbMap<Real> refined;
  /// Coarse map is current for the present clicks and BSM tensors.
  bool coarse_fresh = false;
  std::vector<StepRecord> steps;
  /// State before each click, newest last; at most cfg.history_limit entries.
  std::deque<Snapshot> history;
  std::ostream* step_log = nullptr;
};

/// Copies `params` into a new session and snapshots the adaptation scope as
/// the anchor. The zero-click prediction is computed immediately.
Session begin_session(const RasterImage& image, const ParamSet<Real>& params, const ModelConfig& model,
                      const AdaptConfig& cfg, std::string id = {});

/// Adds a click, adapts (mode on) and returns the refined map for the new
/// click set. Throws InvalidArgument on ordinal gaps and out-of-bounds clicks.
const ProbMap<Real>& process_click(Session& session, const Click& click);

/// One gradient step on λ1·L_s + λ2·L_d + λ3·L_r. A non-finite loss restores
/// the pre-step state and throws NumericError.
StepRecord adaptation_step(Session& session);

/// Removes the last click and restores the parameters, optimizer state and
/// maps from before it. Throws StateError when there is nothing to undo.
void undo_click(Session& session);

/// Current output: refined map, or the coarse map when the ADM is bypassed.
const ProbMap<Real>& session_output(const Session& session);

struct SessionResult {
  Mask mask;
  ParamSet<Real> params;
};

/// Final binarized mask and the session's parameters (unchanged in mode off).
SessionResult end_session(Session&& session);

}  // namespace clickforge
