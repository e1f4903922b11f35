#include "clickforge/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace clickforge {

const char* to_string(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::kOff: return "off";
    case AdaptMode::kLocal: return "local";
    case AdaptMode::kGlobal: return "global";
  }
  return "?";
}

AdaptMode parse_adapt_mode(const std::string& text) {
  if (text == "off") return AdaptMode::kOff;
  if (text == "local") return AdaptMode::kLocal;
  if (text == "global") return AdaptMode::kGlobal;
  throw InvalidArgument("unknown adaptation mode '" + text + "' (expected off, local or global)");
}

void AdaptConfig::validate() const {
  if (steps_per_click < 1) throw InvalidArgument("steps_per_click must be >= 1");
  if (!(lr_adm >= 0.0) || !(lr_bsm >= 0.0)) throw InvalidArgument("learning rates must be >= 0");
  if (history_limit < 0) throw InvalidArgument("history limit must be >= 0");
  loss.validate();
}

std::vector<std::string> AdaptConfig::warnings() const {
  std::vector<std::string> out;
  if (mode == AdaptMode::kGlobal && !bypass_adm && std::abs(lr_bsm - 0.01 * lr_adm) > 1e-9 * lr_adm)
    out.push_back("global mode with lr_bsm = " + std::to_string(lr_bsm) + " instead of 0.01 * lr_adm = " +
                  std::to_string(0.01 * lr_adm));
  return out;
}

Scope AdaptConfig::scope() const {
  if (mode == AdaptMode::kOff) return {};
  if (bypass_adm) return {Partition::kBsm};
  if (mode == AdaptMode::kLocal) return {Partition::kAdm};
  return {Partition::kBsm, Partition::kAdm};
}

LearningRates AdaptConfig::rates() const {
  if (mode == AdaptMode::kOff) return {0.0, 0.0};
  if (bypass_adm) return {lr_adm, 0.0};
  if (mode == AdaptMode::kLocal) return {0.0, lr_adm};
  return {lr_bsm, lr_adm};
}

void write_step_record(std::ostream& out, const StepRecord& rec) {
  out << rec.session_id << '\t' << rec.ordinal << '\t' << rec.step << '\t' << rec.sparse << '\t' << rec.dense
      << '\t' << rec.anchor << '\t' << rec.total << '\t' << (rec.aborted ? 1 : 0) << '\n';
}

namespace {

bool scope_has(const Scope& scope, Partition p) { return std::find(scope.begin(), scope.end(), p) != scope.end(); }

void assign_by_name(ParamSet<Real>& dst, const ParamSet<Real>& src) {
  for (std::size_t k = 0; k < src.size(); ++k) dst.mutable_at(src.names()[k]).values = src.at(k).values;
}

bool scoped_finite(const ParamSet<Real>& params, const Scope& scope) {
  for (std::size_t k = 0; k < params.size(); ++k)
    if (scope_has(scope, params.at(k).partition) && !params.at(k).values.allFinite()) return false;
  return true;
}

/// Recomputes whichever maps are stale for the current clicks and parameters.
void refresh_prediction(Session& s) {
  const FeatureMap<Real> x = assemble_input<Real>(s.image, s.guidance);
  if (!s.coarse_fresh) {
    s.coarse = bsm_forward(x, s.params, s.model).coarse;
    s.coarse_fresh = true;
  }
  if (!s.cfg.bypass_adm) s.refined = adm_forward(x, s.coarse, s.params, s.model).refined;
}

void log_step(Session& s, const StepRecord& rec) {
  s.steps.push_back(rec);
  if (s.step_log) write_step_record(*s.step_log, rec);
}

}  // namespace

Session begin_session(const RasterImage& image, const ParamSet<Real>& params, const ModelConfig& model,
                      const AdaptConfig& cfg, std::string id) {
  image.validate();
  cfg.validate();
  Session s;
  s.id = std::move(id);
  s.image = image;
  s.model = model;
  s.cfg = cfg;
  s.params = params;
  const Scope scope = cfg.scope();
  if (!scope.empty()) s.anchor = select(params, scope);
  s.optimizer = Optimizer<Real>(cfg.optimizer);
  s.guidance = render_disks({}, image.height, image.width);
  refresh_prediction(s);
  return s;
}

const ProbMap<Real>& session_output(const Session& session) {
  return session.cfg.bypass_adm ? session.coarse : session.refined;
}

StepRecord adaptation_step(Session& s) {
  if (s.clicks.empty()) throw StateError("adaptation step requires at least one click");
  const Scope scope = s.cfg.scope();
  if (scope.empty() || !s.anchor) throw StateError("adaptation is off for this session");
  const LossConfig& lc = s.cfg.loss;
  const bool bsm_in_scope = scope_has(scope, Partition::kBsm);

  StepRecord rec;
  rec.session_id = s.id;
  rec.ordinal = static_cast<int>(s.clicks.size());
  rec.step = static_cast<int>(std::count_if(s.steps.begin(), s.steps.end(),
                                            [&](const StepRecord& r) { return r.ordinal == rec.ordinal; })) + 1;

  const FeatureMap<Real> x = assemble_input<Real>(s.image, s.guidance);
  std::optional<BsmResult<Real>> bsm;
  if (bsm_in_scope || !s.coarse_fresh) {
    bsm = bsm_forward(x, s.params, s.model);
    s.coarse = bsm->coarse;
    s.coarse_fresh = true;
  }
  std::optional<AdmResult<Real>> adm;
  if (!s.cfg.bypass_adm) adm = adm_forward(x, s.coarse, s.params, s.model);
  const ProbMap<Real>& p = s.cfg.bypass_adm ? s.coarse : adm->refined;

  const LossGrad<Real> sparse = sparse_click_loss_grad(p, s.guidance);
  LossGrad<Real> dense{0, ProbMap<Real>::Zero(p.rows(), p.cols())};
  if (static_cast<int>(s.clicks.size()) >= lc.dense_activation_clicks)
    dense = normalized_focal_loss_grad(p, binarize(p, Real(0.5)), static_cast<Real>(lc.gamma),
                                       static_cast<Real>(lc.epsilon));
  const AnchorGrad<Real> anchor = anchor_regularizer_grad(s.params, *s.anchor, scope);
  rec.sparse = sparse.value;
  rec.dense = dense.value;
  rec.anchor = anchor.value;
  try {
    rec.total = total_adaptation_loss(rec.sparse, rec.dense, rec.anchor, lc);
  } catch (const NumericError&) {
    rec.total = std::nan("");
    rec.aborted = true;
    log_step(s, rec);
    throw;
  }

  const ProbMap<Real> dp = static_cast<Real>(lc.lambda_sparse) * sparse.grad +
                           static_cast<Real>(lc.lambda_dense) * dense.grad;
  ParamSet<Real> grads = s.params.zeros_like();
  if (s.cfg.bypass_adm) {
    backward_into(bsm->tape, dp, grads);
  } else {
    const ProbMap<Real> dcoarse = backward_into(adm->tape, dp, grads);
    if (bsm_in_scope) backward_into(bsm->tape, dcoarse, grads);
  }
  const auto lambda_anchor = static_cast<Real>(lc.lambda_anchor);
  for (std::size_t k = 0; k < grads.size(); ++k)
    grads.mutable_at(k).values += lambda_anchor * anchor.grad.at(k).values;

  const ParamSet<Real> before = select(s.params, scope);
  const Optimizer<Real> optimizer_before = s.optimizer;
  s.optimizer.step(s.params, grads, s.cfg.rates());
  if (!scoped_finite(s.params, scope)) {
    assign_by_name(s.params, before);
    s.optimizer = optimizer_before;
    rec.aborted = true;
    log_step(s, rec);
    throw NumericError("adaptation step produced non-finite parameters; step discarded");
  }
  if (bsm_in_scope) s.coarse_fresh = false;
  log_step(s, rec);
  return rec;
}

const ProbMap<Real>& process_click(Session& s, const Click& click) {
  require_in_bounds(click, s.image.height, s.image.width);
  const int expected = static_cast<int>(s.clicks.size()) + 1;
  if (click.ordinal != expected)
    throw InvalidArgument("click ordinal " + std::to_string(click.ordinal) + " out of order; expected " +
                          std::to_string(expected));
  if (s.cfg.history_limit > 0) {
    s.history.push_back({s.anchor ? select(s.params, s.cfg.scope()) : ParamSet<Real>(), s.optimizer, s.coarse,
                         s.refined, s.coarse_fresh});
    while (static_cast<int>(s.history.size()) > s.cfg.history_limit) s.history.pop_front();
  }
  s.clicks.push_back(click);
  s.guidance = render_disks(s.clicks, s.image.height, s.image.width);
  s.coarse_fresh = false;
  if (s.cfg.mode == AdaptMode::kOff) {
    refresh_prediction(s);
    return session_output(s);
  }
  const Scope scope = s.cfg.scope();
  const ParamSet<Real> start = select(s.params, scope);
  const Optimizer<Real> optimizer_start = s.optimizer;
  for (int k = 0; k < s.cfg.steps_per_click; ++k) {
    try {
      adaptation_step(s);
    } catch (const NumericError&) {
      break;
    }
  }
  refresh_prediction(s);
  if (!session_output(s).allFinite()) {
    // Finite parameters can still overflow the forward pass; drop this click's updates.
    assign_by_name(s.params, start);
    s.optimizer = optimizer_start;
    s.coarse_fresh = false;
    StepRecord rec;
    rec.session_id = s.id;
    rec.ordinal = static_cast<int>(s.clicks.size());
    rec.total = std::nan("");
    rec.aborted = true;
    log_step(s, rec);
    refresh_prediction(s);
  }
  return session_output(s);
}

void undo_click(Session& s) {
  if (s.clicks.empty()) throw StateError("nothing to undo: the session has no clicks");
  if (s.history.empty()) throw StateError("undo history exhausted");
  Session::Snapshot snap = std::move(s.history.back());
  s.history.pop_back();
  assign_by_name(s.params, snap.scoped);
  s.optimizer = std::move(snap.optimizer);
  s.coarse = std::move(snap.coarse);
  s.refined = std::move(snap.refined);
  s.coarse_fresh = snap.coarse_fresh;
  const int ordinal = s.clicks.back().ordinal;
  s.clicks.pop_back();
  s.steps.erase(std::remove_if(s.steps.begin(), s.steps.end(),
                               [&](const StepRecord& r) { return r.ordinal == ordinal; }),
                s.steps.end());
  s.guidance = render_disks(s.clicks, s.image.height, s.image.width);
}

SessionResult end_session(Session&& s) {
  if (s.clicks.empty()) throw StateError("cannot end a session with no clicks");
  return {binarize(session_output(s), Real(0.5)), std::move(s.params)};
}

}  // namespace clickforge
