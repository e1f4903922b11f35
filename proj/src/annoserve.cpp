#include "clickforge/annoserve.hpp"

#include "clickforge/checkpoint.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>

namespace clickforge {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RLE

RleMask rle_encode(const Mask& mask) {
  RleMask out;
  out.height = static_cast<int>(mask.rows());
  out.width = static_cast<int>(mask.cols());
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (Eigen::Index k = 0; k < mask.size(); ++k) {
    const std::uint8_t v = mask.data()[k] ? 1 : 0;
    if (v != current) {
      out.counts.push_back(run);
      current = v;
      run = 0;
    }
    ++run;
  }
  out.counts.push_back(run);
  return out;
}

Mask rle_decode(const RleMask& rle) {
  if (rle.height < 0 || rle.width < 0) throw InvalidArgument("RLE mask has negative dimensions");
  Mask mask(rle.height, rle.width);
  std::int64_t pos = 0;
  std::uint8_t value = 0;
  for (std::int64_t run : rle.counts) {
    if (run < 0 || pos + run > mask.size()) throw InvalidArgument("RLE runs exceed the mask size");
    std::fill(mask.data() + pos, mask.data() + pos + run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != mask.size()) throw InvalidArgument("RLE runs do not cover the mask");
  return mask;
}

json to_json(const RleMask& rle) { return {{"height", rle.height}, {"width", rle.width}, {"counts", rle.counts}}; }

RleMask rle_from_json(const json& j) {
  RleMask rle;
  rle.height = j.at("height").get<int>();
  rle.width = j.at("width").get<int>();
  rle.counts = j.at("counts").get<std::vector<std::int64_t>>();
  return rle;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw InvalidArgument("setting '" + key + "': not a number: '" + value + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size() || v < INT32_MIN || v > INT32_MAX)
    throw InvalidArgument("setting '" + key + "': not an integer: '" + value + "'");
  return static_cast<int>(v);
}

}  // namespace

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = {
      "checkpoint",    "state_dir",       "host",          "port",
      "mode",          "lr_adm",          "lr_bsm",        "steps_per_click",
      "optimizer",     "gamma",           "lambda_sparse", "lambda_dense",
      "lambda_anchor", "dense_activation_clicks", "history_limit", "session_timeout_seconds",
      "retry_after_seconds", "step_log"};
  return keys;
}

void apply_setting(ServiceConfig& cfg, const std::string& key, const std::string& value) {
  auto& a = cfg.adapt;
  if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "state_dir") cfg.state_dir = value;
  else if (key == "host") cfg.host = value;
  else if (key == "port") cfg.port = parse_int(key, value);
  else if (key == "mode") a.mode = parse_adapt_mode(value);
  else if (key == "lr_adm") a.lr_adm = parse_double(key, value);
  else if (key == "lr_bsm") a.lr_bsm = parse_double(key, value);
  else if (key == "steps_per_click") a.steps_per_click = parse_int(key, value);
  else if (key == "optimizer") a.optimizer = parse_optimizer_kind(value);
  else if (key == "gamma") a.loss.gamma = parse_double(key, value);
  else if (key == "lambda_sparse") a.loss.lambda_sparse = parse_double(key, value);
  else if (key == "lambda_dense") a.loss.lambda_dense = parse_double(key, value);
  else if (key == "lambda_anchor") a.loss.lambda_anchor = parse_double(key, value);
  else if (key == "dense_activation_clicks") a.loss.dense_activation_clicks = parse_int(key, value);
  else if (key == "history_limit") a.history_limit = parse_int(key, value);
  else if (key == "session_timeout_seconds") cfg.session_timeout_seconds = parse_int(key, value);
  else if (key == "retry_after_seconds") cfg.retry_after_seconds = parse_int(key, value);
  else if (key == "step_log") cfg.step_log = value;
  else throw InvalidArgument("unknown setting '" + key + "'");
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw InvalidArgument("port must lie in [0, 65535]");
  if (session_timeout_seconds < 0 || retry_after_seconds < 0) throw InvalidArgument("timeouts must be >= 0");
  adapt.validate();
}

ServiceConfig load_service_config(const std::optional<fs::path>& file, const EnvLookup& env) {
  ServiceConfig cfg;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw InvalidArgument("cannot read config file " + file->string());
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      const std::string body = trim(line.substr(0, line.find('#')));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw InvalidArgument(file->string() + ":" + std::to_string(number) + ": expected key = value");
      apply_setting(cfg, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
  }
  if (env) {
    for (const auto& key : setting_keys()) {
      std::string name = "CLICKFORGE_" + key;
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
      if (const char* v = env(name.c_str())) apply_setting(cfg, key, v);
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Errors

ErrorInfo describe_error(const std::exception& e) {
  if (const auto* s = dynamic_cast<const ServiceError*>(&e)) return {s->status(), s->code(), s->what()};
  if (dynamic_cast<const DimensionError*>(&e)) return {400, "dimension_mismatch", e.what()};
  if (dynamic_cast<const FormatError*>(&e)) return {400, "invalid_format", e.what()};
  if (dynamic_cast<const InvalidArgument*>(&e)) return {400, "invalid_argument", e.what()};
  if (dynamic_cast<const StateError*>(&e)) return {409, "invalid_state", e.what()};
  if (dynamic_cast<const json::exception*>(&e)) return {400, "invalid_json", e.what()};
  return {500, "internal", e.what()};
}

json error_body(const ErrorInfo& info) { return {{"error", {{"code", info.code}, {"message", info.message}}}}; }

// ---------------------------------------------------------------------------
// Command queue

CommandQueue::CommandQueue() : worker_([this] { loop(); }) {}

CommandQueue::~CommandQueue() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  ready_.notify_all();
  worker_.join();
}

void CommandQueue::post(std::function<void()> job) {
  {
    std::lock_guard lock(mutex_);
    jobs_.push_back(std::move(job));
  }
  ready_.notify_one();
}

void CommandQueue::loop() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mutex_);
      ready_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job();
  }
}

// ---------------------------------------------------------------------------
// Service

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return s.str();
}

std::string version_file_name(int version) {
  std::ostringstream s;
  s << 'v' << std::setw(6) << std::setfill('0') << version << ".cfck";
  return s.str();
}

/// Versions present in dir, highest first.
std::vector<std::pair<int, fs::path>> list_versions(const fs::path& dir) {
  std::vector<std::pair<int, fs::path>> out;
  if (!fs::is_directory(dir)) return out;
  static const std::regex pattern(R"(v(\d{6,})\.cfck)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) out.emplace_back(std::stoi(m[1]), entry.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return out;
}

json confidence_summary(const ProbMap<Real>& p) {
  return {{"mean", static_cast<double>(p.mean())},
          {"min", static_cast<double>(p.minCoeff())},
          {"max", static_cast<double>(p.maxCoeff())},
          {"uncertain_fraction",
           static_cast<double>(((p > Real(0.25)) && (p < Real(0.75))).count()) / static_cast<double>(p.size())}};
}

json step_json(const StepRecord& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"step", r.step},          {"sparse", num(r.sparse)}, {"dense", num(r.dense)},
          {"anchor", num(r.anchor)}, {"total", num(r.total)},   {"aborted", r.aborted}};
}

Click parse_click(const json& body) {
  if (!body.is_object()) throw ServiceError(400, "invalid_click", "click body must be a JSON object");
  for (const char* field : {"row", "col", "polarity", "ordinal"})
    if (!body.contains(field)) throw ServiceError(400, "invalid_click", std::string("missing field '") + field + "'");
  for (const char* field : {"row", "col", "ordinal"})
    if (!body.at(field).is_number_integer())
      throw ServiceError(400, "invalid_click", std::string("field '") + field + "' must be an integer");
  if (!body.at("polarity").is_string())
    throw ServiceError(400, "invalid_click", "field 'polarity' must be \"positive\" or \"negative\"");
  Click c;
  c.row = body.at("row").get<int>();
  c.col = body.at("col").get<int>();
  c.ordinal = body.at("ordinal").get<int>();
  try {
    c.polarity = parse_polarity(body.at("polarity").get<std::string>());
  } catch (const InvalidArgument& e) {
    throw ServiceError(400, "invalid_click", e.what());
  }
  return c;
}

json click_json(const Click& c) {
  return {{"row", c.row}, {"col", c.col}, {"polarity", to_string(c.polarity)}, {"ordinal", c.ordinal}};
}

std::string random_token() {
  std::random_device rd;
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << rd() << std::setw(8) << rd();
  return s.str();
}

}  // namespace

struct AnnotationService::Live {
  std::string id;
  AdaptMode mode = AdaptMode::kOff;
  std::optional<Session> session;
  std::optional<Mask> gt;
  std::string created_at;
  std::string finished_at;
  bool finished = false;
  int base_version = 0;
  std::optional<int> result_version;
  std::string mask_file;
  Mask final_mask;
  ProbMap<Real> final_output;
  std::vector<Click> clicks;
  std::chrono::steady_clock::time_point last_activity;
};

AnnotationService::AnnotationService(ServiceConfig cfg, ModelConfig model)
    : cfg_(std::move(cfg)), model_(std::move(model)) {
  cfg_.validate();
  const fs::path dir = cfg_.state_dir / "checkpoints";
  fs::create_directories(dir);
  fs::create_directories(cfg_.state_dir / "masks");
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".tmp") fs::remove(entry.path());

  bool loaded = false;
  for (const auto& [version, path] : list_versions(dir)) {
    try {
      params_ = load_checkpoint(path, model_);
      version_ = version;
      loaded = true;
      break;
    } catch (const Error& e) {
      std::cerr << "clickforge: skipping unreadable checkpoint " << path << ": " << e.what() << '\n';
    }
  }
  if (!loaded) {
    if (cfg_.checkpoint.empty()) throw InvalidArgument("no checkpoint configured and none found in " + dir.string());
    params_ = load_checkpoint(cfg_.checkpoint, model_);
    version_ = 0;
  }
  if (!cfg_.step_log.empty()) {
    step_log_ = std::make_unique<std::ofstream>(cfg_.step_log, std::ios::app);
    if (!*step_log_) throw InvalidArgument("cannot open step log " + cfg_.step_log.string());
  }
  for (const auto& w : cfg_.adapt.warnings()) std::cerr << "clickforge: warning: " << w << '\n';
  std::atomic_store(&views_, std::make_shared<const Views>());
  std::atomic_store(&health_, std::make_shared<const json>(json{
                                  {"status", "ok"}, {"checkpoint_version", version_.load()},
                                  {"adapting_session", nullptr}, {"sessions", 0}}));
}

AnnotationService::~AnnotationService() = default;

int AnnotationService::checkpoint_version() const { return version_.load(); }

AnnotationService::Live& AnnotationService::find_live(const std::string& id) {
  const auto it = live_.find(id);
  if (it == live_.end()) throw ServiceError(404, "not_found", "unknown session '" + id + "'");
  return *it->second;
}

json AnnotationService::mask_fields(const Live& live) const {
  const ProbMap<Real>& out = live.finished ? live.final_output : session_output(*live.session);
  const Mask mask = live.finished ? live.final_mask : binarize(out, Real(0.5));
  json j = {{"mask", to_json(rle_encode(mask))}, {"confidence", confidence_summary(out)}, {"iou", nullptr}};
  if (live.gt) j["iou"] = iou(mask, *live.gt);
  return j;
}

void AnnotationService::publish(const Live& live) {
  json view = {{"id", live.id},
               {"mode", to_string(live.mode)},
               {"status", live.finished ? "finished" : "active"},
               {"created_at", live.created_at},
               {"finished_at", live.finished ? json(live.finished_at) : json(nullptr)},
               {"click_count", live.clicks.size()},
               {"clicks", json::array()},
               {"undo_available", !live.finished && live.session && !live.session->history.empty()},
               {"base_checkpoint_version", live.base_version},
               {"checkpoint_version", live.result_version ? json(*live.result_version) : json(nullptr)},
               {"mask_file", live.finished ? json(live.mask_file) : json(nullptr)}};
  for (const auto& c : live.clicks) view["clicks"].push_back(click_json(c));
  view.update(mask_fields(live));

  auto next = std::make_shared<Views>(*std::atomic_load(&views_));
  (*next)[live.id] = std::make_shared<const json>(std::move(view));
  std::atomic_store(&views_, std::shared_ptr<const Views>(std::move(next)));
  std::atomic_store(&health_, std::make_shared<const json>(json{
                                  {"status", "ok"},
                                  {"checkpoint_version", version_.load()},
                                  {"adapting_session", adapting_ ? json(*adapting_) : json(nullptr)},
                                  {"sessions", live_.size()}}));
}

json AnnotationService::create_session(const Bytes& image_png, const std::string& mode_text,
                                       const std::optional<Bytes>& gt_png) {
  RasterImage image;
  try {
    image = decode_image_png(image_png);
  } catch (const Error& e) {
    throw ServiceError(400, "invalid_image", e.what());
  }
  try {
    image.validate();
  } catch (const Error& e) {
    throw ServiceError(400, "unsupported_dimensions", e.what());
  }
  AdaptMode mode;
  try {
    mode = parse_adapt_mode(mode_text);
  } catch (const InvalidArgument& e) {
    throw ServiceError(400, "invalid_mode", e.what());
  }
  std::optional<Mask> gt;
  if (gt_png) {
    try {
      gt = decode_mask_png(*gt_png);
    } catch (const Error& e) {
      throw ServiceError(400, "invalid_gt", e.what());
    }
    if (gt->rows() != image.height || gt->cols() != image.width)
      throw ServiceError(400, "dimension_mismatch",
                         "gt mask is " + std::to_string(gt->rows()) + "x" + std::to_string(gt->cols()) +
                             " but the image is " + std::to_string(image.height) + "x" + std::to_string(image.width));
  }

  return queue_.run([&]() -> json {
    const auto now = std::chrono::steady_clock::now();
    if (mode != AdaptMode::kOff && adapting_) {
      Live& holder = *live_.at(*adapting_);
      const auto idle = std::chrono::duration_cast<std::chrono::seconds>(now - holder.last_activity).count();
      if (cfg_.session_timeout_seconds > 0 && idle >= cfg_.session_timeout_seconds) {
        const std::string stale = holder.id;
        std::cerr << "clickforge: discarding idle adapting session " << stale << '\n';
        live_.erase(stale);
        adapting_.reset();
        auto next = std::make_shared<Views>(*std::atomic_load(&views_));
        next->erase(stale);
        std::atomic_store(&views_, std::shared_ptr<const Views>(std::move(next)));
      } else {
        throw ServiceError(503, "busy", "adapting session '" + *adapting_ + "' is active");
      }
    }
    auto live = std::make_unique<Live>();
    live->id = "s" + std::to_string(next_id_++) + "-" + random_token();
    live->mode = mode;
    AdaptConfig adapt = cfg_.adapt;
    adapt.mode = mode;
    live->session = begin_session(image, params_, model_, adapt, live->id);
    live->session->step_log = step_log_.get();
    live->gt = std::move(gt);
    live->created_at = utc_now();
    live->base_version = version_.load();
    live->last_activity = now;
    const std::string id = live->id;
    if (mode != AdaptMode::kOff) adapting_ = id;
    Live& ref = *live;
    live_.emplace(id, std::move(live));
    publish(ref);
    json out = {{"id", id},
                {"mode", to_string(mode)},
                {"height", image.height},
                {"width", image.width},
                {"base_checkpoint_version", ref.base_version}};
    out.update(mask_fields(ref));
    return out;
  });
}

json AnnotationService::post_click(const std::string& id, const json& body) {
  const Click click = parse_click(body);
  return queue_.run([&]() -> json {
    Live& live = find_live(id);
    if (live.finished) throw ServiceError(409, "finished", "session '" + id + "' is finished");
    Session& s = *live.session;
    const int expected = static_cast<int>(s.clicks.size()) + 1;
    if (click.ordinal != expected)
      throw ServiceError(409, "ordering",
                         "click ordinal " + std::to_string(click.ordinal) + " out of order; expected " +
                             std::to_string(expected));
    try {
      require_in_bounds(click, s.image.height, s.image.width);
    } catch (const InvalidArgument& e) {
      throw ServiceError(400, "out_of_bounds", e.what());
    }
    process_click(s, click);
    live.clicks.push_back(click);
    live.last_activity = std::chrono::steady_clock::now();
    publish(live);
    json steps = json::array();
    for (const auto& r : s.steps)
      if (r.ordinal == click.ordinal) steps.push_back(step_json(r));
    json out = {{"id", id}, {"ordinal", click.ordinal}, {"click_count", s.clicks.size()}, {"steps", steps}};
    out.update(mask_fields(live));
    return out;
  });
}

json AnnotationService::undo(const std::string& id) {
  return queue_.run([&]() -> json {
    Live& live = find_live(id);
    if (live.finished) throw ServiceError(409, "finished", "session '" + id + "' is finished");
    Session& s = *live.session;
    if (s.clicks.empty()) throw ServiceError(409, "empty_history", "nothing to undo");
    if (s.history.empty()) throw ServiceError(409, "history_exhausted", "undo history exhausted");
    undo_click(s);
    live.clicks.pop_back();
    live.last_activity = std::chrono::steady_clock::now();
    publish(live);
    json out = {{"id", id}, {"click_count", s.clicks.size()}};
    out.update(mask_fields(live));
    return out;
  });
}

json AnnotationService::finish(const std::string& id) {
  return queue_.run([&]() -> json {
    Live& live = find_live(id);
    if (live.finished) throw ServiceError(409, "finished", "session '" + id + "' is finished");
    if (live.session->clicks.empty()) throw ServiceError(409, "no_clicks", "session has no clicks to finish");
    live.final_output = session_output(*live.session);
    SessionResult result = end_session(std::move(*live.session));
    live.session.reset();
    live.final_mask = result.mask;
    const fs::path mask_path = cfg_.state_dir / "masks" / (id + ".png");
    write_file_atomic(mask_path, encode_mask_png(result.mask));
    live.mask_file = mask_path.string();
    if (live.mode != AdaptMode::kOff) {
      const int version = version_.load() + 1;
      save_checkpoint(result.params, cfg_.state_dir / "checkpoints" / version_file_name(version));
      params_ = std::move(result.params);
      version_ = version;
      live.result_version = version;
      adapting_.reset();
    }
    live.finished = true;
    live.finished_at = utc_now();
    publish(live);
    json out = {{"id", id},
                {"mask_file", live.mask_file},
                {"checkpoint_version", live.result_version ? *live.result_version : version_.load()},
                {"adapted", live.mode != AdaptMode::kOff}};
    out.update(mask_fields(live));
    return out;
  });
}

json AnnotationService::get_session(const std::string& id) const {
  const auto views = std::atomic_load(&views_);
  const auto it = views->find(id);
  if (it == views->end()) throw ServiceError(404, "not_found", "unknown session '" + id + "'");
  return *it->second;
}

json AnnotationService::health() const { return *std::atomic_load(&health_); }

json AnnotationService::checkpoints() const {
  json versions = json::array();
  auto listed = list_versions(cfg_.state_dir / "checkpoints");
  std::reverse(listed.begin(), listed.end());
  if (!cfg_.checkpoint.empty()) versions.push_back({{"version", 0}, {"file", cfg_.checkpoint.string()}});
  for (const auto& [version, path] : listed) versions.push_back({{"version", version}, {"file", path.string()}});
  return {{"current", version_.load()}, {"versions", versions}};
}

}  // namespace clickforge
