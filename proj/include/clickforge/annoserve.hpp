#pragma once

#include "clickforge/adapter.hpp"
#include "clickforge/image_io.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace clickforge {

// ---------------------------------------------------------------------------
// Mask wire format

/// Row-major run lengths alternating 0-runs and 1-runs, starting with a
/// 0-run (possibly of length 0).
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> counts;
};

RleMask rle_encode(const Mask& mask);
Mask rle_decode(const RleMask& rle);
nlohmann::json to_json(const RleMask& rle);
RleMask rle_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Configuration

struct ServiceConfig {
  /// Checkpoint served when state_dir holds no versions yet.
  std::filesystem::path checkpoint;
  /// Versioned checkpoints (checkpoints/vNNNNNN.cfck) and exported masks.
  std::filesystem::path state_dir = "clickforge-state";
  std::string host = "127.0.0.1";
  int port = 8080;
  /// Learning rates, steps, loss weights and history depth; the mode is
  /// chosen per session.
  AdaptConfig adapt;
  /// An adapting session idle this long is discarded when another adapting
  /// session is requested. 0 disables.
  int session_timeout_seconds = 600;
  int retry_after_seconds = 1;
  /// Optional step-log file (appended).
  std::filesystem::path step_log;

  void validate() const;
};

/// Applies one `key = value` setting; throws InvalidArgument on unknown keys
/// or malformed values.
void apply_setting(ServiceConfig& cfg, const std::string& key, const std::string& value);

/// Keys accepted by apply_setting, in documentation order.
const std::vector<std::string>& setting_keys();

/// Reads `key = value` lines ('#' starts a comment), then applies
/// CLICKFORGE_<KEY> environment overrides (key upper-cased).
using EnvLookup = std::function<const char*(const char*)>;
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env);

// ---------------------------------------------------------------------------
// Service

/// Failure with an HTTP status and a stable machine-readable code.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Maps any exception to (status, code, message).
struct ErrorInfo {
  int status = 500;
  std::string code = "internal";
  std::string message;
};
ErrorInfo describe_error(const std::exception& e);
nlohmann::json error_body(const ErrorInfo& info);

/// Runs closures one at a time on a dedicated thread, in submission order.
class CommandQueue {
 public:
  CommandQueue();
  ~CommandQueue();
  CommandQueue(const CommandQueue&) = delete;
  CommandQueue& operator=(const CommandQueue&) = delete;

  /// Blocks until `fn` has run; rethrows its exception.
  template <typename F>
  auto run(F fn) -> decltype(fn()) {
    auto task = std::make_shared<std::packaged_task<decltype(fn())()>>(std::move(fn));
    auto result = task->get_future();
    post([task] { (*task)(); });
    return result.get();
  }

 private:
  void post(std::function<void()> job);
  void loop();

  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::thread worker_;
};

/// Annotation sessions over one model instance. Mutations go through a
/// single command queue; GET-style reads use published immutable snapshots.
class AnnotationService {
 public:
  explicit AnnotationService(ServiceConfig cfg, ModelConfig model = {});
  ~AnnotationService();

  nlohmann::json create_session(const Bytes& image_png, const std::string& mode,
                                const std::optional<Bytes>& gt_png = std::nullopt);
  /// Body: {"row", "col", "polarity": "positive"|"negative", "ordinal"}.
  nlohmann::json post_click(const std::string& id, const nlohmann::json& body);
  nlohmann::json undo(const std::string& id);
  nlohmann::json finish(const std::string& id);

  nlohmann::json get_session(const std::string& id) const;
  nlohmann::json health() const;
  nlohmann::json checkpoints() const;

  int checkpoint_version() const;
  const ServiceConfig& config() const { return cfg_; }

 private:
  struct Live;
  using Views = std::map<std::string, std::shared_ptr<const nlohmann::json>>;

  void publish(const Live& live);
  Live& find_live(const std::string& id);
  nlohmann::json mask_fields(const Live& live) const;

  ServiceConfig cfg_;
  ModelConfig model_;
  std::unique_ptr<std::ofstream> step_log_;

  // Owned by the command queue.
  ParamSet<Real> params_;
  std::map<std::string, std::unique_ptr<Live>> live_;
  std::optional<std::string> adapting_;
  std::uint64_t next_id_ = 1;

  // Published for lock-free readers.
  std::shared_ptr<const Views> views_;
  std::shared_ptr<const nlohmann::json> health_;
  std::atomic<int> version_{0};

  CommandQueue queue_;
};

/// HTTP front end for an AnnotationService.
class HttpFrontend {
 public:
  explicit HttpFrontend(AnnotationService& service);
  ~HttpFrontend();

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace clickforge
