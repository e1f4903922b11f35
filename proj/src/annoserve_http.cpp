#include "clickforge/annoserve.hpp"

#include <httplib.h>

namespace clickforge {

using nlohmann::json;

struct HttpFrontend::Impl {
  AnnotationService& service;
  httplib::Server server;

  explicit Impl(AnnotationService& s) : service(s) {}

  void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void fail(httplib::Response& res, const std::exception& e) {
    const ErrorInfo info = describe_error(e);
    if (info.status == 503) res.set_header("Retry-After", std::to_string(service.config().retry_after_seconds));
    reply(res, info.status, error_body(info));
  }

  template <typename F>
  httplib::Server::Handler guarded(int status, F fn) {
    return [this, status, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        reply(res, status, fn(req));
      } catch (const std::exception& e) {
        fail(res, e);
      }
    };
  }

  void routes() {
    server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
    });
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Post("/sessions", guarded(201, [this](const httplib::Request& req) {
                  if (!req.is_multipart_form_data())
                    throw ServiceError(400, "invalid_request", "expected multipart/form-data with an 'image' part");
                  if (!req.has_file("image")) throw ServiceError(400, "invalid_request", "missing 'image' part");
                  const std::string& image = req.get_file_value("image").content;
                  std::optional<Bytes> gt;
                  if (req.has_file("gt")) {
                    const std::string& g = req.get_file_value("gt").content;
                    gt = Bytes(g.begin(), g.end());
                  }
                  const std::string mode = req.has_file("mode") ? req.get_file_value("mode").content
                                                                : to_string(service.config().adapt.mode);
                  return service.create_session(Bytes(image.begin(), image.end()), mode, gt);
                }));
    server.Post(R"(/sessions/([^/]+)/clicks)", guarded(200, [this](const httplib::Request& req) {
                  return service.post_click(req.matches[1], json::parse(req.body));
                }));
    server.Post(R"(/sessions/([^/]+)/undo)",
                guarded(200, [this](const httplib::Request& req) { return service.undo(req.matches[1]); }));
    server.Post(R"(/sessions/([^/]+)/finish)",
                guarded(200, [this](const httplib::Request& req) { return service.finish(req.matches[1]); }));
    server.Get(R"(/sessions/([^/]+))",
               guarded(200, [this](const httplib::Request& req) { return service.get_session(req.matches[1]); }));
    server.Get("/healthz", guarded(200, [this](const httplib::Request&) { return service.health(); }));
    server.Get("/checkpoints", guarded(200, [this](const httplib::Request&) { return service.checkpoints(); }));

    server.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 404 ? "not_found" : "http_error";
      reply(res, res.status, error_body({res.status, code, "no such endpoint"}));
    });
  }
};

HttpFrontend::HttpFrontend(AnnotationService& service) : impl_(std::make_unique<Impl>(service)) { impl_->routes(); }

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpFrontend::run() { impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace clickforge
