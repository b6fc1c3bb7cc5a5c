#include "http_server.hpp"

#include <atomic>
#include <chrono>
#include <httplib.h>
#include <mutex>
#include <ostream>
#include <thread>

namespace kerl::cli {

struct HttpFrontend::Impl {
  ChatService& service;
  std::ostream* log;
  std::mutex log_mutex;
  httplib::Server server;
  std::atomic<bool> stop_requested{false};
  std::atomic<bool> listening{false};
  std::atomic<bool> finished{false};

  Impl(ChatService& s, std::ostream* l) : service(s), log(l) {}

  void forward(const httplib::Request& req, httplib::Response& res) {
    const auto t0 = std::chrono::steady_clock::now();
    const HttpResponse r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    std::string content_type = "application/json";
    for (const auto& [k, v] : r.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        res.set_header(k, v);
      }
    }
    if (!r.body.empty()) res.set_content(r.body, content_type);
    if (log != nullptr) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      std::lock_guard lock(log_mutex);
      *log << req.method << " " << req.path << " " << r.status << " " << ms << " ms\n" << std::flush;
    }
  }
};

HttpFrontend::HttpFrontend(ChatService& service, std::ostream* log) : impl_(std::make_unique<Impl>(service, log)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->forward(req, res); };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Delete(".*", handler);
  impl_->server.Options(".*", handler);
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpFrontend::listen() {
  impl_->listening = true;
  bool ok = false;
  if (!impl_->stop_requested) ok = impl_->server.listen_after_bind();
  impl_->finished = true;
  return ok;
}

void HttpFrontend::stop() {
  impl_->stop_requested = true;
  // httplib ignores stop() until the accept loop runs, so a stop issued
  // while listen() is starting up waits for it.
  while (impl_->listening && !impl_->finished && !impl_->server.is_running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  impl_->server.stop();
}

}  // namespace kerl::cli
