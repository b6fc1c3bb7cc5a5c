#pragma once

#include <iosfwd>
#include <memory>
#include <string>

#include "kerl/service.hpp"

namespace kerl::cli {

/// HTTP front end that forwards every request to ChatService::handle.
class HttpFrontend {
 public:
  /// `log`, when given, receives one latency line per request.
  explicit HttpFrontend(ChatService& service, std::ostream* log = nullptr);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Port 0 picks a free port. Returns the bound port, or -1 on failure.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace kerl::cli
