#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "preempt/messages.hpp"

namespace preempt::net {

// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) noexcept : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept;
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void reset() noexcept;
  int release() noexcept { return std::exchange(fd_, -1); }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

// Parses "host:port"; throws ConfigError.
Endpoint parse_endpoint(const std::string& text);

// Blocking stream socket exchanging length-prefixed frames.
class FramedConnection {
 public:
  FramedConnection() = default;
  explicit FramedConnection(Fd fd) : fd_(std::move(fd)) {}

  static FramedConnection connect(const Endpoint& ep,
                                  std::chrono::milliseconds timeout);

  bool open() const noexcept { return fd_.valid(); }
  void close() noexcept { fd_.reset(); }

  // Throws NetworkError on I/O failure; decode errors surface as
  // MalformedMessage.
  void send(const Message& msg);
  // nullopt when the peer closed the connection cleanly between frames.
  std::optional<Message> receive(
      std::optional<std::chrono::milliseconds> timeout = std::nullopt);

  // True when a frame (or EOF) is ready within the timeout.
  bool readable(std::chrono::milliseconds timeout);

  Message call(const Message& request, std::chrono::milliseconds timeout);

 private:
  Fd fd_;
};

class TcpListener {
 public:
  // Port 0 binds an ephemeral port; see port().
  TcpListener(const std::string& host, std::uint16_t port);

  std::uint16_t port() const noexcept { return port_; }
  // nullopt on timeout.
  std::optional<FramedConnection> accept(std::chrono::milliseconds timeout);

 private:
  Fd fd_;
  std::uint16_t port_ = 0;
};

}  // namespace preempt::net
