#include "preempt/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <vector>

#include "preempt/wire.hpp"

namespace preempt::net {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw NetworkError(what + ": " + std::strerror(errno));
}

bool wait_readable(int fd, std::optional<std::chrono::milliseconds> timeout) {
  pollfd p{fd, POLLIN, 0};
  int ms = timeout ? static_cast<int>(timeout->count()) : -1;
  for (;;) {
    int rc = ::poll(&p, 1, ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw_errno("poll");
  }
}

// Returns false on clean EOF before any byte was read.
bool read_exact(int fd, std::uint8_t* out, std::size_t n, bool eof_ok) {
  std::size_t done = 0;
  while (done < n) {
    ssize_t rc = ::recv(fd, out + done, n - done, 0);
    if (rc > 0) {
      done += static_cast<std::size_t>(rc);
    } else if (rc == 0) {
      if (done == 0 && eof_ok) return false;
      throw NetworkError("connection closed mid-frame");
    } else if (errno != EINTR) {
      throw_errno("recv");
    }
  }
  return true;
}

}  // namespace

Fd& Fd::operator=(Fd&& other) noexcept {
  if (this != &other) {
    reset();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void Fd::reset() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Endpoint parse_endpoint(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigError("expected host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  try {
    int port = std::stoi(text.substr(colon + 1));
    if (port <= 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw ConfigError("bad port in '" + text + "'");
  }
  return ep;
}

FramedConnection FramedConnection::connect(const Endpoint& ep,
                                           std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  auto port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res);
      rc != 0) {
    throw NetworkError("resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  Fd fd(::socket(res->ai_family, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!fd.valid()) {
    ::freeaddrinfo(res);
    throw_errno("socket");
  }
  int rc = ::connect(fd.get(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    if (errno != EINPROGRESS) throw_errno("connect");
    pollfd p{fd.get(), POLLOUT, 0};
    if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0) {
      throw NetworkError("connect timed out");
    }
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      errno = err;
      throw_errno("connect");
    }
  }
  // Back to blocking mode for frame I/O.
  int flags = ::fcntl(fd.get(), F_GETFL);
  ::fcntl(fd.get(), F_SETFL, flags & ~O_NONBLOCK);
  int one = 1;
  ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return FramedConnection(std::move(fd));
}

void FramedConnection::send(const Message& msg) {
  if (!open()) throw NetworkError("send on closed connection");
  auto frame = encode_message(msg);
  std::size_t done = 0;
  while (done < frame.size()) {
    ssize_t rc = ::send(fd_.get(), frame.data() + done, frame.size() - done,
                        MSG_NOSIGNAL);
    if (rc >= 0) {
      done += static_cast<std::size_t>(rc);
    } else if (errno != EINTR) {
      throw_errno("send");
    }
  }
}

std::optional<Message> FramedConnection::receive(
    std::optional<std::chrono::milliseconds> timeout) {
  if (!open()) throw NetworkError("receive on closed connection");
  if (!wait_readable(fd_.get(), timeout)) {
    throw NetworkError("receive timed out");
  }
  std::uint8_t header[kFrameHeaderBytes];
  if (!read_exact(fd_.get(), header, sizeof header, true)) return std::nullopt;
  std::uint32_t n = read_frame_length(std::span<const std::uint8_t, 4>(header));
  if (n > kMaxPayloadBytes) throw MalformedMessage("frame exceeds 1 MiB");
  std::vector<std::uint8_t> payload(n);
  read_exact(fd_.get(), payload.data(), n, false);
  return decode_payload(
      std::string_view(reinterpret_cast<const char*>(payload.data()), n));
}

bool FramedConnection::readable(std::chrono::milliseconds timeout) {
  if (!open()) throw NetworkError("poll on closed connection");
  return wait_readable(fd_.get(), timeout);
}

Message FramedConnection::call(const Message& request,
                               std::chrono::milliseconds timeout) {
  send(request);
  auto reply = receive(timeout);
  if (!reply) throw NetworkError("peer closed the connection");
  return std::move(*reply);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd_.valid()) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw ConfigError("listen address must be an IPv4 literal: " + host);
  }
  if (::bind(fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw_errno("bind");
  }
  if (::listen(fd_.get(), 16) != 0) throw_errno("listen");
  socklen_t len = sizeof addr;
  ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

std::optional<FramedConnection> TcpListener::accept(
    std::chrono::milliseconds timeout) {
  if (!wait_readable(fd_.get(), timeout)) return std::nullopt;
  int client = ::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
  if (client < 0) {
    if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) {
      return std::nullopt;
    }
    throw_errno("accept");
  }
  int one = 1;
  ::setsockopt(client, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return FramedConnection(Fd(client));
}

}  // namespace preempt::net
