#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "preempt/coordinator.hpp"
#include "preempt/net.hpp"

namespace preempt {

nlohmann::json to_json(const Snapshot& s);
Snapshot snapshot_from_json(const nlohmann::json& j);

// Hosts a Coordinator behind one mutex (the single mutation context), serves
// the framed TCP protocol, publishes immutable snapshots and writes the
// transition event log.
class CoordinatorService {
 public:
  struct Options {
    CoordinatorConfig config;
    std::string listen_host = "127.0.0.1";
    std::uint16_t port = 0;
    std::optional<std::filesystem::path> event_log;
  };

  explicit CoordinatorService(Options options,
                              Coordinator::Clock clock = &steady_millis);
  ~CoordinatorService();
  CoordinatorService(const CoordinatorService&) = delete;
  CoordinatorService& operator=(const CoordinatorService&) = delete;

  // Binds and starts accepting connections.
  void start();
  void stop();
  std::uint16_t port() const noexcept { return port_; }

  // Runs f on the coordinator inside the mutation context, then publishes a
  // fresh snapshot and wakes waiters.
  template <typename F>
  decltype(auto) with_coordinator(F&& f) {
    std::unique_lock lock(mutex_);
    Publisher publish{this};
    return std::forward<F>(f)(coordinator_);
  }

  std::shared_ptr<const Snapshot> snapshot() const;

  // Waits until pred holds on a published snapshot; false on timeout.
  bool wait_until(const std::function<bool(const Snapshot&)>& pred,
                  std::chrono::milliseconds timeout);

  // Handles one decoded request as a connection would.
  Message dispatch(const Message& request);

 private:
  struct Publisher {
    CoordinatorService* service;
    ~Publisher() { service->publish_locked(); }
  };

  void publish_locked();
  void accept_loop();
  void serve(net::FramedConnection conn);
  ControlReply control(const ControlRequest& req);

  Options options_;
  Coordinator coordinator_;
  mutable std::mutex mutex_;
  std::condition_variable changed_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::ofstream event_log_;

  std::unique_ptr<net::TcpListener> listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex connections_mutex_;
  std::vector<std::thread> connections_;
};

// Client side of the control API.
class ControlClient {
 public:
  explicit ControlClient(const net::Endpoint& coordinator,
                         std::chrono::milliseconds timeout =
                             std::chrono::milliseconds(5000));

  TaskId submit(const TaskLaunchDescriptor& descriptor, Priority priority,
                std::optional<WorkerId> target_worker = std::nullopt);
  void preempt(const TaskId& id, Primitive primitive);
  ResumeOutcome resume(const TaskId& id);
  void reschedule(const TaskId& id);
  Snapshot snapshot();

 private:
  nlohmann::json call(const ControlRequest& req);

  net::FramedConnection conn_;
  std::chrono::milliseconds timeout_;
};

}  // namespace preempt
