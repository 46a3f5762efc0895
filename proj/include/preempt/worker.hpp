#pragma once

#include <sys/types.h>

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "preempt/messages.hpp"
#include "preempt/net.hpp"
#include "preempt/proc.hpp"

namespace preempt {

struct WorkerOptions {
  WorkerId worker_id = "worker-1";
  std::uint32_t slots_total = 1;
  std::uint32_t max_suspended = 1;
  Millis heartbeat_interval_ms = 300;
  std::filesystem::path workdir = "preempt-work";
  std::optional<std::filesystem::path> event_log;
  std::chrono::milliseconds state_poll{10};
  std::chrono::milliseconds state_timeout{1000};
};

// Worker-side view of one task attempt.
struct LocalTaskView {
  TaskId task_id;
  std::uint32_t attempt = 1;
  pid_t pid = -1;
  TaskState observed_state = TaskState::kRunning;
  double progress_fraction = 0.0;
  std::uint64_t resident_bytes = 0;
  std::uint64_t swapped_bytes = 0;
  std::uint64_t swapped_bytes_peak = 0;
  bool swap_supported = true;
  std::uint64_t progress_records = 0;
  std::uint64_t progress_records_while_suspended = 0;
  std::uint32_t resumed_markers = 0;
  std::optional<TaskSummary> summary;
  std::filesystem::path temp_output_dir;
  std::optional<int> wait_status;
};

// Per-machine agent: runs task processes in their own process groups and
// drives them with SIGTSTP / SIGCONT / SIGKILL.
//
// The literal argument "{output_dir}" in a launch descriptor is replaced
// with the task's temporary output directory, <workdir>/<task_id>.
class Worker {
 public:
  explicit Worker(WorkerOptions options);
  ~Worker();
  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  const WorkerOptions& options() const noexcept { return options_; }

  // Throws NoFreeSlot, SpawnFailure, PreconditionViolation.
  LocalTaskView launch(const TaskLaunchDescriptor& descriptor);
  // Returns once the OS reports the process stopped. Throws ProcessGone
  // when it exited first and PreconditionViolation unless RUNNING.
  void suspend(const TaskId& id);
  // Returns once the OS reports the process no longer stopped.
  void resume(const TaskId& id);
  // Returns once the process is reaped and its temp directory removed.
  // A no-op for tasks that already ended.
  void kill(const TaskId& id);

  // nullopt when the process is gone.
  std::optional<proc::MemorySample> sample_memory(const TaskId& id) const;

  // Applies directives in order; failures are logged and surface in the
  // next heartbeat as task states.
  void apply(const CommandMessage& command);
  HeartbeatMessage build_heartbeat();
  // Terminal tasks included in a delivered heartbeat are not re-reported.
  void acknowledge(const HeartbeatMessage& delivered);

  std::optional<LocalTaskView> task(const TaskId& id) const;
  std::vector<LocalTaskView> tasks() const;
  std::uint32_t free_slots() const;
  bool wait_for(const TaskId& id,
                const std::function<bool(const LocalTaskView&)>& pred,
                std::chrono::milliseconds timeout) const;

  // Heartbeats every interval and right after any task exits; reconnects
  // with backoff. Returns only when stop is requested.
  void run_heartbeat_loop(const net::Endpoint& coordinator,
                          std::stop_token stop);
  void start_heartbeating(const net::Endpoint& coordinator);
  void stop_heartbeating();
  void request_immediate_heartbeat();

 private:
  struct LocalTask;

  LocalTask& find_locked(const TaskId& id);
  const LocalTask* find_locked(const TaskId& id) const;
  // Reads whatever the task has written; true at end of stream.
  bool drain_locked(LocalTask& t);
  void handle_line_locked(LocalTask& t, std::string_view line);
  void supervise(LocalTask* t);
  void finalize_locked(LocalTask& t, int wait_status);
  void record_failed_launch_locked(const TaskLaunchDescriptor& d,
                                   const std::string& why);
  std::uint32_t running_locked() const;
  void log_event_locked(const LocalTask& t, TaskState from,
                        std::string_view action, TaskState to);
  static LocalTaskView view_of(const LocalTask& t);

  WorkerOptions options_;
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::map<TaskId, std::unique_ptr<LocalTask>> tasks_;
  // Supervisors of replaced attempts, joined on destruction.
  std::vector<std::thread> retired_;
  std::uint64_t sequence_no_ = 0;
  bool beat_now_ = false;
  std::condition_variable_any beat_cv_;
  std::ofstream event_log_;
  std::jthread heartbeat_thread_;
};

}  // namespace preempt
