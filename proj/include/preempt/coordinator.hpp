#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "preempt/messages.hpp"
#include "preempt/task_state.hpp"

namespace preempt {

Millis steady_millis() noexcept;

// One finished attempt of a task, kept after a kill-and-reschedule or a
// lost worker.
struct AttemptRecord {
  std::uint32_t attempt = 1;
  std::optional<WorkerId> worker;
  std::optional<Millis> launch_time;
  std::optional<Millis> end_time;
  TaskState final_state = TaskState::kPending;
  double progress_at_end = 0.0;
  std::uint64_t tuples_processed = 0;
  std::vector<Millis> suspend_times;
  std::vector<Millis> resume_times;
};

struct TaskRecord {
  TaskId task_id;
  std::string name;
  Priority priority = Priority::kLow;
  TaskState state = TaskState::kPending;
  std::optional<WorkerId> assigned_worker;
  std::optional<WorkerId> target_worker;
  double progress_fraction = 0.0;
  Millis submit_time = 0;
  std::optional<Millis> first_launch_time;
  std::optional<Millis> launch_time;  // current attempt
  std::vector<Millis> suspend_times;  // current attempt
  std::vector<Millis> resume_times;   // current attempt
  std::optional<Millis> completion_time;
  std::uint64_t resident_bytes = 0;
  std::uint64_t swapped_bytes = 0;
  std::uint64_t swapped_bytes_peak = 0;
  bool swap_supported = true;
  std::uint32_t attempt_count = 1;
  std::uint64_t progress_records_while_suspended = 0;
  std::uint32_t resumed_markers = 0;
  std::optional<TaskSummary> summary;
  TaskLaunchDescriptor descriptor;
  std::vector<AttemptRecord> past_attempts;
  // Last worker report said the process holds a slot.
  bool on_worker_slot = false;

  // Tuples of the current attempt: the final summary when present,
  // otherwise progress times input size.
  std::uint64_t current_attempt_tuples() const noexcept;
  // Sum over every attempt, the wasted ones included.
  std::uint64_t total_tuples_processed() const noexcept;
};

struct WorkerRecord {
  WorkerId worker_id;
  std::string address;
  std::uint32_t slots_total = 0;
  std::uint32_t slots_running = 0;
  std::uint32_t slots_suspended = 0;
  std::uint32_t max_suspended = 0;
  Millis last_heartbeat = 0;
  std::uint64_t last_sequence_no = 0;
  std::uint32_t reported_free_slots = 0;
  bool alive = true;
  std::uint64_t stale_heartbeats = 0;
  std::uint64_t slot_mismatches = 0;
};

struct Snapshot {
  Millis taken_at = 0;
  std::vector<TaskRecord> tasks;
  std::vector<WorkerRecord> workers;

  const TaskRecord* find_task(const TaskId& id) const noexcept;
  const WorkerRecord* find_worker(const WorkerId& id) const noexcept;
};

// One line of the coordinator event log. event_name is a transition event
// name, or "new_attempt" when a task restarts from scratch.
struct TransitionRecord {
  Millis timestamp = 0;
  TaskId task_id;
  std::uint32_t attempt = 1;
  TaskState from = TaskState::kPending;
  std::string event_name;
  TaskState to = TaskState::kPending;
};

std::string format_event_line(const TransitionRecord& r);
// Throws MalformedMessage on lines that do not parse.
TransitionRecord parse_event_line(const std::string& line);
// Replays log lines against the transition table; returns the first
// offending line index, or nullopt when every line is a legal edge.
std::optional<std::size_t> find_illegal_event(
    const std::vector<TransitionRecord>& log);

struct CoordinatorConfig {
  Millis heartbeat_interval_ms = 300;
  int missed_heartbeats_before_dead = 10;
  // Per-task memory cap used by the suspension admission check; 0 turns the
  // aggregate-memory check off (the max_suspended check always applies).
  std::uint64_t per_task_memory_cap_bytes = 0;
  // RAM plus swap available to tasks on one worker.
  std::optional<std::uint64_t> memory_budget_bytes;
};

enum class ResumeOutcome { kResumeQueued, kRescheduled };

// Task and worker bookkeeping of the central tracker. Not thread-safe:
// CoordinatorService serializes every call onto one mutation context.
// Every task state change goes through apply_transition.
class Coordinator {
 public:
  using Clock = std::function<Millis()>;
  // Called after each heartbeat's reports are applied and before its reply
  // is assembled, so directives queued here ride the same reply.
  using Observer = std::function<void(Coordinator&)>;
  using TransitionSink = std::function<void(const TransitionRecord&)>;

  explicit Coordinator(CoordinatorConfig config = {},
                       Clock clock = &steady_millis);

  void register_worker(const RegisterWorker& reg);

  TaskId submit_task(TaskLaunchDescriptor descriptor, Priority priority,
                     std::optional<WorkerId> target_worker = std::nullopt,
                     std::optional<Millis> arrival_time = std::nullopt,
                     std::string name = {});

  void request_preemption(const TaskId& id, Primitive primitive);
  ResumeOutcome request_resume(const TaskId& id);
  // Starts a new attempt of a KILLED task from scratch.
  void reschedule(const TaskId& id);

  CommandMessage handle_heartbeat(const HeartbeatMessage& hb);

  Snapshot snapshot() const;
  const TaskRecord& task(const TaskId& id) const;
  const WorkerRecord& worker(const WorkerId& id) const;
  bool worker_alive(const WorkerId& id) const;
  Millis now() const { return clock_(); }
  const CoordinatorConfig& config() const noexcept { return config_; }

  void add_observer(Observer observer);
  void set_transition_sink(TransitionSink sink);
  const std::vector<TransitionRecord>& transitions() const noexcept {
    return transitions_;
  }
  std::size_t queued_directives(const WorkerId& id) const;
  std::uint64_t protocol_errors() const noexcept { return protocol_errors_; }

 private:
  struct QueuedDirective {
    TaskId task_id;
    DirectiveAction action;
    std::uint32_t attempt;
  };

  TaskRecord& mutable_task(const TaskId& id);
  WorkerRecord& mutable_worker(const WorkerId& id);
  void transition(TaskRecord& task, TransitionEvent event);
  void record(const TaskRecord& task, TaskState from, std::string event,
              TaskState to);
  void apply_report(TaskRecord& task, const TaskReport& report);
  void start_new_attempt(TaskRecord& task, TaskState final_state);
  void place_pending_tasks();
  std::uint32_t occupied_slots(const WorkerId& id) const;
  std::uint32_t suspensions(const WorkerId& id) const;
  std::uint32_t active_tasks(const WorkerId& id) const;
  void refresh_worker_counters();
  CommandMessage drain_directives(const WorkerId& id);

  CoordinatorConfig config_;
  Clock clock_;
  std::map<TaskId, TaskRecord> tasks_;
  std::vector<TaskId> submit_order_;
  std::map<WorkerId, WorkerRecord> workers_;
  std::map<WorkerId, std::deque<QueuedDirective>> queues_;
  std::vector<Observer> observers_;
  TransitionSink sink_;
  std::vector<TransitionRecord> transitions_;
  std::uint64_t next_task_number_ = 1;
  std::uint64_t protocol_errors_ = 0;
};

}  // namespace preempt
