#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "preempt/task_state.hpp"

namespace preempt {

using TaskId = std::string;
using WorkerId = std::string;
// Monotonic clock reading in milliseconds.
using Millis = std::int64_t;

enum class Priority : std::uint8_t { kHigh, kLow };
enum class DirectiveAction : std::uint8_t { kLaunch, kSuspend, kResume, kKill };
// Preemption primitives that need a directive; waiting needs none.
enum class Primitive : std::uint8_t { kSuspend, kKill };

std::string_view to_string(Priority p) noexcept;
std::string_view to_string(DirectiveAction a) noexcept;
std::string_view to_string(Primitive p) noexcept;
std::optional<Priority> parse_priority(std::string_view text) noexcept;
std::optional<DirectiveAction> parse_directive_action(
    std::string_view text) noexcept;
std::optional<Primitive> parse_primitive(std::string_view text) noexcept;

// Everything a worker needs to start one attempt of a task.
struct TaskLaunchDescriptor {
  TaskId task_id;
  std::uint32_t attempt = 1;
  std::string executable;
  std::vector<std::string> arguments;
  std::string input_path;
  std::uint64_t input_bytes = 0;
  std::uint64_t tuple_bytes = 0;
  std::uint64_t ballast_bytes = 0;
  std::uint64_t progress_interval = 0;  // tuples per progress record

  std::uint64_t input_tuples() const noexcept {
    return tuple_bytes == 0 ? 0 : input_bytes / tuple_bytes;
  }
  bool operator==(const TaskLaunchDescriptor&) const = default;
};

// Throws PreconditionViolation when input_bytes is zero, tuple_bytes does
// not divide it, or the executable is empty.
void validate(const TaskLaunchDescriptor& d);

// Final self-report of a synthetic task ("SUMMARY tuples=.. checksum=..").
struct TaskSummary {
  std::uint64_t tuples = 0;
  bool checksum_ok = false;
  bool operator==(const TaskSummary&) const = default;
};

struct TaskReport {
  TaskId task_id;
  std::uint32_t attempt = 1;
  TaskState observed_state = TaskState::kRunning;
  double progress_fraction = 0.0;
  std::uint64_t resident_bytes = 0;
  std::uint64_t swapped_bytes = 0;
  // False when the OS exposes no per-process swap counter; swapped_bytes
  // is then 0 and must be treated as absent.
  bool swap_supported = true;
  std::uint64_t swapped_bytes_peak = 0;
  // Progress records that arrived while the worker held the task stopped.
  std::uint64_t progress_records_while_suspended = 0;
  std::uint32_t resumed_markers = 0;
  std::optional<TaskSummary> summary;
  bool operator==(const TaskReport&) const = default;
};

struct HeartbeatMessage {
  WorkerId worker_id;
  std::uint64_t sequence_no = 0;
  std::vector<TaskReport> task_reports;
  std::uint32_t free_slots = 0;
  Millis timestamp = 0;
  bool operator==(const HeartbeatMessage&) const = default;
};

struct Directive {
  TaskId task_id;
  DirectiveAction action = DirectiveAction::kLaunch;
  std::optional<TaskLaunchDescriptor> payload;  // LAUNCH only
  bool operator==(const Directive&) const = default;
};

// Heartbeat reply; carries the piggybacked directives.
struct CommandMessage {
  std::vector<Directive> directives;
  bool operator==(const CommandMessage&) const = default;
};

// Sent once per connection before the first heartbeat.
struct RegisterWorker {
  WorkerId worker_id;
  std::string address;
  std::uint32_t slots_total = 1;
  std::uint32_t max_suspended = 1;
  bool operator==(const RegisterWorker&) const = default;
};

enum class ControlOp : std::uint8_t {
  kSubmit,
  kPreempt,
  kResume,
  kReschedule,
  kSnapshot,
};
std::string_view to_string(ControlOp op) noexcept;
std::optional<ControlOp> parse_control_op(std::string_view text) noexcept;

// Control API call from a user or an out-of-process scheduler.
struct ControlRequest {
  ControlOp op = ControlOp::kSnapshot;
  std::optional<TaskId> task_id;
  std::optional<TaskLaunchDescriptor> descriptor;
  std::optional<Priority> priority;
  std::optional<WorkerId> target_worker;
  std::optional<Primitive> primitive;
  bool operator==(const ControlRequest&) const = default;
};

struct ControlReply {
  bool ok = true;
  std::string error_kind;
  std::string error_message;
  std::string body;  // JSON text, op-specific
  bool operator==(const ControlReply&) const = default;
};

using Message = std::variant<RegisterWorker, HeartbeatMessage, CommandMessage,
                             ControlRequest, ControlReply>;

}  // namespace preempt
