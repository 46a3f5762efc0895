#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "preempt/errors.hpp"

namespace preempt {

// Lifecycle of one task attempt as tracked by the coordinator.
//
// MUST_* states record coordinator intent that has not reached the worker
// yet; *_SENT states mean the directive rode out on a heartbeat reply and
// the worker's confirmation is pending. SUCCEEDED, KILLED and FAILED are
// terminal.
enum class TaskState : std::uint8_t {
  kPending,
  kLaunching,
  kRunning,
  kMustSuspend,
  kSuspendingSent,
  kSuspended,
  kMustResume,
  kResumingSent,
  kMustKill,
  kKilled,
  kCleanup,
  kSucceeded,
  kFailed,
};

enum class TransitionEvent : std::uint8_t {
  kSchedulerSuspend,
  kSchedulerResume,
  kSchedulerKill,
  kCommandSent,
  kWorkerConfirmedSuspended,
  kWorkerConfirmedRunning,
  kWorkerReportedSuccess,
  kWorkerReportedFailure,
  kWorkerConfirmedKilled,
  kCleanupDone,
  kLaunch,
  kLaunched,
};

inline constexpr std::array kAllTaskStates = {
    TaskState::kPending,        TaskState::kLaunching,
    TaskState::kRunning,        TaskState::kMustSuspend,
    TaskState::kSuspendingSent, TaskState::kSuspended,
    TaskState::kMustResume,     TaskState::kResumingSent,
    TaskState::kMustKill,       TaskState::kKilled,
    TaskState::kCleanup,        TaskState::kSucceeded,
    TaskState::kFailed,
};

inline constexpr std::array kAllTransitionEvents = {
    TransitionEvent::kSchedulerSuspend,
    TransitionEvent::kSchedulerResume,
    TransitionEvent::kSchedulerKill,
    TransitionEvent::kCommandSent,
    TransitionEvent::kWorkerConfirmedSuspended,
    TransitionEvent::kWorkerConfirmedRunning,
    TransitionEvent::kWorkerReportedSuccess,
    TransitionEvent::kWorkerReportedFailure,
    TransitionEvent::kWorkerConfirmedKilled,
    TransitionEvent::kCleanupDone,
    TransitionEvent::kLaunch,
    TransitionEvent::kLaunched,
};

std::string_view to_string(TaskState state) noexcept;
std::string_view to_string(TransitionEvent event) noexcept;
std::optional<TaskState> parse_task_state(std::string_view text) noexcept;
std::optional<TransitionEvent> parse_transition_event(
    std::string_view text) noexcept;

constexpr bool is_terminal(TaskState s) noexcept {
  return s == TaskState::kSucceeded || s == TaskState::kKilled ||
         s == TaskState::kFailed;
}

// States a worker may put in a heartbeat report.
constexpr bool is_observable(TaskState s) noexcept {
  return s == TaskState::kRunning || s == TaskState::kSuspended ||
         s == TaskState::kSucceeded || s == TaskState::kFailed ||
         s == TaskState::kKilled;
}

// The task holds one of the worker's execution slots.
constexpr bool occupies_slot(TaskState s) noexcept {
  switch (s) {
    case TaskState::kLaunching:
    case TaskState::kRunning:
    case TaskState::kMustSuspend:
    case TaskState::kSuspendingSent:
    case TaskState::kMustResume:
    case TaskState::kResumingSent:
    case TaskState::kMustKill:
    case TaskState::kCleanup:
      return true;
    default:
      return false;
  }
}

// Suspended, or on its way there; counted against max_suspended.
constexpr bool holds_suspension(TaskState s) noexcept {
  return s == TaskState::kMustSuspend || s == TaskState::kSuspendingSent ||
         s == TaskState::kSuspended;
}

class IllegalTransition : public Error {
 public:
  IllegalTransition(TaskState current, TransitionEvent event);
  explicit IllegalTransition(const std::string& message);

  std::string_view kind() const noexcept override {
    return "IllegalTransition";
  }
  std::optional<TaskState> current() const noexcept { return current_; }
  std::optional<TransitionEvent> event() const noexcept { return event_; }

 private:
  std::optional<TaskState> current_;
  std::optional<TransitionEvent> event_;
};

// Table lookup; nullopt when the pair has no edge.
std::optional<TaskState> next_state(TaskState current,
                                    TransitionEvent event) noexcept;

// Throws IllegalTransition for pairs outside the table.
TaskState apply_transition(TaskState current, TransitionEvent event);

}  // namespace preempt
