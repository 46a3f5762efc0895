#include "preempt/task_state.hpp"

#include <utility>

namespace preempt {

namespace {

using S = TaskState;
using E = TransitionEvent;

struct Edge {
  S from;
  E event;
  S to;
};

// MUST_KILL has no separate "sent" state; the directive queue tracks
// delivery, so command_sent is a self-loop there.
constexpr Edge kEdges[] = {
    {S::kPending, E::kLaunch, S::kLaunching},

    {S::kLaunching, E::kLaunched, S::kRunning},
    {S::kLaunching, E::kWorkerReportedSuccess, S::kSucceeded},
    {S::kLaunching, E::kWorkerReportedFailure, S::kFailed},

    {S::kRunning, E::kSchedulerSuspend, S::kMustSuspend},
    {S::kRunning, E::kSchedulerKill, S::kMustKill},
    {S::kRunning, E::kWorkerReportedSuccess, S::kSucceeded},
    {S::kRunning, E::kWorkerReportedFailure, S::kFailed},

    {S::kMustSuspend, E::kCommandSent, S::kSuspendingSent},
    {S::kMustSuspend, E::kWorkerReportedSuccess, S::kSucceeded},
    {S::kMustSuspend, E::kWorkerReportedFailure, S::kFailed},

    {S::kSuspendingSent, E::kWorkerConfirmedSuspended, S::kSuspended},
    {S::kSuspendingSent, E::kWorkerReportedSuccess, S::kSucceeded},
    {S::kSuspendingSent, E::kWorkerReportedFailure, S::kFailed},

    {S::kSuspended, E::kSchedulerResume, S::kMustResume},
    {S::kSuspended, E::kSchedulerKill, S::kMustKill},
    {S::kSuspended, E::kWorkerReportedFailure, S::kFailed},

    {S::kMustResume, E::kCommandSent, S::kResumingSent},
    {S::kMustResume, E::kWorkerReportedFailure, S::kFailed},

    {S::kResumingSent, E::kWorkerConfirmedRunning, S::kRunning},
    {S::kResumingSent, E::kWorkerReportedSuccess, S::kSucceeded},
    {S::kResumingSent, E::kWorkerReportedFailure, S::kFailed},

    {S::kMustKill, E::kCommandSent, S::kMustKill},
    {S::kMustKill, E::kWorkerConfirmedKilled, S::kCleanup},
    {S::kMustKill, E::kWorkerReportedSuccess, S::kSucceeded},
    {S::kMustKill, E::kWorkerReportedFailure, S::kFailed},

    {S::kCleanup, E::kCleanupDone, S::kKilled},
};

constexpr std::pair<S, std::string_view> kStateNames[] = {
    {S::kPending, "PENDING"},
    {S::kLaunching, "LAUNCHING"},
    {S::kRunning, "RUNNING"},
    {S::kMustSuspend, "MUST_SUSPEND"},
    {S::kSuspendingSent, "SUSPENDING_SENT"},
    {S::kSuspended, "SUSPENDED"},
    {S::kMustResume, "MUST_RESUME"},
    {S::kResumingSent, "RESUMING_SENT"},
    {S::kMustKill, "MUST_KILL"},
    {S::kKilled, "KILLED"},
    {S::kCleanup, "CLEANUP"},
    {S::kSucceeded, "SUCCEEDED"},
    {S::kFailed, "FAILED"},
};

constexpr std::pair<E, std::string_view> kEventNames[] = {
    {E::kSchedulerSuspend, "scheduler_suspend"},
    {E::kSchedulerResume, "scheduler_resume"},
    {E::kSchedulerKill, "scheduler_kill"},
    {E::kCommandSent, "command_sent"},
    {E::kWorkerConfirmedSuspended, "worker_confirmed_suspended"},
    {E::kWorkerConfirmedRunning, "worker_confirmed_running"},
    {E::kWorkerReportedSuccess, "worker_reported_success"},
    {E::kWorkerReportedFailure, "worker_reported_failure"},
    {E::kWorkerConfirmedKilled, "worker_confirmed_killed"},
    {E::kCleanupDone, "cleanup_done"},
    {E::kLaunch, "launch"},
    {E::kLaunched, "launched"},
};

}  // namespace

std::string_view to_string(TaskState state) noexcept {
  for (const auto& [s, name] : kStateNames) {
    if (s == state) return name;
  }
  return "?";
}

std::string_view to_string(TransitionEvent event) noexcept {
  for (const auto& [e, name] : kEventNames) {
    if (e == event) return name;
  }
  return "?";
}

std::optional<TaskState> parse_task_state(std::string_view text) noexcept {
  for (const auto& [s, name] : kStateNames) {
    if (name == text) return s;
  }
  return std::nullopt;
}

std::optional<TransitionEvent> parse_transition_event(
    std::string_view text) noexcept {
  for (const auto& [e, name] : kEventNames) {
    if (name == text) return e;
  }
  return std::nullopt;
}

IllegalTransition::IllegalTransition(TaskState current, TransitionEvent event)
    : Error("illegal transition: " + std::string(to_string(current)) +
            " --" + std::string(to_string(event)) + "-->"),
      current_(current),
      event_(event) {}

IllegalTransition::IllegalTransition(const std::string& message)
    : Error(message) {}

std::optional<TaskState> next_state(TaskState current,
                                    TransitionEvent event) noexcept {
  for (const auto& edge : kEdges) {
    if (edge.from == current && edge.event == event) return edge.to;
  }
  return std::nullopt;
}

TaskState apply_transition(TaskState current, TransitionEvent event) {
  if (auto next = next_state(current, event)) return *next;
  throw IllegalTransition(current, event);
}

}  // namespace preempt
