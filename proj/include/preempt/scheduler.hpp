#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "preempt/coordinator.hpp"

namespace preempt {

class CoordinatorService;

// How the script makes room for the high-priority task.
enum class ScheduleAction : std::uint8_t { kSuspendResume, kKillRestart, kWait };
enum class AfterHigh : std::uint8_t { kResumeLow, kRestartLow, kNothing };

// "wait", "kill", "suspend_resume"; parsing also takes the upper-case
// action names.
std::string_view to_string(ScheduleAction a) noexcept;
std::string_view to_string(AfterHigh a) noexcept;
std::optional<ScheduleAction> parse_schedule_action(std::string_view text) noexcept;

AfterHigh default_after_high(ScheduleAction a) noexcept;

struct TriggerRule {
  double threshold_r = 0.5;
  ScheduleAction action = ScheduleAction::kSuspendResume;
  AfterHigh after_high_completes = AfterHigh::kResumeLow;
};

// Throws ConfigError when r is outside [0,1] or the action and follow-up
// do not belong together.
void validate(const TriggerRule& rule);

// One scripted two-task run.
struct ExperimentSpec {
  TriggerRule rule;
  TaskLaunchDescriptor low;
  TaskLaunchDescriptor high;
  WorkerId worker = "worker-1";
  std::chrono::milliseconds timeout{std::chrono::minutes(10)};
};

struct ScheduleOutcome {
  TaskId low_id;
  TaskId high_id;
  ScheduleAction action = ScheduleAction::kWait;
  double threshold_r = 0.0;
  Millis low_submit = 0;
  Millis trigger_time = 0;      // also the high task's submit time
  double low_progress_at_trigger = 0.0;
  std::optional<Millis> preempt_confirmed;  // SUSPENDED or KILLED seen
  bool completion_won_race = false;         // low finished before preemption
  Millis low_first_launch = 0;
  Millis high_first_launch = 0;
  Millis high_completion = 0;
  Millis low_completion = 0;
  std::uint32_t low_attempts = 1;
  std::uint64_t low_tuples_total = 0;
  std::optional<TaskSummary> low_summary;
  std::optional<TaskSummary> high_summary;
  std::uint64_t low_swapped_bytes_peak = 0;
  bool low_swap_supported = true;
  std::uint64_t low_progress_records_while_suspended = 0;
  std::uint64_t input_tuples_low = 0;
  std::uint64_t progress_interval_low = 0;
  Snapshot final_snapshot;
  std::vector<TransitionRecord> transitions;

  Millis sojourn_high_ms() const noexcept { return high_completion - trigger_time; }
  Millis makespan_ms() const noexcept;
};

// The script as a coordinator observer: it reacts to the state reached
// after each heartbeat. Not thread-safe; it runs in the coordinator's
// mutation context.
class ScheduleScript {
 public:
  enum class Phase { kIdle, kWatching, kPreempting, kHighRunning, kLowFinishing, kDone, kError };

  explicit ScheduleScript(ExperimentSpec spec);

  // Submits the low-priority task.
  void start(Coordinator& c);
  void observe(Coordinator& c);

  Phase phase() const noexcept { return phase_; }
  bool finished() const noexcept { return phase_ == Phase::kDone || phase_ == Phase::kError; }
  // Rethrows the failure recorded by observe, if any.
  void rethrow_if_failed() const;
  ScheduleOutcome outcome(const Coordinator& c) const;

 private:
  void fail(std::exception_ptr e);
  void submit_high(Coordinator& c);

  ExperimentSpec spec_;
  Phase phase_ = Phase::kIdle;
  TaskId low_id_;
  TaskId high_id_;
  Millis low_submit_ = 0;
  Millis trigger_time_ = 0;
  double progress_at_trigger_ = 0.0;
  std::optional<Millis> preempt_confirmed_;
  bool completion_won_race_ = false;
  std::exception_ptr error_;
};

// Runs the script against a live coordinator and blocks until both tasks
// are done. Throws TriggerNeverFired, TaskFailed, RunTimeout and whatever
// the coordinator raises.
ScheduleOutcome run_schedule(CoordinatorService& service, const ExperimentSpec& spec);

enum class EvictionPolicy : std::uint8_t { kExplicit, kClosestToCompletion, kSmallestFootprint };

std::string_view to_string(EvictionPolicy p) noexcept;
std::optional<EvictionPolicy> parse_eviction_policy(std::string_view text) noexcept;

// Picks the task to preempt among RUNNING candidates; ties go to the
// smallest task id. kExplicit returns `named`, which must be a candidate.
// Throws EmptyCandidates and PreconditionViolation.
TaskId select_victim(EvictionPolicy policy, const std::vector<TaskRecord>& candidates,
                     const std::optional<TaskId>& named = std::nullopt);

}  // namespace preempt
