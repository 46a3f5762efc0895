#include "preempt/scheduler.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>

#include "preempt/coordinator_service.hpp"
#include "preempt/errors.hpp"

namespace preempt {

std::string_view to_string(ScheduleAction a) noexcept {
  switch (a) {
    case ScheduleAction::kSuspendResume: return "suspend_resume";
    case ScheduleAction::kKillRestart: return "kill";
    case ScheduleAction::kWait: return "wait";
  }
  return "?";
}

std::string_view to_string(AfterHigh a) noexcept {
  switch (a) {
    case AfterHigh::kResumeLow: return "RESUME_LOW";
    case AfterHigh::kRestartLow: return "RESTART_LOW";
    case AfterHigh::kNothing: return "NOTHING";
  }
  return "?";
}

std::optional<ScheduleAction> parse_schedule_action(std::string_view text) noexcept {
  if (text == "suspend_resume" || text == "SUSPEND_RESUME" || text == "suspend") {
    return ScheduleAction::kSuspendResume;
  }
  if (text == "kill" || text == "KILL_RESTART" || text == "kill_restart") {
    return ScheduleAction::kKillRestart;
  }
  if (text == "wait" || text == "WAIT") return ScheduleAction::kWait;
  return std::nullopt;
}

AfterHigh default_after_high(ScheduleAction a) noexcept {
  switch (a) {
    case ScheduleAction::kSuspendResume: return AfterHigh::kResumeLow;
    case ScheduleAction::kKillRestart: return AfterHigh::kRestartLow;
    case ScheduleAction::kWait: return AfterHigh::kNothing;
  }
  return AfterHigh::kNothing;
}

void validate(const TriggerRule& rule) {
  if (!(rule.threshold_r >= 0.0 && rule.threshold_r <= 1.0)) {
    throw ConfigError("threshold r must be in [0,1], got " +
                      std::to_string(rule.threshold_r));
  }
  if (rule.after_high_completes != default_after_high(rule.action)) {
    throw ConfigError(std::string("action ") + std::string(to_string(rule.action)) +
                      " needs follow-up " +
                      std::string(to_string(default_after_high(rule.action))) +
                      ", got " + std::string(to_string(rule.after_high_completes)));
  }
}

Millis ScheduleOutcome::makespan_ms() const noexcept {
  return std::max(high_completion, low_completion) - low_submit;
}

ScheduleScript::ScheduleScript(ExperimentSpec spec) : spec_(std::move(spec)) {
  validate(spec_.rule);
}

void ScheduleScript::start(Coordinator& c) {
  if (phase_ != Phase::kIdle) throw PreconditionViolation("script already started");
  low_submit_ = c.now();
  low_id_ = c.submit_task(spec_.low, Priority::kLow, spec_.worker, low_submit_, "t_l");
  phase_ = Phase::kWatching;
}

void ScheduleScript::submit_high(Coordinator& c) {
  // The high task arrives at the trigger instant, whatever the primitive
  // then costs.
  high_id_ = c.submit_task(spec_.high, Priority::kHigh, spec_.worker, trigger_time_, "t_h");
  phase_ = Phase::kHighRunning;
}

void ScheduleScript::fail(std::exception_ptr e) {
  error_ = std::move(e);
  phase_ = Phase::kError;
}

void ScheduleScript::rethrow_if_failed() const {
  if (error_) std::rethrow_exception(error_);
}

void ScheduleScript::observe(Coordinator& c) {
  if (finished() || phase_ == Phase::kIdle) return;
  try {
    const TaskRecord& low = c.task(low_id_);
    if (low.state == TaskState::kFailed) {
      throw TaskFailed("t_l (" + low_id_ + ") failed");
    }
    if (!high_id_.empty() && c.task(high_id_).state == TaskState::kFailed) {
      throw TaskFailed("t_h (" + high_id_ + ") failed");
    }

    if (phase_ == Phase::kWatching) {
      if (low.state == TaskState::kSucceeded) {
        throw TriggerNeverFired("t_l completed at progress " +
                                std::to_string(low.progress_fraction) +
                                " before reaching r = " +
                                std::to_string(spec_.rule.threshold_r));
      }
      if (low.state != TaskState::kRunning ||
          low.progress_fraction < spec_.rule.threshold_r) {
        return;
      }
      trigger_time_ = c.now();
      progress_at_trigger_ = low.progress_fraction;
      spdlog::info("trigger at progress {:.4f} (r = {}), action {}", progress_at_trigger_,
                   spec_.rule.threshold_r, to_string(spec_.rule.action));
      switch (spec_.rule.action) {
        case ScheduleAction::kWait:
          submit_high(c);
          return;
        case ScheduleAction::kSuspendResume:
          c.request_preemption(low_id_, Primitive::kSuspend);
          phase_ = Phase::kPreempting;
          return;
        case ScheduleAction::kKillRestart:
          c.request_preemption(low_id_, Primitive::kKill);
          phase_ = Phase::kPreempting;
          return;
      }
    }

    if (phase_ == Phase::kPreempting) {
      TaskState confirmed = spec_.rule.action == ScheduleAction::kSuspendResume
                                ? TaskState::kSuspended
                                : TaskState::kKilled;
      if (low.state == confirmed) {
        preempt_confirmed_ = c.now();
        submit_high(c);
      } else if (low.state == TaskState::kSucceeded) {
        // t_l finished before the preemption reached it; t_h still arrives.
        completion_won_race_ = true;
        submit_high(c);
      }
      return;
    }

    if (phase_ == Phase::kHighRunning) {
      if (c.task(high_id_).state != TaskState::kSucceeded) return;
      switch (spec_.rule.after_high_completes) {
        case AfterHigh::kResumeLow:
          if (low.state == TaskState::kSuspended) c.request_resume(low_id_);
          break;
        case AfterHigh::kRestartLow:
          if (low.state == TaskState::kKilled) c.reschedule(low_id_);
          break;
        case AfterHigh::kNothing:
          break;
      }
      phase_ = Phase::kLowFinishing;
    }

    if (phase_ == Phase::kLowFinishing && c.task(low_id_).state == TaskState::kSucceeded) {
      phase_ = Phase::kDone;
    }
  } catch (...) {
    fail(std::current_exception());
  }
}

ScheduleOutcome ScheduleScript::outcome(const Coordinator& c) const {
  ScheduleOutcome o;
  o.low_id = low_id_;
  o.high_id = high_id_;
  o.action = spec_.rule.action;
  o.threshold_r = spec_.rule.threshold_r;
  o.low_submit = low_submit_;
  o.trigger_time = trigger_time_;
  o.low_progress_at_trigger = progress_at_trigger_;
  o.preempt_confirmed = preempt_confirmed_;
  o.completion_won_race = completion_won_race_;
  const TaskRecord& low = c.task(low_id_);
  o.low_completion = low.completion_time.value_or(0);
  o.low_first_launch = low.first_launch_time.value_or(0);
  o.low_attempts = low.attempt_count;
  o.low_tuples_total = low.total_tuples_processed();
  o.low_summary = low.summary;
  o.low_swapped_bytes_peak = low.swapped_bytes_peak;
  o.low_swap_supported = low.swap_supported;
  o.low_progress_records_while_suspended = low.progress_records_while_suspended;
  o.input_tuples_low = low.descriptor.input_tuples();
  o.progress_interval_low = low.descriptor.progress_interval;
  if (!high_id_.empty()) {
    const TaskRecord& high = c.task(high_id_);
    o.high_first_launch = high.first_launch_time.value_or(0);
    o.high_completion = high.completion_time.value_or(0);
    o.high_summary = high.summary;
  }
  o.final_snapshot = c.snapshot();
  o.transitions = c.transitions();
  return o;
}

ScheduleOutcome run_schedule(CoordinatorService& service, const ExperimentSpec& spec) {
  auto script = std::make_shared<ScheduleScript>(spec);
  auto finished = std::make_shared<std::atomic<bool>>(false);
  service.with_coordinator([&](Coordinator& c) {
    c.worker(spec.worker);  // throws UnknownWorker before anything is submitted
    c.add_observer([script, finished](Coordinator& co) {
      script->observe(co);
      if (script->finished()) finished->store(true);
    });
    script->start(c);
  });
  bool done = service.wait_until([&](const Snapshot&) { return finished->load(); },
                                 spec.timeout);
  return service.with_coordinator([&](Coordinator& c) {
    script->rethrow_if_failed();
    if (!done) {
      throw RunTimeout("schedule did not finish within " +
                       std::to_string(spec.timeout.count()) + " ms");
    }
    return script->outcome(c);
  });
}

std::string_view to_string(EvictionPolicy p) noexcept {
  switch (p) {
    case EvictionPolicy::kExplicit: return "EXPLICIT";
    case EvictionPolicy::kClosestToCompletion: return "CLOSEST_TO_COMPLETION";
    case EvictionPolicy::kSmallestFootprint: return "SMALLEST_FOOTPRINT";
  }
  return "?";
}

std::optional<EvictionPolicy> parse_eviction_policy(std::string_view text) noexcept {
  for (auto p : {EvictionPolicy::kExplicit, EvictionPolicy::kClosestToCompletion,
                 EvictionPolicy::kSmallestFootprint}) {
    if (to_string(p) == text) return p;
  }
  return std::nullopt;
}

TaskId select_victim(EvictionPolicy policy, const std::vector<TaskRecord>& candidates,
                     const std::optional<TaskId>& named) {
  if (candidates.empty()) throw EmptyCandidates("no candidates to evict");
  for (const auto& t : candidates) {
    if (t.state != TaskState::kRunning) {
      throw PreconditionViolation("candidate " + t.task_id + " is " +
                                  std::string(to_string(t.state)) + ", not RUNNING");
    }
  }
  if (policy == EvictionPolicy::kExplicit) {
    if (!named) throw PreconditionViolation("EXPLICIT policy needs a named victim");
    for (const auto& t : candidates) {
      if (t.task_id == *named) return t.task_id;
    }
    throw PreconditionViolation("named victim " + *named + " is not a candidate");
  }
  // Strictly better wins; on equal scores the smaller id wins.
  auto better = [policy](const TaskRecord& a, const TaskRecord& b) {
    if (policy == EvictionPolicy::kClosestToCompletion) {
      if (a.progress_fraction != b.progress_fraction) {
        return a.progress_fraction > b.progress_fraction;
      }
    } else {
      std::uint64_t fa = a.resident_bytes + a.swapped_bytes;
      std::uint64_t fb = b.resident_bytes + b.swapped_bytes;
      if (fa != fb) return fa < fb;
    }
    return a.task_id < b.task_id;
  };
  return std::min_element(candidates.begin(), candidates.end(), better)->task_id;
}

}  // namespace preempt
