#include "preempt/coordinator.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace preempt {

Millis steady_millis() noexcept {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch())
      .count();
}

namespace {

std::uint64_t tuples_at(double progress, std::uint64_t total) {
  return static_cast<std::uint64_t>(std::llround(progress * double(total)));
}

}  // namespace

std::uint64_t TaskRecord::current_attempt_tuples() const noexcept {
  if (summary) return summary->tuples;
  return tuples_at(progress_fraction, descriptor.input_tuples());
}

std::uint64_t TaskRecord::total_tuples_processed() const noexcept {
  std::uint64_t total = current_attempt_tuples();
  for (const auto& a : past_attempts) total += a.tuples_processed;
  return total;
}

const TaskRecord* Snapshot::find_task(const TaskId& id) const noexcept {
  for (const auto& t : tasks) {
    if (t.task_id == id) return &t;
  }
  return nullptr;
}

const WorkerRecord* Snapshot::find_worker(const WorkerId& id) const noexcept {
  for (const auto& w : workers) {
    if (w.worker_id == id) return &w;
  }
  return nullptr;
}

std::string format_event_line(const TransitionRecord& r) {
  std::ostringstream out;
  out << r.timestamp << '\t' << r.task_id << '\t' << r.attempt << '\t'
      << to_string(r.from) << '\t' << r.event_name << '\t' << to_string(r.to);
  return out.str();
}

TransitionRecord parse_event_line(const std::string& line) {
  std::vector<std::string> cols;
  std::string col;
  std::istringstream in(line);
  while (std::getline(in, col, '\t')) cols.push_back(col);
  if (cols.size() != 6) throw MalformedMessage("event line needs 6 columns");
  TransitionRecord r;
  try {
    r.timestamp = std::stoll(cols[0]);
    r.attempt = static_cast<std::uint32_t>(std::stoul(cols[2]));
  } catch (const std::exception&) {
    throw MalformedMessage("bad number in event line");
  }
  r.task_id = cols[1];
  auto from = parse_task_state(cols[3]);
  auto to = parse_task_state(cols[5]);
  if (!from || !to) throw MalformedMessage("bad state in event line");
  r.from = *from;
  r.event_name = cols[4];
  r.to = *to;
  return r;
}

std::optional<std::size_t> find_illegal_event(
    const std::vector<TransitionRecord>& log) {
  // Tracks each task's state so the log must also chain consistently.
  std::map<TaskId, TaskState> current;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& r = log[i];
    auto it = current.find(r.task_id);
    if (it != current.end() && it->second != r.from) return i;
    if (it == current.end() && r.from != TaskState::kPending) return i;
    if (r.event_name == "new_attempt") {
      if (!is_terminal(r.from) || r.to != TaskState::kPending) return i;
    } else {
      auto event = parse_transition_event(r.event_name);
      if (!event) return i;
      auto next = next_state(r.from, *event);
      if (!next || *next != r.to) return i;
    }
    current[r.task_id] = r.to;
  }
  return std::nullopt;
}

Coordinator::Coordinator(CoordinatorConfig config, Clock clock)
    : config_(config), clock_(std::move(clock)) {}

void Coordinator::register_worker(const RegisterWorker& reg) {
  auto& w = workers_[reg.worker_id];
  bool fresh = w.worker_id.empty();
  w.worker_id = reg.worker_id;
  w.address = reg.address;
  w.slots_total = reg.slots_total;
  w.max_suspended = reg.max_suspended;
  w.last_heartbeat = now();
  // A re-registering worker may have restarted its sequence counter.
  w.last_sequence_no = 0;
  w.alive = true;
  queues_[reg.worker_id];
  refresh_worker_counters();
  spdlog::debug("worker {} {} ({} slots, max {} suspended)", reg.worker_id,
                fresh ? "registered" : "re-registered", reg.slots_total,
                reg.max_suspended);
}

TaskId Coordinator::submit_task(TaskLaunchDescriptor descriptor,
                                Priority priority,
                                std::optional<WorkerId> target_worker,
                                std::optional<Millis> arrival_time,
                                std::string name) {
  if (target_worker && !workers_.contains(*target_worker)) {
    throw UnknownWorker("unknown worker " + *target_worker);
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "task-%04llu",
                static_cast<unsigned long long>(next_task_number_));
  TaskId id = buf;
  descriptor.task_id = id;
  descriptor.attempt = 1;
  validate(descriptor);
  ++next_task_number_;

  TaskRecord rec;
  rec.task_id = id;
  rec.name = name.empty() ? id : std::move(name);
  rec.priority = priority;
  rec.state = TaskState::kPending;
  rec.target_worker = std::move(target_worker);
  rec.submit_time = arrival_time.value_or(now());
  rec.descriptor = std::move(descriptor);
  tasks_.emplace(id, std::move(rec));
  submit_order_.push_back(id);
  return id;
}

void Coordinator::request_preemption(const TaskId& id, Primitive primitive) {
  auto& task = mutable_task(id);
  auto event = primitive == Primitive::kSuspend
                   ? TransitionEvent::kSchedulerSuspend
                   : TransitionEvent::kSchedulerKill;
  if (task.state != TaskState::kRunning) {
    throw IllegalTransition(task.state, event);
  }
  const WorkerId& wid = *task.assigned_worker;
  if (primitive == Primitive::kSuspend) {
    const auto& w = worker(wid);
    if (suspensions(wid) + 1 > w.max_suspended) {
      throw SwapBudgetExceeded("worker " + wid + " already holds " +
                               std::to_string(w.max_suspended) +
                               " suspended task(s)");
    }
    if (config_.per_task_memory_cap_bytes > 0 && config_.memory_budget_bytes) {
      // The freed slot gets refilled, so one more capped task will be
      // resident alongside everything already running or suspended.
      std::uint64_t projected = std::uint64_t{active_tasks(wid) + 1} *
                                config_.per_task_memory_cap_bytes;
      if (projected > *config_.memory_budget_bytes) {
        throw SwapBudgetExceeded(
            "suspending " + id + " would let task memory reach " +
            std::to_string(projected) + " bytes, budget is " +
            std::to_string(*config_.memory_budget_bytes));
      }
    }
  }
  transition(task, event);
  queues_[wid].push_back(QueuedDirective{
      id,
      primitive == Primitive::kSuspend ? DirectiveAction::kSuspend
                                       : DirectiveAction::kKill,
      task.attempt_count});
}

ResumeOutcome Coordinator::request_resume(const TaskId& id) {
  auto& task = mutable_task(id);
  if (task.state != TaskState::kSuspended) {
    throw IllegalTransition(task.state, TransitionEvent::kSchedulerResume);
  }
  const WorkerId wid = *task.assigned_worker;
  if (!worker_alive(wid)) {
    // The suspended state died with its machine; only a restart is left.
    spdlog::warn("worker {} lost while {} was suspended; restarting it", wid,
                 id);
    transition(task, TransitionEvent::kWorkerReportedFailure);
    if (task.target_worker == wid) task.target_worker.reset();
    start_new_attempt(task, task.state);
    return ResumeOutcome::kRescheduled;
  }
  if (occupied_slots(wid) >= worker(wid).slots_total) {
    throw SlotUnavailable("no free slot on " + wid + " to resume " + id);
  }
  transition(task, TransitionEvent::kSchedulerResume);
  queues_[wid].push_back(
      QueuedDirective{id, DirectiveAction::kResume, task.attempt_count});
  return ResumeOutcome::kResumeQueued;
}

void Coordinator::reschedule(const TaskId& id) {
  auto& task = mutable_task(id);
  if (task.state != TaskState::kKilled) {
    throw PreconditionViolation("only KILLED tasks are rescheduled; " + id +
                                " is " + std::string(to_string(task.state)));
  }
  start_new_attempt(task, task.state);
}

void Coordinator::start_new_attempt(TaskRecord& task, TaskState final_state) {
  AttemptRecord a;
  a.attempt = task.attempt_count;
  a.worker = task.assigned_worker;
  a.launch_time = task.launch_time;
  a.end_time = task.completion_time;
  a.final_state = final_state;
  a.progress_at_end = task.progress_fraction;
  a.tuples_processed = task.current_attempt_tuples();
  a.suspend_times = std::move(task.suspend_times);
  a.resume_times = std::move(task.resume_times);
  task.past_attempts.push_back(std::move(a));

  TaskState from = task.state;
  task.attempt_count += 1;
  task.descriptor.attempt = task.attempt_count;
  task.state = TaskState::kPending;
  task.assigned_worker.reset();
  task.progress_fraction = 0.0;
  task.launch_time.reset();
  task.suspend_times.clear();
  task.resume_times.clear();
  task.completion_time.reset();
  task.summary.reset();
  task.resident_bytes = 0;
  task.swapped_bytes = 0;
  task.progress_records_while_suspended = 0;
  task.resumed_markers = 0;
  task.on_worker_slot = false;
  record(task, from, "new_attempt", TaskState::kPending);
  refresh_worker_counters();
}

CommandMessage Coordinator::handle_heartbeat(const HeartbeatMessage& hb) {
  auto& w = mutable_worker(hb.worker_id);
  if (hb.sequence_no <= w.last_sequence_no) {
    ++w.stale_heartbeats;
    spdlog::debug("dropping stale heartbeat {} from {}", hb.sequence_no,
                  hb.worker_id);
    return {};
  }
  w.last_sequence_no = hb.sequence_no;
  w.last_heartbeat = now();
  w.alive = true;
  w.reported_free_slots = hb.free_slots;

  for (const auto& report : hb.task_reports) {
    auto it = tasks_.find(report.task_id);
    if (it == tasks_.end()) {
      spdlog::warn("{} reported unknown task {}", hb.worker_id, report.task_id);
      continue;
    }
    auto& task = it->second;
    if (task.assigned_worker != hb.worker_id ||
        report.attempt != task.attempt_count) {
      continue;  // report about an earlier attempt
    }
    apply_report(task, report);
  }

  std::uint32_t on_slot = 0;
  for (const auto& [id, t] : tasks_) {
    if (t.assigned_worker == hb.worker_id && t.on_worker_slot) ++on_slot;
  }
  if (on_slot + hb.free_slots != w.slots_total) {
    ++w.slot_mismatches;
    spdlog::warn("{}: {} tasks on slots + {} free != {} slots", hb.worker_id,
                 on_slot, hb.free_slots, w.slots_total);
  }

  for (auto& observer : observers_) observer(*this);
  place_pending_tasks();
  return drain_directives(hb.worker_id);
}

void Coordinator::apply_report(TaskRecord& task, const TaskReport& report) {
  if (report.progress_fraction >= task.progress_fraction) {
    task.progress_fraction = report.progress_fraction;
  } else {
    spdlog::warn("{} progress went backwards ({} -> {}); keeping {}",
                 task.task_id, task.progress_fraction,
                 report.progress_fraction, task.progress_fraction);
  }
  task.resident_bytes = report.resident_bytes;
  task.swapped_bytes = report.swapped_bytes;
  task.swap_supported = report.swap_supported;
  task.swapped_bytes_peak = std::max(
      {task.swapped_bytes_peak, report.swapped_bytes, report.swapped_bytes_peak});
  task.progress_records_while_suspended =
      report.progress_records_while_suspended;
  task.resumed_markers = report.resumed_markers;
  if (report.summary) task.summary = report.summary;
  task.on_worker_slot = report.observed_state == TaskState::kRunning;

  std::optional<TransitionEvent> event;
  switch (report.observed_state) {
    case TaskState::kRunning:
      if (task.state == TaskState::kLaunching) {
        event = TransitionEvent::kLaunched;
      } else if (task.state == TaskState::kResumingSent) {
        event = TransitionEvent::kWorkerConfirmedRunning;
      }
      break;
    case TaskState::kSuspended:
      if (task.state == TaskState::kSuspendingSent) {
        event = TransitionEvent::kWorkerConfirmedSuspended;
      }
      break;
    case TaskState::kSucceeded:
      if (!is_terminal(task.state)) event = TransitionEvent::kWorkerReportedSuccess;
      break;
    case TaskState::kFailed:
      if (!is_terminal(task.state)) event = TransitionEvent::kWorkerReportedFailure;
      break;
    case TaskState::kKilled:
      if (task.state == TaskState::kMustKill) {
        event = TransitionEvent::kWorkerConfirmedKilled;
      } else if (!is_terminal(task.state) && task.state != TaskState::kCleanup) {
        // Killed without our asking (OOM killer, operator): a failure.
        event = TransitionEvent::kWorkerReportedFailure;
      }
      break;
    default:
      break;
  }
  if (!event) return;
  try {
    transition(task, *event);
  } catch (const IllegalTransition& e) {
    ++protocol_errors_;
    spdlog::warn("protocol error on {}: {}", task.task_id, e.what());
    return;
  }
  if (task.state == TaskState::kCleanup) {
    // The worker removes the temporary outputs before it reports KILLED.
    transition(task, TransitionEvent::kCleanupDone);
  }
}

void Coordinator::transition(TaskRecord& task, TransitionEvent event) {
  TaskState from = task.state;
  TaskState to = apply_transition(from, event);
  task.state = to;
  Millis t = now();
  if (to == TaskState::kSuspended) task.suspend_times.push_back(t);
  if (from == TaskState::kResumingSent && to == TaskState::kRunning) {
    task.resume_times.push_back(t);
  }
  if (is_terminal(to)) {
    task.completion_time = t;
    task.on_worker_slot = false;
  }
  if (to == TaskState::kLaunching) {
    task.launch_time = t;
    if (!task.first_launch_time) task.first_launch_time = t;
  }
  record(task, from, std::string(to_string(event)), to);
  refresh_worker_counters();
}

void Coordinator::record(const TaskRecord& task, TaskState from,
                         std::string event, TaskState to) {
  TransitionRecord r{now(), task.task_id, task.attempt_count, from,
                     std::move(event), to};
  if (sink_) sink_(r);
  transitions_.push_back(std::move(r));
}

void Coordinator::place_pending_tasks() {
  std::vector<TaskRecord*> pending;
  for (const auto& id : submit_order_) {
    auto& t = tasks_.at(id);
    if (t.state == TaskState::kPending) pending.push_back(&t);
  }
  std::stable_sort(pending.begin(), pending.end(),
                   [](const TaskRecord* a, const TaskRecord* b) {
                     return a->priority == Priority::kHigh &&
                            b->priority != Priority::kHigh;
                   });
  for (TaskRecord* t : pending) {
    std::optional<WorkerId> chosen;
    for (const auto& [wid, w] : workers_) {
      if (t->target_worker && *t->target_worker != wid) continue;
      if (!worker_alive(wid)) continue;
      if (occupied_slots(wid) < w.slots_total) {
        chosen = wid;
        break;
      }
    }
    if (!chosen) continue;
    t->assigned_worker = *chosen;
    transition(*t, TransitionEvent::kLaunch);
    queues_[*chosen].push_back(
        QueuedDirective{t->task_id, DirectiveAction::kLaunch, t->attempt_count});
  }
}

CommandMessage Coordinator::drain_directives(const WorkerId& id) {
  CommandMessage reply;
  auto& queue = queues_[id];
  std::deque<QueuedDirective> deferred;
  std::set<TaskId> in_reply;
  while (!queue.empty()) {
    QueuedDirective d = std::move(queue.front());
    queue.pop_front();
    auto it = tasks_.find(d.task_id);
    if (it == tasks_.end()) continue;
    auto& task = it->second;
    TaskState expected = TaskState::kLaunching;
    switch (d.action) {
      case DirectiveAction::kLaunch: break;
      case DirectiveAction::kSuspend: expected = TaskState::kMustSuspend; break;
      case DirectiveAction::kResume: expected = TaskState::kMustResume; break;
      case DirectiveAction::kKill: expected = TaskState::kMustKill; break;
    }
    if (task.state != expected || task.attempt_count != d.attempt ||
        task.assigned_worker != id) {
      // Overtaken, e.g. the task completed before its SUSPEND went out.
      spdlog::debug("dropping {} for {} in state {}", to_string(d.action),
                    d.task_id, to_string(task.state));
      continue;
    }
    if (in_reply.contains(d.task_id)) {
      deferred.push_back(std::move(d));
      continue;
    }
    in_reply.insert(d.task_id);
    Directive out{d.task_id, d.action, std::nullopt};
    if (d.action == DirectiveAction::kLaunch) {
      out.payload = task.descriptor;
    } else {
      transition(task, TransitionEvent::kCommandSent);
    }
    reply.directives.push_back(std::move(out));
  }
  queue = std::move(deferred);
  return reply;
}

std::uint32_t Coordinator::occupied_slots(const WorkerId& id) const {
  std::uint32_t n = 0;
  for (const auto& [tid, t] : tasks_) {
    if (t.assigned_worker == id && occupies_slot(t.state)) ++n;
  }
  return n;
}

std::uint32_t Coordinator::suspensions(const WorkerId& id) const {
  std::uint32_t n = 0;
  for (const auto& [tid, t] : tasks_) {
    if (t.assigned_worker == id && holds_suspension(t.state)) ++n;
  }
  return n;
}

std::uint32_t Coordinator::active_tasks(const WorkerId& id) const {
  std::uint32_t n = 0;
  for (const auto& [tid, t] : tasks_) {
    if (t.assigned_worker == id &&
        (occupies_slot(t.state) || holds_suspension(t.state))) {
      ++n;
    }
  }
  return n;
}

void Coordinator::refresh_worker_counters() {
  for (auto& [wid, w] : workers_) {
    w.slots_running = occupied_slots(wid);
    w.slots_suspended = suspensions(wid);
  }
}

Snapshot Coordinator::snapshot() const {
  Snapshot s;
  s.taken_at = now();
  for (const auto& id : submit_order_) s.tasks.push_back(tasks_.at(id));
  for (const auto& [wid, w] : workers_) {
    auto copy = w;
    copy.alive = worker_alive(wid);
    s.workers.push_back(std::move(copy));
  }
  return s;
}

const TaskRecord& Coordinator::task(const TaskId& id) const {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) throw UnknownTask("unknown task " + id);
  return it->second;
}

TaskRecord& Coordinator::mutable_task(const TaskId& id) {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) throw UnknownTask("unknown task " + id);
  return it->second;
}

const WorkerRecord& Coordinator::worker(const WorkerId& id) const {
  auto it = workers_.find(id);
  if (it == workers_.end()) throw UnknownWorker("unknown worker " + id);
  return it->second;
}

WorkerRecord& Coordinator::mutable_worker(const WorkerId& id) {
  auto it = workers_.find(id);
  if (it == workers_.end()) throw UnknownWorker("unknown worker " + id);
  return it->second;
}

bool Coordinator::worker_alive(const WorkerId& id) const {
  const auto& w = worker(id);
  return now() - w.last_heartbeat <=
         config_.heartbeat_interval_ms * config_.missed_heartbeats_before_dead;
}

void Coordinator::add_observer(Observer observer) {
  observers_.push_back(std::move(observer));
}

void Coordinator::set_transition_sink(TransitionSink sink) {
  sink_ = std::move(sink);
}

std::size_t Coordinator::queued_directives(const WorkerId& id) const {
  auto it = queues_.find(id);
  return it == queues_.end() ? 0 : it->second.size();
}

}  // namespace preempt
