#include "preempt/coordinator_service.hpp"

#include <spdlog/spdlog.h>

#include "preempt/json_codec.hpp"

namespace preempt {

using nlohmann::json;

namespace {

json times_json(const std::vector<Millis>& v) { return json(v); }

std::vector<Millis> times_from(const json& j, const char* key) {
  const auto& arr = codec::field(j, key);
  if (!arr.is_array()) throw MalformedMessage(std::string(key) + " must be an array");
  std::vector<Millis> out;
  for (const auto& v : arr) out.push_back(v.get<Millis>());
  return out;
}

json opt_time(const std::optional<Millis>& t) {
  return t ? json(*t) : json(nullptr);
}

std::optional<Millis> opt_time_from(const json& j, const char* key) {
  const auto& v = codec::field(j, key);
  if (v.is_null()) return std::nullopt;
  return v.get<Millis>();
}

std::optional<std::string> opt_string_from(const json& j, const char* key) {
  const auto& v = codec::field(j, key);
  if (v.is_null()) return std::nullopt;
  return v.get<std::string>();
}

TaskState state_from(const json& j, const char* key) {
  auto s = parse_task_state(codec::string_field(j, key));
  if (!s) throw MalformedMessage(std::string("bad state in ") + key);
  return *s;
}

}  // namespace

json to_json(const Snapshot& s) {
  json tasks = json::array();
  for (const auto& t : s.tasks) {
    json attempts = json::array();
    for (const auto& a : t.past_attempts) {
      attempts.push_back(json{
          {"attempt", a.attempt},
          {"worker", a.worker ? json(*a.worker) : json(nullptr)},
          {"launch_time", opt_time(a.launch_time)},
          {"end_time", opt_time(a.end_time)},
          {"final_state", to_string(a.final_state)},
          {"progress_at_end", a.progress_at_end},
          {"tuples_processed", a.tuples_processed},
          {"suspend_times", times_json(a.suspend_times)},
          {"resume_times", times_json(a.resume_times)}});
    }
    tasks.push_back(json{
        {"task_id", t.task_id},
        {"name", t.name},
        {"priority", to_string(t.priority)},
        {"state", to_string(t.state)},
        {"assigned_worker",
         t.assigned_worker ? json(*t.assigned_worker) : json(nullptr)},
        {"target_worker", t.target_worker ? json(*t.target_worker) : json(nullptr)},
        {"progress_fraction", t.progress_fraction},
        {"submit_time", t.submit_time},
        {"first_launch_time", opt_time(t.first_launch_time)},
        {"launch_time", opt_time(t.launch_time)},
        {"suspend_times", times_json(t.suspend_times)},
        {"resume_times", times_json(t.resume_times)},
        {"completion_time", opt_time(t.completion_time)},
        {"resident_bytes", t.resident_bytes},
        {"swapped_bytes", t.swapped_bytes},
        {"swapped_bytes_peak", t.swapped_bytes_peak},
        {"swap_supported", t.swap_supported},
        {"attempt_count", t.attempt_count},
        {"progress_records_while_suspended", t.progress_records_while_suspended},
        {"resumed_markers", t.resumed_markers},
        {"summary", t.summary ? json{{"tuples", t.summary->tuples},
                                     {"checksum_ok", t.summary->checksum_ok}}
                              : json(nullptr)},
        {"descriptor", codec::to_json(t.descriptor)},
        {"past_attempts", std::move(attempts)},
        {"on_worker_slot", t.on_worker_slot}});
  }
  json workers = json::array();
  for (const auto& w : s.workers) {
    workers.push_back(json{{"worker_id", w.worker_id},
                           {"address", w.address},
                           {"slots_total", w.slots_total},
                           {"slots_running", w.slots_running},
                           {"slots_suspended", w.slots_suspended},
                           {"max_suspended", w.max_suspended},
                           {"last_heartbeat", w.last_heartbeat},
                           {"last_sequence_no", w.last_sequence_no},
                           {"reported_free_slots", w.reported_free_slots},
                           {"alive", w.alive},
                           {"stale_heartbeats", w.stale_heartbeats},
                           {"slot_mismatches", w.slot_mismatches}});
  }
  return json{{"taken_at", s.taken_at},
              {"tasks", std::move(tasks)},
              {"workers", std::move(workers)}};
}

Snapshot snapshot_from_json(const json& j) {
  using namespace codec;
  try {
    Snapshot s;
    s.taken_at = int_field(j, "taken_at");
    for (const auto& tj : field(j, "tasks")) {
      TaskRecord t;
      t.task_id = string_field(tj, "task_id");
      t.name = string_field(tj, "name");
      auto prio = parse_priority(string_field(tj, "priority"));
      if (!prio) throw MalformedMessage("bad priority");
      t.priority = *prio;
      t.state = state_from(tj, "state");
      t.assigned_worker = opt_string_from(tj, "assigned_worker");
      t.target_worker = opt_string_from(tj, "target_worker");
      t.progress_fraction = number_field(tj, "progress_fraction");
      t.submit_time = int_field(tj, "submit_time");
      t.first_launch_time = opt_time_from(tj, "first_launch_time");
      t.launch_time = opt_time_from(tj, "launch_time");
      t.suspend_times = times_from(tj, "suspend_times");
      t.resume_times = times_from(tj, "resume_times");
      t.completion_time = opt_time_from(tj, "completion_time");
      t.resident_bytes = uint_field(tj, "resident_bytes");
      t.swapped_bytes = uint_field(tj, "swapped_bytes");
      t.swapped_bytes_peak = uint_field(tj, "swapped_bytes_peak");
      t.swap_supported = bool_field(tj, "swap_supported");
      t.attempt_count = static_cast<std::uint32_t>(uint_field(tj, "attempt_count"));
      t.progress_records_while_suspended =
          uint_field(tj, "progress_records_while_suspended");
      t.resumed_markers = static_cast<std::uint32_t>(uint_field(tj, "resumed_markers"));
      const auto& summary = field(tj, "summary");
      if (!summary.is_null()) {
        t.summary = TaskSummary{uint_field(summary, "tuples"),
                                bool_field(summary, "checksum_ok")};
      }
      t.descriptor = descriptor_from_json(field(tj, "descriptor"));
      for (const auto& aj : field(tj, "past_attempts")) {
        AttemptRecord a;
        a.attempt = static_cast<std::uint32_t>(uint_field(aj, "attempt"));
        a.worker = opt_string_from(aj, "worker");
        a.launch_time = opt_time_from(aj, "launch_time");
        a.end_time = opt_time_from(aj, "end_time");
        a.final_state = state_from(aj, "final_state");
        a.progress_at_end = number_field(aj, "progress_at_end");
        a.tuples_processed = uint_field(aj, "tuples_processed");
        a.suspend_times = times_from(aj, "suspend_times");
        a.resume_times = times_from(aj, "resume_times");
        t.past_attempts.push_back(std::move(a));
      }
      t.on_worker_slot = bool_field(tj, "on_worker_slot");
      s.tasks.push_back(std::move(t));
    }
    for (const auto& wj : field(j, "workers")) {
      WorkerRecord w;
      w.worker_id = string_field(wj, "worker_id");
      w.address = string_field(wj, "address");
      w.slots_total = static_cast<std::uint32_t>(uint_field(wj, "slots_total"));
      w.slots_running = static_cast<std::uint32_t>(uint_field(wj, "slots_running"));
      w.slots_suspended = static_cast<std::uint32_t>(uint_field(wj, "slots_suspended"));
      w.max_suspended = static_cast<std::uint32_t>(uint_field(wj, "max_suspended"));
      w.last_heartbeat = int_field(wj, "last_heartbeat");
      w.last_sequence_no = uint_field(wj, "last_sequence_no");
      w.reported_free_slots =
          static_cast<std::uint32_t>(uint_field(wj, "reported_free_slots"));
      w.alive = bool_field(wj, "alive");
      w.stale_heartbeats = uint_field(wj, "stale_heartbeats");
      w.slot_mismatches = uint_field(wj, "slot_mismatches");
      s.workers.push_back(std::move(w));
    }
    return s;
  } catch (const json::exception& e) {
    throw MalformedMessage(std::string("bad snapshot: ") + e.what());
  }
}

CoordinatorService::CoordinatorService(Options options,
                                       Coordinator::Clock clock)
    : options_(std::move(options)),
      coordinator_(options_.config, std::move(clock)),
      snapshot_(std::make_shared<Snapshot>()) {
  if (options_.event_log) {
    event_log_.open(*options_.event_log, std::ios::out | std::ios::app);
    if (!event_log_) {
      throw ConfigError("cannot open event log " + options_.event_log->string());
    }
    coordinator_.set_transition_sink([this](const TransitionRecord& r) {
      event_log_ << format_event_line(r) << '\n';
      event_log_.flush();
    });
  }
}

CoordinatorService::~CoordinatorService() { stop(); }

void CoordinatorService::start() {
  listener_ = std::make_unique<net::TcpListener>(options_.listen_host,
                                                 options_.port);
  port_ = listener_->port();
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void CoordinatorService::stop() {
  stopping_ = true;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> conns;
  {
    std::lock_guard lock(connections_mutex_);
    conns.swap(connections_);
  }
  for (auto& t : conns) {
    if (t.joinable()) t.join();
  }
  listener_.reset();
}

void CoordinatorService::publish_locked() {
  auto snap = std::make_shared<const Snapshot>(coordinator_.snapshot());
  {
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(snap);
  }
  changed_.notify_all();
}

std::shared_ptr<const Snapshot> CoordinatorService::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

bool CoordinatorService::wait_until(
    const std::function<bool(const Snapshot&)>& pred,
    std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  std::unique_lock lock(mutex_);
  for (;;) {
    if (pred(*snapshot())) return true;
    if (changed_.wait_until(lock, deadline) == std::cv_status::timeout) {
      return pred(*snapshot());
    }
  }
}

void CoordinatorService::accept_loop() {
  while (!stopping_) {
    std::optional<net::FramedConnection> conn;
    try {
      conn = listener_->accept(std::chrono::milliseconds(100));
    } catch (const std::exception& e) {
      spdlog::error("accept failed: {}", e.what());
      continue;
    }
    if (!conn) continue;
    std::lock_guard lock(connections_mutex_);
    connections_.emplace_back(
        [this, c = std::move(*conn)]() mutable { serve(std::move(c)); });
  }
}

void CoordinatorService::serve(net::FramedConnection conn) {
  while (!stopping_) {
    try {
      if (!conn.readable(std::chrono::milliseconds(100))) continue;
      auto request = conn.receive(std::chrono::milliseconds(1000));
      if (!request) return;
      conn.send(dispatch(*request));
    } catch (const MalformedMessage& e) {
      spdlog::warn("closing connection after malformed frame: {}", e.what());
      return;
    } catch (const std::exception& e) {
      spdlog::debug("connection closed: {}", e.what());
      return;
    }
  }
}

Message CoordinatorService::dispatch(const Message& request) {
  auto error_reply = [](const Error& e) {
    return ControlReply{false, std::string(e.kind()), e.what(), "{}"};
  };
  try {
    if (const auto* reg = std::get_if<RegisterWorker>(&request)) {
      with_coordinator([&](Coordinator& c) { c.register_worker(*reg); });
      return ControlReply{true, "", "", "{}"};
    }
    if (const auto* hb = std::get_if<HeartbeatMessage>(&request)) {
      return with_coordinator(
          [&](Coordinator& c) { return c.handle_heartbeat(*hb); });
    }
    if (const auto* req = std::get_if<ControlRequest>(&request)) {
      return control(*req);
    }
    throw MalformedMessage("unexpected message kind for the coordinator");
  } catch (const Error& e) {
    return error_reply(e);
  }
}

ControlReply CoordinatorService::control(const ControlRequest& req) {
  json body = json::object();
  switch (req.op) {
    case ControlOp::kSubmit: {
      auto id = with_coordinator([&](Coordinator& c) {
        return c.submit_task(*req.descriptor, *req.priority, req.target_worker);
      });
      body["task_id"] = id;
      break;
    }
    case ControlOp::kPreempt:
      with_coordinator([&](Coordinator& c) {
        c.request_preemption(*req.task_id, *req.primitive);
      });
      break;
    case ControlOp::kResume: {
      auto outcome = with_coordinator(
          [&](Coordinator& c) { return c.request_resume(*req.task_id); });
      body["outcome"] = outcome == ResumeOutcome::kRescheduled ? "rescheduled"
                                                               : "resume_queued";
      break;
    }
    case ControlOp::kReschedule:
      with_coordinator([&](Coordinator& c) { c.reschedule(*req.task_id); });
      break;
    case ControlOp::kSnapshot:
      body = to_json(*snapshot());
      break;
  }
  return ControlReply{true, "", "", body.dump()};
}

ControlClient::ControlClient(const net::Endpoint& coordinator,
                             std::chrono::milliseconds timeout)
    : conn_(net::FramedConnection::connect(coordinator, timeout)),
      timeout_(timeout) {}

json ControlClient::call(const ControlRequest& req) {
  auto reply = conn_.call(req, timeout_);
  const auto* r = std::get_if<ControlReply>(&reply);
  if (!r) throw MalformedMessage("expected a control reply");
  if (!r->ok) throw_error_of_kind(r->error_kind, r->error_message);
  try {
    return json::parse(r->body);
  } catch (const json::exception& e) {
    throw MalformedMessage(std::string("bad reply body: ") + e.what());
  }
}

TaskId ControlClient::submit(const TaskLaunchDescriptor& descriptor,
                             Priority priority,
                             std::optional<WorkerId> target_worker) {
  ControlRequest req;
  req.op = ControlOp::kSubmit;
  req.descriptor = descriptor;
  req.priority = priority;
  req.target_worker = std::move(target_worker);
  return codec::string_field(call(req), "task_id");
}

void ControlClient::preempt(const TaskId& id, Primitive primitive) {
  ControlRequest req;
  req.op = ControlOp::kPreempt;
  req.task_id = id;
  req.primitive = primitive;
  call(req);
}

ResumeOutcome ControlClient::resume(const TaskId& id) {
  ControlRequest req;
  req.op = ControlOp::kResume;
  req.task_id = id;
  return codec::string_field(call(req), "outcome") == "rescheduled"
             ? ResumeOutcome::kRescheduled
             : ResumeOutcome::kResumeQueued;
}

void ControlClient::reschedule(const TaskId& id) {
  ControlRequest req;
  req.op = ControlOp::kReschedule;
  req.task_id = id;
  call(req);
}

Snapshot ControlClient::snapshot() {
  ControlRequest req;
  req.op = ControlOp::kSnapshot;
  return snapshot_from_json(call(req));
}

}  // namespace preempt
