#include "preempt/worker.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>
#include <poll.h>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>

#include "preempt/coordinator.hpp"

extern char** environ;

namespace preempt {

struct Worker::LocalTask {
  TaskId id;
  std::uint32_t attempt = 1;
  pid_t pid = -1;
  net::Fd out;  // read end of the task's stdout pipe
  TaskState observed = TaskState::kRunning;
  double progress = 0.0;
  std::uint64_t resident_bytes = 0;
  std::uint64_t swapped_bytes = 0;
  std::uint64_t swapped_peak = 0;
  bool swap_supported = true;
  std::uint64_t progress_records = 0;
  std::uint64_t records_while_suspended = 0;
  std::uint32_t resumed_markers = 0;
  std::optional<TaskSummary> summary;
  std::filesystem::path temp_dir;
  std::string partial;
  bool kill_requested = false;
  bool reaped = false;
  bool acknowledged = false;
  std::optional<int> wait_status;
  std::thread supervisor;
};

namespace {

void sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

std::string describe_status(int status) {
  if (WIFEXITED(status)) return "exit " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status)) return std::string("signal ") + strsignal(WTERMSIG(status));
  return "status " + std::to_string(status);
}

}  // namespace

Worker::Worker(WorkerOptions options) : options_(std::move(options)) {
  std::filesystem::create_directories(options_.workdir);
  if (options_.event_log) {
    event_log_.open(*options_.event_log, std::ios::out | std::ios::app);
    if (!event_log_) {
      throw ConfigError("cannot open event log " + options_.event_log->string());
    }
  }
}

Worker::~Worker() {
  stop_heartbeating();
  std::vector<std::thread> supervisors;
  {
    std::lock_guard lock(mutex_);
    for (auto& [id, t] : tasks_) {
      if (!t->reaped && t->pid > 0) {
        t->kill_requested = true;
        ::kill(-t->pid, SIGKILL);
      }
    }
    for (auto& [id, t] : tasks_) {
      if (t->supervisor.joinable()) supervisors.push_back(std::move(t->supervisor));
    }
    for (auto& r : retired_) supervisors.push_back(std::move(r));
  }
  for (auto& s : supervisors) s.join();
}

LocalTaskView Worker::launch(const TaskLaunchDescriptor& descriptor) {
  validate(descriptor);
  std::unique_lock lock(mutex_);
  if (running_locked() >= options_.slots_total) {
    throw NoFreeSlot("all " + std::to_string(options_.slots_total) +
                     " slot(s) busy on " + options_.worker_id);
  }
  if (::access(descriptor.executable.c_str(), X_OK) != 0) {
    throw SpawnFailure("cannot execute " + descriptor.executable + ": " +
                       std::strerror(errno));
  }
  if (auto it = tasks_.find(descriptor.task_id); it != tasks_.end()) {
    if (!it->second->reaped) {
      throw PreconditionViolation("task " + descriptor.task_id +
                                  " is still alive on this worker");
    }
    if (it->second->supervisor.joinable()) {
      retired_.push_back(std::move(it->second->supervisor));
    }
    tasks_.erase(it);
  }

  auto task = std::make_unique<LocalTask>();
  task->id = descriptor.task_id;
  task->attempt = descriptor.attempt;
  task->temp_dir = options_.workdir / descriptor.task_id;
  std::error_code ec;
  std::filesystem::remove_all(task->temp_dir, ec);
  std::filesystem::create_directories(task->temp_dir);

  std::vector<std::string> args{descriptor.executable};
  for (const auto& a : descriptor.arguments) {
    args.push_back(a == "{output_dir}" ? task->temp_dir.string() : a);
  }
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    throw SpawnFailure(std::string("pipe: ") + std::strerror(errno));
  }
  net::Fd read_end(fds[0]);
  net::Fd write_end(fds[1]);
  ::fcntl(read_end.get(), F_SETFL, ::fcntl(read_end.get(), F_GETFL) | O_NONBLOCK);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, write_end.get(), STDOUT_FILENO);
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  // Own process group, so signals reach the task's children too.
  posix_spawnattr_setpgroup(&attr, 0);
  sigset_t defaults;
  sigemptyset(&defaults);
  for (int sig : {SIGTSTP, SIGCONT, SIGTTIN, SIGTTOU, SIGINT, SIGTERM, SIGPIPE,
                  SIGCHLD}) {
    sigaddset(&defaults, sig);
  }
  posix_spawnattr_setsigdefault(&attr, &defaults);
  sigset_t empty;
  sigemptyset(&empty);
  posix_spawnattr_setsigmask(&attr, &empty);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP | POSIX_SPAWN_SETSIGDEF |
                                      POSIX_SPAWN_SETSIGMASK);
  pid_t pid = -1;
  int rc = ::posix_spawn(&pid, argv[0], &actions, &attr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) {
    std::filesystem::remove_all(task->temp_dir, ec);
    throw SpawnFailure("spawn " + descriptor.executable + ": " + std::strerror(rc));
  }
  write_end.reset();

  task->pid = pid;
  task->out = std::move(read_end);
  task->swap_supported = proc::swap_accounting_available();
  LocalTask* raw = task.get();
  tasks_[descriptor.task_id] = std::move(task);
  log_event_locked(*raw, TaskState::kPending, "launch", TaskState::kRunning);
  raw->supervisor = std::thread([this, raw] { supervise(raw); });
  changed_.notify_all();
  return view_of(*raw);
}

void Worker::suspend(const TaskId& id) {
  pid_t pid;
  {
    std::lock_guard lock(mutex_);
    auto& t = find_locked(id);
    if (is_terminal(t.observed)) {
      throw ProcessGone("task " + id + " already ended as " +
                        std::string(to_string(t.observed)));
    }
    if (t.observed != TaskState::kRunning) {
      throw PreconditionViolation("suspend needs RUNNING, " + id + " is " +
                                  std::string(to_string(t.observed)));
    }
    pid = t.pid;
    ::kill(-pid, SIGTSTP);
  }
  auto deadline = std::chrono::steady_clock::now() + options_.state_timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    auto state = proc::process_state(pid);
    std::lock_guard lock(mutex_);
    auto& t = find_locked(id);
    if (t.reaped) {
      throw ProcessGone("task " + id + " exited before it stopped");
    }
    if (state == proc::ProcessState::kStopped) {
      // Stopped processes write nothing more, so this drain empties the
      // channel of everything produced before the stop.
      drain_locked(t);
      t.observed = TaskState::kSuspended;
      if (auto m = proc::sample_memory(pid)) {
        t.resident_bytes = m->resident_bytes;
        t.swapped_bytes = m->swapped_bytes.value_or(0);
        t.swapped_peak = std::max(t.swapped_peak, t.swapped_bytes);
      }
      log_event_locked(t, TaskState::kRunning, "suspend", TaskState::kSuspended);
      changed_.notify_all();
      return;
    }
    sleep_for(options_.state_poll);
  }
  spdlog::error("{} did not stop within {} ms; killing it", id,
                options_.state_timeout.count());
  ::kill(-pid, SIGKILL);  // reaped as FAILED: kill_requested stays false
}

void Worker::resume(const TaskId& id) {
  pid_t pid;
  {
    std::lock_guard lock(mutex_);
    auto& t = find_locked(id);
    if (is_terminal(t.observed)) {
      throw ProcessGone("task " + id + " already ended as " +
                        std::string(to_string(t.observed)));
    }
    if (t.observed != TaskState::kSuspended) {
      throw PreconditionViolation("resume needs SUSPENDED, " + id + " is " +
                                  std::string(to_string(t.observed)));
    }
    pid = t.pid;
    // Swap held while suspended, sampled right before the process pages back in.
    if (auto m = proc::sample_memory(pid)) {
      t.resident_bytes = m->resident_bytes;
      t.swapped_bytes = m->swapped_bytes.value_or(0);
      t.swapped_peak = std::max(t.swapped_peak, t.swapped_bytes);
    }
    t.observed = TaskState::kRunning;
    log_event_locked(t, TaskState::kSuspended, "resume", TaskState::kRunning);
    ::kill(-pid, SIGCONT);
  }
  auto deadline = std::chrono::steady_clock::now() + options_.state_timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    auto state = proc::process_state(pid);
    if (state != proc::ProcessState::kStopped) return;
    sleep_for(options_.state_poll);
  }
  spdlog::error("{} still stopped {} ms after SIGCONT", id,
                options_.state_timeout.count());
}

void Worker::kill(const TaskId& id) {
  std::unique_lock lock(mutex_);
  auto& t = find_locked(id);
  if (t.reaped) return;
  t.kill_requested = true;
  // SIGKILL also ends a stopped process; no SIGCONT needed first.
  ::kill(-t.pid, SIGKILL);
  changed_.wait_for(lock, std::chrono::seconds(10), [&] { return t.reaped; });
}

std::optional<proc::MemorySample> Worker::sample_memory(const TaskId& id) const {
  std::lock_guard lock(mutex_);
  const auto* t = find_locked(id);
  if (!t) throw UnknownTask("unknown task " + id);
  if (t->reaped) return std::nullopt;
  return proc::sample_memory(t->pid);
}

void Worker::apply(const CommandMessage& command) {
  for (const auto& d : command.directives) {
    try {
      switch (d.action) {
        case DirectiveAction::kLaunch:
          try {
            launch(*d.payload);
          } catch (const Error& e) {
            spdlog::warn("launch of {} failed: {}", d.task_id, e.what());
            std::lock_guard lock(mutex_);
            record_failed_launch_locked(*d.payload, e.what());
          }
          break;
        case DirectiveAction::kSuspend:
          suspend(d.task_id);
          break;
        case DirectiveAction::kResume:
          resume(d.task_id);
          break;
        case DirectiveAction::kKill:
          kill(d.task_id);
          break;
      }
    } catch (const ProcessGone& e) {
      spdlog::info("{}: {}", to_string(d.action), e.what());
    } catch (const Error& e) {
      spdlog::warn("{} {} failed: {}", to_string(d.action), d.task_id, e.what());
    }
  }
}

HeartbeatMessage Worker::build_heartbeat() {
  std::lock_guard lock(mutex_);
  HeartbeatMessage hb;
  hb.worker_id = options_.worker_id;
  hb.sequence_no = ++sequence_no_;
  hb.timestamp = steady_millis();
  for (auto& [id, t] : tasks_) {
    if (t->acknowledged) continue;
    if (!t->reaped) {
      drain_locked(*t);
      if (auto m = proc::sample_memory(t->pid)) {
        t->resident_bytes = m->resident_bytes;
        t->swap_supported = m->swapped_bytes.has_value();
        t->swapped_bytes = m->swapped_bytes.value_or(0);
        t->swapped_peak = std::max(t->swapped_peak, t->swapped_bytes);
      }
    }
    TaskReport r;
    r.task_id = t->id;
    r.attempt = t->attempt;
    r.observed_state = t->observed;
    r.progress_fraction = std::clamp(t->progress, 0.0, 1.0);
    r.resident_bytes = t->resident_bytes;
    r.swapped_bytes = t->swapped_bytes;
    r.swap_supported = t->swap_supported;
    r.swapped_bytes_peak = t->swapped_peak;
    r.progress_records_while_suspended = t->records_while_suspended;
    r.resumed_markers = t->resumed_markers;
    r.summary = t->summary;
    hb.task_reports.push_back(std::move(r));
  }
  hb.free_slots = options_.slots_total - std::min(options_.slots_total, running_locked());
  return hb;
}

void Worker::acknowledge(const HeartbeatMessage& delivered) {
  std::lock_guard lock(mutex_);
  for (const auto& r : delivered.task_reports) {
    if (!is_terminal(r.observed_state)) continue;
    auto it = tasks_.find(r.task_id);
    if (it != tasks_.end() && it->second->attempt == r.attempt &&
        it->second->observed == r.observed_state) {
      it->second->acknowledged = true;
    }
  }
}

std::optional<LocalTaskView> Worker::task(const TaskId& id) const {
  std::lock_guard lock(mutex_);
  const auto* t = find_locked(id);
  if (!t) return std::nullopt;
  return view_of(*t);
}

std::vector<LocalTaskView> Worker::tasks() const {
  std::lock_guard lock(mutex_);
  std::vector<LocalTaskView> out;
  for (const auto& [id, t] : tasks_) out.push_back(view_of(*t));
  return out;
}

std::uint32_t Worker::free_slots() const {
  std::lock_guard lock(mutex_);
  return options_.slots_total - std::min(options_.slots_total, running_locked());
}

bool Worker::wait_for(const TaskId& id,
                      const std::function<bool(const LocalTaskView&)>& pred,
                      std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  return changed_.wait_for(lock, timeout, [&] {
    const auto* t = find_locked(id);
    return t && pred(view_of(*t));
  });
}

void Worker::run_heartbeat_loop(const net::Endpoint& coordinator,
                                std::stop_token stop) {
  using namespace std::chrono;
  net::FramedConnection conn;
  milliseconds backoff(100);
  const milliseconds interval(options_.heartbeat_interval_ms);
  while (!stop.stop_requested()) {
    if (!conn.open()) {
      try {
        conn = net::FramedConnection::connect(coordinator, milliseconds(2000));
        auto reply = conn.call(
            RegisterWorker{options_.worker_id, "", options_.slots_total,
                           options_.max_suspended},
            milliseconds(5000));
        const auto* ack = std::get_if<ControlReply>(&reply);
        if (!ack || !ack->ok) throw NetworkError("registration refused");
        backoff = milliseconds(100);
      } catch (const std::exception& e) {
        spdlog::warn("coordinator {}:{} unreachable: {}", coordinator.host,
                     coordinator.port, e.what());
        conn.close();
        std::unique_lock lock(mutex_);
        beat_cv_.wait_for(lock, stop, backoff, [] { return false; });
        backoff = std::min(backoff * 2, milliseconds(2000));
        continue;
      }
    }

    auto sent_at = steady_clock::now();
    {
      std::lock_guard lock(mutex_);
      beat_now_ = false;
    }
    HeartbeatMessage hb = build_heartbeat();
    try {
      auto reply = conn.call(hb, milliseconds(5000));
      if (const auto* cmd = std::get_if<CommandMessage>(&reply)) {
        acknowledge(hb);
        apply(*cmd);
      } else if (const auto* r = std::get_if<ControlReply>(&reply); r && !r->ok) {
        spdlog::warn("heartbeat rejected ({}): re-registering", r->error_message);
        conn.close();
        continue;
      }
    } catch (const std::exception& e) {
      spdlog::warn("heartbeat failed: {}", e.what());
      conn.close();
      continue;
    }

    std::unique_lock lock(mutex_);
    beat_cv_.wait_until(lock, stop, sent_at + interval, [this] { return beat_now_; });
  }
}

void Worker::start_heartbeating(const net::Endpoint& coordinator) {
  heartbeat_thread_ = std::jthread(
      [this, coordinator](std::stop_token stop) { run_heartbeat_loop(coordinator, stop); });
}

void Worker::stop_heartbeating() {
  if (heartbeat_thread_.joinable()) {
    heartbeat_thread_.request_stop();
    heartbeat_thread_.join();
  }
}

void Worker::request_immediate_heartbeat() {
  {
    std::lock_guard lock(mutex_);
    beat_now_ = true;
  }
  beat_cv_.notify_all();
}

Worker::LocalTask& Worker::find_locked(const TaskId& id) {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) throw UnknownTask("unknown task " + id);
  return *it->second;
}

const Worker::LocalTask* Worker::find_locked(const TaskId& id) const {
  auto it = tasks_.find(id);
  return it == tasks_.end() ? nullptr : it->second.get();
}

bool Worker::drain_locked(LocalTask& t) {
  if (!t.out.valid()) return true;
  char buf[4096];
  for (;;) {
    ssize_t n = ::read(t.out.get(), buf, sizeof buf);
    if (n > 0) {
      t.partial.append(buf, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (auto nl = t.partial.find('\n'); nl != std::string::npos;
           nl = t.partial.find('\n', start)) {
        handle_line_locked(t, std::string_view(t.partial).substr(start, nl - start));
        start = nl + 1;
      }
      t.partial.erase(0, start);
      continue;
    }
    if (n == 0) return true;
    if (errno == EINTR) continue;
    return false;  // EAGAIN: nothing more for now
  }
}

void Worker::handle_line_locked(LocalTask& t, std::string_view line) {
  constexpr std::string_view kProgress = "PROGRESS ";
  constexpr std::string_view kSummary = "SUMMARY tuples=";
  if (line.starts_with(kProgress)) {
    double f = 0.0;
    std::string text(line.substr(kProgress.size()));
    try {
      f = std::stod(text);
    } catch (const std::exception&) {
      spdlog::warn("{}: bad progress record '{}'", t.id, line);
      return;
    }
    ++t.progress_records;
    if (t.observed == TaskState::kSuspended) ++t.records_while_suspended;
    t.progress = std::max(t.progress, f);
  } else if (line == "RESUMED") {
    ++t.resumed_markers;
  } else if (line.starts_with(kSummary)) {
    auto rest = line.substr(kSummary.size());
    std::uint64_t tuples = 0;
    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), tuples);
    if (ec != std::errc{}) {
      spdlog::warn("{}: bad summary '{}'", t.id, line);
      return;
    }
    std::string_view tail(p, rest.data() + rest.size() - p);
    t.summary = TaskSummary{tuples, tail == " checksum=ok"};
  }
}

void Worker::supervise(LocalTask* t) {
  for (;;) {
    pollfd p{t->out.get(), POLLIN, 0};
    ::poll(&p, 1, 50);
    bool eof;
    {
      std::lock_guard lock(mutex_);
      eof = drain_locked(*t);
    }
    changed_.notify_all();
    if (eof) break;
  }
  int status = 0;
  while (::waitpid(t->pid, &status, 0) < 0 && errno == EINTR) {
  }
  {
    std::lock_guard lock(mutex_);
    finalize_locked(*t, status);
  }
  changed_.notify_all();
  request_immediate_heartbeat();
}

void Worker::finalize_locked(LocalTask& t, int wait_status) {
  drain_locked(t);
  t.out.reset();
  t.reaped = true;
  t.wait_status = wait_status;
  TaskState from = t.observed;
  bool clean_exit = WIFEXITED(wait_status) && WEXITSTATUS(wait_status) == 0;
  if (clean_exit && t.summary && t.summary->checksum_ok) {
    t.observed = TaskState::kSucceeded;
  } else if (t.kill_requested && WIFSIGNALED(wait_status)) {
    t.observed = TaskState::kKilled;
    std::error_code ec;
    std::filesystem::remove_all(t.temp_dir, ec);
    if (ec) spdlog::warn("cleanup of {} failed: {}", t.temp_dir.string(), ec.message());
  } else {
    t.observed = TaskState::kFailed;
    spdlog::warn("{} failed ({})", t.id, describe_status(wait_status));
  }
  log_event_locked(t, from, "exit", t.observed);
}

void Worker::record_failed_launch_locked(const TaskLaunchDescriptor& d,
                                         const std::string& why) {
  if (auto it = tasks_.find(d.task_id); it != tasks_.end() && !it->second->reaped) {
    return;  // a live attempt keeps its entry
  }
  auto task = std::make_unique<LocalTask>();
  task->id = d.task_id;
  task->attempt = d.attempt;
  task->observed = TaskState::kFailed;
  task->reaped = true;
  log_event_locked(*task, TaskState::kPending, "launch_failed", TaskState::kFailed);
  spdlog::debug("{} recorded as FAILED: {}", d.task_id, why);
  auto& slot = tasks_[d.task_id];
  if (slot && slot->supervisor.joinable()) {
    retired_.push_back(std::move(slot->supervisor));
  }
  slot = std::move(task);
}

std::uint32_t Worker::running_locked() const {
  std::uint32_t n = 0;
  for (const auto& [id, t] : tasks_) {
    if (t->observed == TaskState::kRunning) ++n;
  }
  return n;
}

void Worker::log_event_locked(const LocalTask& t, TaskState from,
                              std::string_view action, TaskState to) {
  if (!event_log_.is_open()) return;
  TransitionRecord r{steady_millis(), t.id, t.attempt, from, std::string(action), to};
  event_log_ << format_event_line(r) << '\n';
  event_log_.flush();
}

LocalTaskView Worker::view_of(const LocalTask& t) {
  LocalTaskView v;
  v.task_id = t.id;
  v.attempt = t.attempt;
  v.pid = t.pid;
  v.observed_state = t.observed;
  v.progress_fraction = t.progress;
  v.resident_bytes = t.resident_bytes;
  v.swapped_bytes = t.swapped_bytes;
  v.swapped_bytes_peak = t.swapped_peak;
  v.swap_supported = t.swap_supported;
  v.progress_records = t.progress_records;
  v.progress_records_while_suspended = t.records_while_suspended;
  v.resumed_markers = t.resumed_markers;
  v.summary = t.summary;
  v.temp_output_dir = t.temp_dir;
  v.wait_status = t.wait_status;
  return v;
}

}  // namespace preempt
