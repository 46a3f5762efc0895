#include "preempt/proc.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>

#include "preempt/errors.hpp"

extern char** environ;

namespace preempt::proc {

namespace {

std::optional<std::string> slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// "VmRSS:    1936 kB" -> bytes
std::optional<std::uint64_t> kib_field(std::string_view text,
                                       std::string_view key) {
  auto pos = text.find(key);
  while (pos != std::string_view::npos && pos != 0 && text[pos - 1] != '\n') {
    pos = text.find(key, pos + 1);
  }
  if (pos == std::string_view::npos) return std::nullopt;
  pos += key.size();
  while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  std::uint64_t v = 0;
  bool any = false;
  while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
    v = v * 10 + static_cast<std::uint64_t>(text[pos] - '0');
    ++pos;
    any = true;
  }
  if (!any) return std::nullopt;
  return v * 1024;
}

}  // namespace

ProcessState process_state(pid_t pid) {
  auto stat = slurp("/proc/" + std::to_string(pid) + "/stat");
  if (!stat) return ProcessState::kGone;
  // The command name may contain spaces or parens; the state follows the
  // last ')'.
  auto close = stat->rfind(')');
  if (close == std::string::npos || close + 2 >= stat->size()) {
    return ProcessState::kOther;
  }
  switch ((*stat)[close + 2]) {
    case 'R': return ProcessState::kRunning;
    case 'S':
    case 'D':
    case 'I': return ProcessState::kSleeping;
    case 'T': return ProcessState::kStopped;
    case 'Z':
    case 'X': return ProcessState::kZombie;
    default: return ProcessState::kOther;
  }
}

std::optional<MemorySample> parse_status(std::string_view status_text) {
  auto rss = kib_field(status_text, "VmRSS:");
  if (!rss) return std::nullopt;
  return MemorySample{*rss, kib_field(status_text, "VmSwap:")};
}

std::optional<MemorySample> sample_memory(pid_t pid) {
  auto status = slurp("/proc/" + std::to_string(pid) + "/status");
  if (!status) return std::nullopt;
  return parse_status(*status);
}

bool swap_accounting_available() {
  auto status = slurp("/proc/self/status");
  return status && kib_field(*status, "VmSwap:").has_value();
}

std::optional<SystemMemory> system_memory() {
  auto info = slurp("/proc/meminfo");
  if (!info) return std::nullopt;
  SystemMemory m;
  m.mem_total_bytes = kib_field(*info, "MemTotal:").value_or(0);
  m.mem_available_bytes = kib_field(*info, "MemAvailable:").value_or(0);
  m.swap_total_bytes = kib_field(*info, "SwapTotal:").value_or(0);
  m.swap_free_bytes = kib_field(*info, "SwapFree:").value_or(0);
  return m;
}

std::optional<std::uint64_t> cgroup_memory_limit() {
  for (const char* path : {"/sys/fs/cgroup/memory.max",
                           "/sys/fs/cgroup/memory/memory.limit_in_bytes"}) {
    auto text = slurp(path);
    if (!text) continue;
    if (text->rfind("max", 0) == 0) return std::nullopt;
    try {
      auto v = std::stoull(*text);
      // cgroup v1 reports "unlimited" as a huge page-aligned number.
      if (v >= (std::uint64_t{1} << 60)) return std::nullopt;
      return v;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::optional<int> swappiness() {
  auto text = slurp("/proc/sys/vm/swappiness");
  if (!text) return std::nullopt;
  try {
    return std::stoi(*text);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}


ChildProcess::ChildProcess(ChildProcess&& other) noexcept
    : pid_(std::exchange(other.pid_, -1)), status_(other.status_) {}

ChildProcess& ChildProcess::operator=(ChildProcess&& other) noexcept {
  if (this != &other) {
    if (pid_ > 0 && !status_) terminate(SIGKILL, std::chrono::milliseconds(0));
    pid_ = std::exchange(other.pid_, -1);
    status_ = other.status_;
  }
  return *this;
}

ChildProcess::~ChildProcess() {
  if (pid_ > 0 && !status_) terminate(SIGKILL, std::chrono::milliseconds(0));
}

ChildProcess ChildProcess::spawn(const std::vector<std::string>& argv,
                                 const std::optional<std::filesystem::path>& log) {
  if (argv.empty()) throw SpawnFailure("empty command line");
  std::vector<std::string> args = argv;
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  cargs.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  if (log) {
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, log->c_str(),
                                     O_WRONLY | O_CREAT | O_APPEND, 0644);
    posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);
  }
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setpgroup(&attr, 0);
  sigset_t empty;
  sigemptyset(&empty);
  posix_spawnattr_setsigmask(&attr, &empty);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP | POSIX_SPAWN_SETSIGMASK);
  ChildProcess child;
  int rc = ::posix_spawn(&child.pid_, cargs[0], &actions, &attr, cargs.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) {
    child.pid_ = -1;
    throw SpawnFailure("spawn " + argv[0] + ": " + std::strerror(rc));
  }
  return child;
}

bool ChildProcess::running() {
  if (pid_ <= 0 || status_) return false;
  int status = 0;
  pid_t r = ::waitpid(pid_, &status, WNOHANG);
  if (r == pid_) {
    status_ = status;
    return false;
  }
  return true;
}

int ChildProcess::terminate(int sig, std::chrono::milliseconds grace) {
  if (pid_ <= 0) return 0;
  if (status_) return *status_;
  ::kill(pid_, sig);
  auto deadline = std::chrono::steady_clock::now() + grace;
  while (running() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  if (!status_) {
    ::kill(-pid_, SIGKILL);
    ::kill(pid_, SIGKILL);
    int status = 0;
    while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
    status_ = status;
  }
  return *status_;
}

}  // namespace preempt::proc
