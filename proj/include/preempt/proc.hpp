#pragma once

#include <sys/types.h>

#include <cstdint>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>
#include <string_view>

namespace preempt::proc {

enum class ProcessState { kRunning, kSleeping, kStopped, kZombie, kGone, kOther };

// Reads the state letter from /proc/<pid>/stat.
ProcessState process_state(pid_t pid);

struct MemorySample {
  std::uint64_t resident_bytes = 0;
  // nullopt when the kernel exposes no per-process swap counter (VmSwap).
  std::optional<std::uint64_t> swapped_bytes;
};

// Parses the VmRSS/VmSwap lines of a /proc/<pid>/status document.
std::optional<MemorySample> parse_status(std::string_view status_text);

// nullopt when the process no longer exists (or is a zombie).
std::optional<MemorySample> sample_memory(pid_t pid);

// Per-process swap accounting is available on this host.
bool swap_accounting_available();

struct SystemMemory {
  std::uint64_t mem_total_bytes = 0;
  std::uint64_t mem_available_bytes = 0;
  std::uint64_t swap_total_bytes = 0;
  std::uint64_t swap_free_bytes = 0;
};
std::optional<SystemMemory> system_memory();

// Memory limit of the calling process's cgroup; nullopt when unlimited or
// unknown.
std::optional<std::uint64_t> cgroup_memory_limit();

// /proc/sys/vm/swappiness, when readable.
std::optional<int> swappiness();

// A spawned helper process (coordinator or worker binaries). The child gets
// its own process group; stdout and stderr go to `log` when set.
class ChildProcess {
 public:
  ChildProcess() = default;
  ChildProcess(ChildProcess&& other) noexcept;
  ChildProcess& operator=(ChildProcess&& other) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;
  // Sends SIGKILL to the group and reaps it if still running.
  ~ChildProcess();

  // Throws SpawnFailure.
  static ChildProcess spawn(const std::vector<std::string>& argv,
                            const std::optional<std::filesystem::path>& log = std::nullopt);

  pid_t pid() const noexcept { return pid_; }
  bool running();
  // Sends `sig`, waits up to `grace`, then SIGKILLs the group. Returns the
  // wait status.
  int terminate(int sig, std::chrono::milliseconds grace);

 private:
  pid_t pid_ = -1;
  std::optional<int> status_;
};

}  // namespace preempt::proc
