#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "preempt/messages.hpp"
#include "preempt/synthetic.hpp"

namespace preempt::testing {

// Directory holding the built tools: $PREEMPT_BIN_DIR, else next to the
// running test binary.
inline std::filesystem::path bin_dir() {
  if (const char* env = std::getenv("PREEMPT_BIN_DIR")) return env;
  return std::filesystem::read_symlink("/proc/self/exe").parent_path();
}

inline std::filesystem::path synthetic_task_binary() { return bin_dir() / "synthetic-task"; }

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("preempt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Work factor giving roughly `seconds` of CPU over `tuples` 1 KiB tuples.
inline std::uint32_t work_factor_for_seconds(double seconds, std::uint64_t tuples) {
  static const double cost = synthetic::measure_work_cost(1024, 512);
  return synthetic::work_factor_for(seconds, tuples, cost);
}

// Descriptor for the real synthetic task over `input` (1 KiB tuples).
inline TaskLaunchDescriptor task_descriptor(const TaskId& id, const std::filesystem::path& input,
                                            std::uint64_t input_bytes, double seconds,
                                            std::uint64_t progress_interval = 64,
                                            std::uint64_t ballast_bytes = 0) {
  TaskLaunchDescriptor d;
  d.task_id = id;
  d.executable = synthetic_task_binary().string();
  d.input_path = input.string();
  d.input_bytes = input_bytes;
  d.tuple_bytes = 1024;
  d.ballast_bytes = ballast_bytes;
  d.progress_interval = progress_interval;
  auto factor = work_factor_for_seconds(seconds, input_bytes / 1024);
  d.arguments = {"--input", input.string(), "--ballast-bytes", std::to_string(ballast_bytes),
                 "--progress-interval", std::to_string(progress_interval), "--tuple-bytes", "1024",
                 "--work-factor", std::to_string(factor), "--output-dir", "{output_dir}"};
  return d;
}

}  // namespace preempt::testing
