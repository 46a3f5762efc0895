#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace preempt::synthetic {

// Tuple layout (tuple_bytes wide, newline terminated):
//   '#' <10-digit index> ':' <8 hex FNV-1a of payload> ':' <payload> '\n'
inline constexpr std::size_t kTupleHeaderBytes = 21;
inline constexpr std::size_t kMinTupleBytes = 32;

std::uint32_t fnv1a(std::string_view bytes) noexcept;

// Writes a deterministic pseudo-random input. The file appears atomically:
// on any error no partial file is left at `path`.
// Throws PreconditionViolation when tuple_bytes does not divide total_bytes
// or is below kMinTupleBytes, and std::system_error on I/O failure.
void generate_input(const std::filesystem::path& path,
                    std::uint64_t total_bytes, std::uint64_t tuple_bytes,
                    std::uint64_t seed);

// Parses one tuple; nullopt on a malformed record. Returns the payload.
std::optional<std::string_view> parse_tuple(std::string_view tuple,
                                            std::uint64_t expected_index) noexcept;

// The per-tuple "parsing work": `rounds` mixing passes over the payload.
std::uint64_t tuple_work(std::string_view payload, std::uint32_t rounds) noexcept;

struct TaskConfig {
  std::filesystem::path input;
  std::uint64_t ballast_bytes = 0;
  std::uint64_t progress_interval = 1024;  // tuples
  std::uint64_t tuple_bytes = 1024;
  bool verify_ballast = false;
  std::uint32_t work_factor = 1;
  // Receives one small file per progress chunk when set.
  std::optional<std::filesystem::path> output_dir;
};

struct RunResult {
  std::uint64_t tuples = 0;
  bool checksum_ok = true;
  int exit_code = 0;
  std::string error;
};

// Runs the mapper, writing the progress protocol to `out_fd`:
//   "PROGRESS <fraction>\n" every progress_interval tuples and at the end,
//   "SUMMARY tuples=<n> checksum=<ok|fail>\n" on success.
RunResult run_task(const TaskConfig& config, int out_fd);

// Installs the TSTP/CONT handlers of the task binary: TSTP re-raises the
// default stop, CONT writes "RESUMED\n" to `out_fd`.
void install_job_control_handlers(int out_fd);

// Seconds of CPU per unit of work factor per tuple, measured in-process on
// `sample_tuples` synthetic tuples.
double measure_work_cost(std::uint64_t tuple_bytes, std::uint64_t sample_tuples);

// Work factor that makes a task over `tuples` tuples run for roughly
// `target_seconds`, given a cost from measure_work_cost.
std::uint32_t work_factor_for(double target_seconds, std::uint64_t tuples,
                              double cost_per_unit);

}  // namespace preempt::synthetic
