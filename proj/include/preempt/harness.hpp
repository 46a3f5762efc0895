#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "preempt/scheduler.hpp"

namespace preempt::harness {

// Shape of one synthetic task.
struct TaskShape {
  std::uint64_t input_bytes = 64ull << 20;
  std::uint64_t tuple_bytes = 1024;
  std::uint64_t ballast_bytes = 0;
  std::uint64_t progress_interval = 1024;
  // 0: calibrate so the task runs for about target_task_seconds.
  std::uint32_t work_factor = 0;
  bool verify_ballast = false;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  std::vector<ScheduleAction> primitives{ScheduleAction::kWait, ScheduleAction::kKillRestart,
                                         ScheduleAction::kSuspendResume};
  std::vector<double> r_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  unsigned repetitions = 3;
  unsigned max_retries = 2;
  Millis heartbeat_interval_ms = 300;
  std::uint32_t slots = 1;
  std::uint32_t max_suspended = 1;
  TaskShape low;
  TaskShape high;
  double target_task_seconds = 15.0;
  Millis run_timeout_ms = 600'000;
  // Footprint sweep: t_h ballast sizes, trigger point and repetitions.
  std::vector<std::uint64_t> sweep_high_ballast;
  double sweep_r = 0.5;
  unsigned sweep_repetitions = 1;
  // Per-task memory cap used by the suspension admission check (0: off).
  std::uint64_t per_task_memory_cap_bytes = 0;
};

// Reads the JSON experiment file; unknown keys are rejected. Throws
// ConfigError.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
void validate(const ExperimentConfig& c);

// Locations of the task and worker executables.
struct Binaries {
  std::filesystem::path synthetic_task;
  std::filesystem::path worker;
};

// Looks next to `self` (normally /proc/self/exe), then in
// $PREEMPT_BIN_DIR. Throws ConfigError when a binary is missing.
Binaries find_binaries(const std::filesystem::path& self);

struct RunMetrics {
  ScheduleAction primitive = ScheduleAction::kWait;
  double r = 0.0;
  unsigned run_index = 0;
  bool ok = true;
  Millis sojourn_high_ms = 0;
  Millis makespan_ms = 0;
  std::uint64_t swapped_bytes_low = 0;
  std::uint64_t tuples_total_low = 0;
  std::uint64_t input_tuples_low = 0;
  std::uint64_t low_summary_tuples = 0;
  std::uint32_t low_attempts = 0;
  std::uint64_t progress_records_while_suspended = 0;
  double trigger_progress = 0.0;
  bool completion_won_race = false;
  // First launch to completion of each task; pure run times under wait.
  Millis low_run_ms = 0;
  Millis high_run_ms = 0;
  std::uint64_t high_ballast_bytes = 0;
  std::size_t illegal_events = 0;
  unsigned attempts_used = 1;
  std::string error;
};

struct Stat {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

// Mean, min and max; all zero for an empty sample.
Stat summarize(const std::vector<double>& values);
// max <= 1.05 mean and min >= 0.95 mean.
bool spread_ok(const Stat& s);

struct AggregateMetrics {
  ScheduleAction primitive = ScheduleAction::kWait;
  double r = 0.0;
  std::size_t runs = 0;
  std::size_t failed_runs = 0;
  Stat sojourn_high_ms;
  Stat makespan_ms;
  Stat swapped_bytes_low;
  Stat tuples_total_low;
  Stat low_run_ms;
  Stat high_run_ms;
  // Spread of the two timing metrics.
  bool spread_ok = false;
};

// One aggregate per (primitive, r) cell, in order of first appearance.
// Failed runs are counted but left out of the statistics.
std::vector<AggregateMetrics> aggregate(const std::vector<RunMetrics>& rows);

// CSV tables; the column dictionary is in docs/csv-schema.md.
extern const std::vector<std::string> kRunColumns;
extern const std::vector<std::string> kAggregateColumns;
extern const std::vector<std::string> kSweepColumns;

std::vector<std::string> to_row(const RunMetrics& m);
std::vector<std::string> to_row(const AggregateMetrics& a);
// Throws SchemaMismatch naming the row.
RunMetrics run_from_row(const std::vector<std::string>& cells, std::size_t row_number);
AggregateMetrics aggregate_from_row(const std::vector<std::string>& cells,
                                    std::size_t row_number);

std::string csv_line(const std::vector<std::string>& cells);
// Splits one line, honouring double quotes.
std::vector<std::string> csv_split(const std::string& line);
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

struct OverheadModel {
  double cleanup_s = 0.0;
  double page_penalty_s = 0.0;
};

struct OracleResult {
  double sojourn_s = 0.0;
  double makespan_s = 0.0;
};

// Closed-form two-task timeline. Throws PreconditionViolation unless
// 0 < r < 1 and both durations are positive.
OracleResult timeline_oracle(ScheduleAction primitive, double r, double duration_low_s,
                             double duration_high_s, const OverheadModel& overhead = {});

// Spearman rank correlation with average ranks for ties; NaN when either
// side is constant or the sizes differ.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Input files generated from a config, shared by every run of a matrix.
struct Inputs {
  std::filesystem::path low;
  std::filesystem::path high;
};
Inputs prepare_inputs(const ExperimentConfig& c, const std::filesystem::path& dir);

struct Calibration {
  std::uint32_t work_factor = 1;
  double probe_seconds = 0.0;
  std::uint32_t probe_work_factor = 1;
};

// Times the real task binary at a probe factor and scales it linearly to
// hit `target_seconds`.
Calibration calibrate_work_factor(const Binaries& bin, const std::filesystem::path& input,
                                  const TaskShape& shape, double target_seconds);

// Fills in zero work factors by calibration.
void resolve_work_factors(ExperimentConfig& c, const Binaries& bin, const Inputs& in);

TaskLaunchDescriptor make_descriptor(const TaskShape& shape, const std::filesystem::path& input,
                                     const Binaries& bin);

struct RunRequest {
  ScheduleAction primitive = ScheduleAction::kWait;
  double r = 0.5;
  unsigned run_index = 0;
  std::optional<std::uint64_t> high_ballast_override;
};

// One fresh coordinator plus worker process; scratch space under
// `scratch`, removed afterwards. Returns the outcome of the script as
// well when `outcome` is set.
RunMetrics run_single(const ExperimentConfig& c, const Binaries& bin, const Inputs& in,
                      const RunRequest& req, const std::filesystem::path& scratch,
                      ScheduleOutcome* outcome = nullptr);

RunMetrics metrics_from_outcome(const ScheduleOutcome& o, const RunRequest& req,
                                std::uint64_t high_ballast_bytes);

struct MatrixResult {
  std::vector<RunMetrics> runs;
  std::vector<AggregateMetrics> aggregates;
};

using ProgressFn = std::function<void(const RunMetrics&)>;

// Every primitive x r x repetition; writes runs.csv and aggregates.csv
// into `out`. Failed runs are retried up to max_retries and then kept as
// failed rows.
MatrixResult run_experiment_matrix(const ExperimentConfig& c, const Binaries& bin,
                                   const Inputs& in, const std::filesystem::path& out,
                                   const ProgressFn& progress = {});

struct SweepPoint {
  std::uint64_t high_ballast_bytes = 0;
  double swapped_bytes_low = 0.0;
  double sojourn_suspend_ms = 0.0;
  double sojourn_kill_ms = 0.0;
  double makespan_suspend_ms = 0.0;
  double makespan_wait_ms = 0.0;
  double sojourn_degradation = 0.0;   // vs kill
  double makespan_degradation = 0.0;  // vs wait
};

struct EnvironmentReport {
  bool swap_accounting = false;
  std::uint64_t swap_total_bytes = 0;
  std::uint64_t mem_total_bytes = 0;
  std::optional<std::uint64_t> cgroup_limit_bytes;
  std::optional<int> swappiness;
};
EnvironmentReport probe_environment();

// Throws EnvironmentUnsupported unless the host has swap, per-process swap
// accounting and a memory cap (cgroup limit, else physical RAM) that the
// largest ballast pair of the sweep exceeds.
void require_sweep_environment(const EnvironmentReport& env, const ExperimentConfig& c);

std::vector<SweepPoint> footprint_sweep(const ExperimentConfig& c, const Binaries& bin,
                                        const Inputs& in, const std::filesystem::path& out,
                                        const ProgressFn& progress = {});
std::vector<std::string> to_row(const SweepPoint& p);

struct ReportFiles {
  std::vector<std::filesystem::path> plots;
  std::filesystem::path summary;
  std::vector<std::string> warnings;
};

// Reads a runs, aggregates or sweep CSV (told apart by the header) and
// writes SVG plots plus summary.md into `out`. Throws SchemaMismatch.
ReportFiles render_report(const std::filesystem::path& csv, const std::filesystem::path& out);

}  // namespace preempt::harness
