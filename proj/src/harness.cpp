#include "preempt/harness.hpp"

#include <signal.h>
#include <sys/wait.h>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "preempt/coordinator_service.hpp"
#include "preempt/errors.hpp"
#include "preempt/proc.hpp"
#include "preempt/synthetic.hpp"

namespace preempt::harness {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

TaskShape shape_from_json(const json& j, const std::string& where) {
  reject_unknown(j,
                 {"input_bytes", "tuple_bytes", "ballast_bytes", "progress_interval",
                  "work_factor", "verify_ballast", "seed"},
                 where);
  TaskShape s;
  read(j, "input_bytes", s.input_bytes);
  read(j, "tuple_bytes", s.tuple_bytes);
  read(j, "ballast_bytes", s.ballast_bytes);
  read(j, "progress_interval", s.progress_interval);
  read(j, "work_factor", s.work_factor);
  read(j, "verify_ballast", s.verify_ballast);
  read(j, "seed", s.seed);
  return s;
}

json shape_to_json(const TaskShape& s) {
  return {{"input_bytes", s.input_bytes},         {"tuple_bytes", s.tuple_bytes},
          {"ballast_bytes", s.ballast_bytes},     {"progress_interval", s.progress_interval},
          {"work_factor", s.work_factor},         {"verify_ballast", s.verify_ballast},
          {"seed", s.seed}};
}

void validate_shape(const TaskShape& s, const std::string& which) {
  if (s.tuple_bytes < synthetic::kMinTupleBytes) {
    throw ConfigError(which + ".tuple_bytes must be at least " +
                      std::to_string(synthetic::kMinTupleBytes));
  }
  if (s.input_bytes == 0 || s.input_bytes % s.tuple_bytes != 0) {
    throw ConfigError(which + ".input_bytes must be a positive multiple of tuple_bytes");
  }
  if (s.progress_interval == 0) throw ConfigError(which + ".progress_interval must be positive");
}

std::string r_label(double r) {
  return std::to_string(static_cast<int>(std::lround(r * 100)));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << csv_line(header) << '\n';
  for (const auto& r : rows) out << csv_line(r) << '\n';
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j,
                 {"primitives", "r_grid", "repetitions", "max_retries",
                  "heartbeat_interval_ms", "slots", "max_suspended", "low", "high",
                  "target_task_seconds", "run_timeout_ms", "sweep",
                  "per_task_memory_cap_bytes", "description"},
                 "experiment config");
  ExperimentConfig c;
  if (j.contains("primitives")) {
    c.primitives.clear();
    for (const auto& p : j.at("primitives")) {
      if (!p.is_string()) throw ConfigError("primitives must be strings");
      auto a = parse_schedule_action(p.get<std::string>());
      if (!a) throw ConfigError("unknown primitive '" + p.get<std::string>() + "'");
      c.primitives.push_back(*a);
    }
  }
  read(j, "r_grid", c.r_grid);
  read(j, "repetitions", c.repetitions);
  read(j, "max_retries", c.max_retries);
  read(j, "heartbeat_interval_ms", c.heartbeat_interval_ms);
  read(j, "slots", c.slots);
  read(j, "max_suspended", c.max_suspended);
  if (j.contains("low")) c.low = shape_from_json(j.at("low"), "low");
  if (j.contains("high")) c.high = shape_from_json(j.at("high"), "high");
  read(j, "target_task_seconds", c.target_task_seconds);
  read(j, "run_timeout_ms", c.run_timeout_ms);
  read(j, "per_task_memory_cap_bytes", c.per_task_memory_cap_bytes);
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    reject_unknown(s, {"high_ballast_bytes", "r", "repetitions"}, "sweep");
    read(s, "high_ballast_bytes", c.sweep_high_ballast);
    read(s, "r", c.sweep_r);
    read(s, "repetitions", c.sweep_repetitions);
  }
  validate(c);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  json prims = json::array();
  for (auto p : c.primitives) prims.push_back(std::string(to_string(p)));
  return {{"primitives", prims},
          {"r_grid", c.r_grid},
          {"repetitions", c.repetitions},
          {"max_retries", c.max_retries},
          {"heartbeat_interval_ms", c.heartbeat_interval_ms},
          {"slots", c.slots},
          {"max_suspended", c.max_suspended},
          {"low", shape_to_json(c.low)},
          {"high", shape_to_json(c.high)},
          {"target_task_seconds", c.target_task_seconds},
          {"run_timeout_ms", c.run_timeout_ms},
          {"per_task_memory_cap_bytes", c.per_task_memory_cap_bytes},
          {"sweep",
           {{"high_ballast_bytes", c.sweep_high_ballast},
            {"r", c.sweep_r},
            {"repetitions", c.sweep_repetitions}}}};
}

void validate(const ExperimentConfig& c) {
  if (c.primitives.empty()) throw ConfigError("primitives must not be empty");
  if (c.r_grid.empty()) throw ConfigError("r_grid must not be empty");
  for (double r : c.r_grid) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("every r must lie in (0,1)");
  }
  if (c.repetitions == 0) throw ConfigError("repetitions must be positive");
  if (c.heartbeat_interval_ms <= 0) throw ConfigError("heartbeat_interval_ms must be positive");
  // The script relies on t_l and t_h contending for one slot.
  if (c.slots != 1) throw ConfigError("experiments run on a single slot");
  if (c.max_suspended == 0) throw ConfigError("max_suspended must be positive");
  if (!(c.target_task_seconds > 0.0)) throw ConfigError("target_task_seconds must be positive");
  if (c.run_timeout_ms <= 0) throw ConfigError("run_timeout_ms must be positive");
  if (!(c.sweep_r > 0.0 && c.sweep_r < 1.0)) throw ConfigError("sweep r must lie in (0,1)");
  validate_shape(c.low, "low");
  validate_shape(c.high, "high");
}

Binaries find_binaries(const std::filesystem::path& self) {
  std::vector<std::filesystem::path> dirs;
  if (!self.empty()) dirs.push_back(self.parent_path());
  if (const char* env = std::getenv("PREEMPT_BIN_DIR")) dirs.emplace_back(env);
  for (const auto& d : dirs) {
    Binaries b{d / "synthetic-task", d / "preempt-worker"};
    if (std::filesystem::exists(b.synthetic_task) && std::filesystem::exists(b.worker)) {
      return b;
    }
  }
  throw ConfigError("synthetic-task and preempt-worker not found next to " + self.string() +
                    " or in $PREEMPT_BIN_DIR");
}

Inputs prepare_inputs(const ExperimentConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto make = [&](const TaskShape& s, const std::string& stem) {
    auto path = dir / (stem + "-" + std::to_string(s.input_bytes) + "-" +
                       std::to_string(s.tuple_bytes) + "-" + std::to_string(s.seed) + ".in");
    if (!std::filesystem::exists(path) || std::filesystem::file_size(path) != s.input_bytes) {
      spdlog::info("generating {} ({} bytes)", path.string(), s.input_bytes);
      synthetic::generate_input(path, s.input_bytes, s.tuple_bytes, s.seed);
    }
    return path;
  };
  return {make(c.low, "low"), make(c.high, "high")};
}

TaskLaunchDescriptor make_descriptor(const TaskShape& shape, const std::filesystem::path& input,
                                     const Binaries& bin) {
  TaskLaunchDescriptor d;
  d.executable = bin.synthetic_task.string();
  d.input_path = input.string();
  d.input_bytes = shape.input_bytes;
  d.tuple_bytes = shape.tuple_bytes;
  d.ballast_bytes = shape.ballast_bytes;
  d.progress_interval = shape.progress_interval;
  d.arguments = {"--input",
                 input.string(),
                 "--ballast-bytes",
                 std::to_string(shape.ballast_bytes),
                 "--progress-interval",
                 std::to_string(shape.progress_interval),
                 "--tuple-bytes",
                 std::to_string(shape.tuple_bytes),
                 "--work-factor",
                 std::to_string(std::max<std::uint32_t>(1, shape.work_factor)),
                 "--output-dir",
                 "{output_dir}"};
  if (shape.verify_ballast) d.arguments.push_back("--verify-ballast");
  return d;
}

namespace {

// Wall time of one complete task run at `factor`.
double time_task(const Binaries& bin, const std::filesystem::path& input, TaskShape shape,
                 std::uint32_t factor) {
  shape.work_factor = factor;
  auto d = make_descriptor(shape, input, bin);
  auto scratch = std::filesystem::temp_directory_path() /
                 ("preempt-calibrate-" + std::to_string(::getpid()));
  std::filesystem::create_directories(scratch);
  std::vector<std::string> argv{d.executable};
  for (auto a : d.arguments) argv.push_back(a == "{output_dir}" ? scratch.string() : a);
  auto t0 = std::chrono::steady_clock::now();
  auto child = proc::ChildProcess::spawn(argv, scratch / "probe.log");
  int status = child.terminate(0, std::chrono::hours(1));
  double elapsed = seconds_since(t0);
  std::error_code ec;
  std::filesystem::remove_all(scratch, ec);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw TaskFailed("calibration probe failed with status " + std::to_string(status));
  }
  return elapsed;
}

}  // namespace

Calibration calibrate_work_factor(const Binaries& bin, const std::filesystem::path& input,
                                  const TaskShape& shape, double target_seconds) {
  std::uint64_t tuples = shape.input_bytes / shape.tuple_bytes;
  double cost = synthetic::measure_work_cost(shape.tuple_bytes, 2000);
  std::uint32_t estimate = synthetic::work_factor_for(target_seconds, tuples, cost);
  // Two probes give a line t = a + b f; a covers reading and ballast setup.
  std::uint32_t f1 = std::max<std::uint32_t>(1, estimate / 8);
  std::uint32_t f2 = std::max<std::uint32_t>(f1 + 1, estimate / 4);
  double t1 = time_task(bin, input, shape, f1);
  double t2 = time_task(bin, input, shape, f2);
  Calibration cal;
  cal.probe_work_factor = f2;
  cal.probe_seconds = t2;
  double b = (t2 - t1) / static_cast<double>(f2 - f1);
  double a = t1 - b * f1;
  if (b > 0 && target_seconds > a) {
    cal.work_factor = static_cast<std::uint32_t>(std::max(1.0, std::round((target_seconds - a) / b)));
  } else {
    cal.work_factor = std::max<std::uint32_t>(1, estimate);
  }
  spdlog::info("calibration: f={} took {:.2f}s, f={} took {:.2f}s -> work factor {}", f1, t1, f2,
               t2, cal.work_factor);
  return cal;
}

void resolve_work_factors(ExperimentConfig& c, const Binaries& bin, const Inputs& in) {
  if (c.low.work_factor == 0) {
    c.low.work_factor = calibrate_work_factor(bin, in.low, c.low, c.target_task_seconds).work_factor;
  }
  if (c.high.work_factor == 0) {
    bool same = c.high.input_bytes == c.low.input_bytes &&
                c.high.tuple_bytes == c.low.tuple_bytes &&
                c.high.ballast_bytes == c.low.ballast_bytes;
    c.high.work_factor =
        same ? c.low.work_factor
             : calibrate_work_factor(bin, in.high, c.high, c.target_task_seconds).work_factor;
  }
}

RunMetrics metrics_from_outcome(const ScheduleOutcome& o, const RunRequest& req,
                                std::uint64_t high_ballast_bytes) {
  RunMetrics m;
  m.primitive = req.primitive;
  m.r = req.r;
  m.run_index = req.run_index;
  m.sojourn_high_ms = o.sojourn_high_ms();
  m.makespan_ms = o.makespan_ms();
  m.swapped_bytes_low = o.low_swapped_bytes_peak;
  m.tuples_total_low = o.low_tuples_total;
  m.input_tuples_low = o.input_tuples_low;
  m.low_summary_tuples = o.low_summary ? o.low_summary->tuples : 0;
  m.low_attempts = o.low_attempts;
  m.progress_records_while_suspended = o.low_progress_records_while_suspended;
  m.trigger_progress = o.low_progress_at_trigger;
  m.completion_won_race = o.completion_won_race;
  m.low_run_ms = o.low_completion - o.low_first_launch;
  m.high_run_ms = o.high_completion - o.high_first_launch;
  m.high_ballast_bytes = high_ballast_bytes;
  m.illegal_events = find_illegal_event(o.transitions).has_value() ? 1 : 0;
  return m;
}

RunMetrics run_single(const ExperimentConfig& c, const Binaries& bin, const Inputs& in,
                      const RunRequest& req, const std::filesystem::path& scratch,
                      ScheduleOutcome* outcome_out) {
  auto dir = scratch / (std::string(to_string(req.primitive)) + "-r" + r_label(req.r) + "-" +
                        std::to_string(req.run_index));
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  std::filesystem::create_directories(dir / "work");

  CoordinatorService::Options opt;
  opt.config.heartbeat_interval_ms = c.heartbeat_interval_ms;
  opt.config.per_task_memory_cap_bytes = c.per_task_memory_cap_bytes;
  opt.event_log = dir / "coordinator-events.tsv";
  CoordinatorService service(opt);
  service.start();

  const WorkerId worker_id = "worker-1";
  auto worker = proc::ChildProcess::spawn(
      {bin.worker.string(), "--coordinator", "127.0.0.1:" + std::to_string(service.port()),
       "--worker-id", worker_id, "--slots", std::to_string(c.slots), "--max-suspended",
       std::to_string(c.max_suspended), "--heartbeat-ms", std::to_string(c.heartbeat_interval_ms),
       "--workdir", (dir / "work").string(), "--event-log", (dir / "worker-events.tsv").string()},
      dir / "worker.log");

  bool registered = service.wait_until(
      [&](const Snapshot& s) { return s.find_worker(worker_id) != nullptr; },
      std::chrono::seconds(10));
  if (!registered) {
    throw NetworkError("worker did not register within 10 s (see " +
                       (dir / "worker.log").string() + ")");
  }

  ExperimentSpec spec;
  spec.rule = TriggerRule{req.r, req.primitive, default_after_high(req.primitive)};
  TaskShape high = c.high;
  if (req.high_ballast_override) high.ballast_bytes = *req.high_ballast_override;
  spec.low = make_descriptor(c.low, in.low, bin);
  spec.high = make_descriptor(high, in.high, bin);
  spec.worker = worker_id;
  spec.timeout = std::chrono::milliseconds(c.run_timeout_ms);

  ScheduleOutcome outcome = run_schedule(service, spec);
  worker.terminate(SIGTERM, std::chrono::seconds(5));
  service.stop();

  RunMetrics m = metrics_from_outcome(outcome, req, high.ballast_bytes);
  if (!outcome.low_summary || !outcome.low_summary->checksum_ok) {
    throw TaskFailed("t_l finished without a valid summary");
  }
  if (!outcome.high_summary || !outcome.high_summary->checksum_ok) {
    throw TaskFailed("t_h finished without a valid summary");
  }
  if (outcome_out) *outcome_out = std::move(outcome);
  std::filesystem::remove_all(dir, ec);
  return m;
}

MatrixResult run_experiment_matrix(const ExperimentConfig& c, const Binaries& bin,
                                   const Inputs& in, const std::filesystem::path& out,
                                   const ProgressFn& progress) {
  validate(c);
  std::filesystem::create_directories(out);
  auto scratch = out / "scratch";
  MatrixResult result;
  std::ofstream runs_csv(out / "runs.csv", std::ios::trunc);
  if (!runs_csv) throw ConfigError("cannot write " + (out / "runs.csv").string());
  runs_csv << csv_line(kRunColumns) << '\n';

  // Repetition outermost so slow drift of the host spreads over all cells.
  for (unsigned rep = 0; rep < c.repetitions; ++rep) {
    for (double r : c.r_grid) {
      for (auto primitive : c.primitives) {
        RunRequest req{primitive, r, rep, std::nullopt};
        RunMetrics m;
        std::string last_error;
        bool done = false;
        for (unsigned attempt = 1; attempt <= c.max_retries + 1 && !done; ++attempt) {
          try {
            m = run_single(c, bin, in, req, scratch);
            m.attempts_used = attempt;
            done = true;
          } catch (const std::exception& e) {
            last_error = e.what();
            spdlog::warn("{} r={} rep {} attempt {} failed: {}", to_string(primitive), r, rep,
                         attempt, e.what());
          }
        }
        if (!done) {
          m = RunMetrics{};
          m.primitive = primitive;
          m.r = r;
          m.run_index = rep;
          m.ok = false;
          m.attempts_used = c.max_retries + 1;
          m.error = last_error;
        }
        runs_csv << csv_line(to_row(m)) << '\n';
        runs_csv.flush();
        if (progress) progress(m);
        result.runs.push_back(std::move(m));
      }
    }
  }
  result.aggregates = aggregate(result.runs);
  std::vector<std::vector<std::string>> rows;
  for (const auto& a : result.aggregates) rows.push_back(to_row(a));
  write_csv(out / "aggregates.csv", kAggregateColumns, rows);
  std::error_code ec;
  std::filesystem::remove(scratch, ec);
  return result;
}

EnvironmentReport probe_environment() {
  EnvironmentReport env;
  env.swap_accounting = proc::swap_accounting_available();
  if (auto m = proc::system_memory()) {
    env.swap_total_bytes = m->swap_total_bytes;
    env.mem_total_bytes = m->mem_total_bytes;
  }
  env.cgroup_limit_bytes = proc::cgroup_memory_limit();
  env.swappiness = proc::swappiness();
  return env;
}

void require_sweep_environment(const EnvironmentReport& env, const ExperimentConfig& c) {
  if (env.swap_total_bytes == 0) {
    throw EnvironmentUnsupported("no swap configured; suspended tasks cannot be paged out");
  }
  if (!env.swap_accounting) {
    throw EnvironmentUnsupported("the kernel exposes no per-process swap counter (VmSwap)");
  }
  if (c.sweep_high_ballast.empty()) {
    throw EnvironmentUnsupported("the config has no sweep.high_ballast_bytes grid");
  }
  std::uint64_t cap = env.cgroup_limit_bytes.value_or(env.mem_total_bytes);
  std::uint64_t largest =
      c.low.ballast_bytes + *std::max_element(c.sweep_high_ballast.begin(), c.sweep_high_ballast.end());
  if (largest <= cap) {
    throw EnvironmentUnsupported("memory cap of " + std::to_string(cap) +
                                 " bytes is never exceeded by the sweep (largest pair " +
                                 std::to_string(largest) + " bytes)");
  }
}

std::vector<SweepPoint> footprint_sweep(const ExperimentConfig& c, const Binaries& bin,
                                        const Inputs& in, const std::filesystem::path& out,
                                        const ProgressFn& progress) {
  auto env = probe_environment();
  require_sweep_environment(env, c);
  if (env.swappiness && *env.swappiness != 0) {
    spdlog::warn("vm.swappiness is {}; the reference setup uses 0 (not changed here)",
                 *env.swappiness);
  }
  std::filesystem::create_directories(out);
  auto scratch = out / "scratch";
  std::vector<SweepPoint> points;
  std::vector<std::vector<std::string>> run_rows;
  for (auto ballast : c.sweep_high_ballast) {
    std::vector<double> swapped, sj_s, sj_k, mk_s, mk_w;
    for (unsigned rep = 0; rep < std::max(1u, c.sweep_repetitions); ++rep) {
      for (auto primitive : {ScheduleAction::kSuspendResume, ScheduleAction::kKillRestart,
                             ScheduleAction::kWait}) {
        RunRequest req{primitive, c.sweep_r, rep, ballast};
        RunMetrics m = run_single(c, bin, in, req, scratch);
        run_rows.push_back(to_row(m));
        if (progress) progress(m);
        switch (primitive) {
          case ScheduleAction::kSuspendResume:
            swapped.push_back(static_cast<double>(m.swapped_bytes_low));
            sj_s.push_back(static_cast<double>(m.sojourn_high_ms));
            mk_s.push_back(static_cast<double>(m.makespan_ms));
            break;
          case ScheduleAction::kKillRestart:
            sj_k.push_back(static_cast<double>(m.sojourn_high_ms));
            break;
          case ScheduleAction::kWait:
            mk_w.push_back(static_cast<double>(m.makespan_ms));
            break;
        }
      }
    }
    SweepPoint p;
    p.high_ballast_bytes = ballast;
    p.swapped_bytes_low = summarize(swapped).mean;
    p.sojourn_suspend_ms = summarize(sj_s).mean;
    p.sojourn_kill_ms = summarize(sj_k).mean;
    p.makespan_suspend_ms = summarize(mk_s).mean;
    p.makespan_wait_ms = summarize(mk_w).mean;
    p.sojourn_degradation = p.sojourn_suspend_ms / p.sojourn_kill_ms - 1.0;
    p.makespan_degradation = p.makespan_suspend_ms / p.makespan_wait_ms - 1.0;
    points.push_back(p);
  }
  write_csv(out / "sweep-runs.csv", kRunColumns, run_rows);
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : points) rows.push_back(to_row(p));
  write_csv(out / "sweep.csv", kSweepColumns, rows);
  return points;
}

}  // namespace preempt::harness
