// End-to-end acceptance checks. Prints one PASS / FAIL / SKIP line per
// criterion and exits non-zero when any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "preempt/coordinator_service.hpp"
#include "preempt/errors.hpp"
#include "preempt/harness.hpp"
#include "preempt/synthetic.hpp"
#include "preempt/task_state.hpp"
#include "preempt/wire.hpp"
#include "preempt/worker.hpp"
#include "support/lifecycle.hpp"
#include "support/random_messages.hpp"

namespace fs = std::filesystem;
namespace h = preempt::harness;
using namespace preempt;
using namespace std::chrono_literals;

namespace {

// Tolerances and limits of the criteria.
constexpr double kProtocolSeconds = 10.0;
constexpr double kSuspendRunSeconds = 5 * 60.0;
constexpr double kMatrixSeconds = 15 * 60.0;
constexpr double kRelativeTolerance = 0.15;
constexpr double kSpreadCellShare = 0.90;
constexpr double kSuspendOverheadLimit = 0.02;
constexpr double kRankCorrelation = 0.9;
constexpr double kReferenceSojournDegradation = 0.20;
constexpr double kReferenceMakespanDegradation = 0.12;
constexpr int kRoundTrips = 10000;

enum class Verdict { kPass, kFail, kSkip };

struct Line {
  int criterion;
  std::string title;
  Verdict verdict;
  std::string detail;
};

std::vector<Line> g_lines;

void report(int n, const std::string& title, Verdict v, const std::string& detail) {
  const char* tag = v == Verdict::kPass ? "PASS" : v == Verdict::kFail ? "FAIL" : "SKIP";
  std::cout << tag << "  criterion " << n << " (" << title << "): " << detail << std::endl;
  g_lines.push_back({n, title, v, detail});
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pct(double v) { return fmt(100 * v, 1) + "%"; }

// Relative deviation of `got` from `want`.
double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

// ---------------------------------------------------------------- 1

void protocol_suite() {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> problems;
  auto expected = testing::expected_edges();
  std::size_t cells = 0;
  for (auto s : kAllTaskStates) {
    for (auto e : kAllTransitionEvents) {
      ++cells;
      auto it = expected.find({std::string(to_string(s)), std::string(to_string(e))});
      auto next = next_state(s, e);
      bool ok = it == expected.end() ? !next.has_value()
                                     : next.has_value() && to_string(*next) == it->second;
      if (!ok) problems.push_back(std::string(to_string(s)) + "+" + std::string(to_string(e)));
    }
  }
  testing::MessageFactory factory(0xacce97);
  int round_trips = 0;
  for (int i = 0; i < kRoundTrips; ++i) {
    Message m = factory.any();
    try {
      if (decode_message(encode_message(m)) == m) ++round_trips;
      else problems.push_back("round trip " + std::to_string(i));
    } catch (const std::exception& e) {
      problems.push_back("round trip " + std::to_string(i) + ": " + e.what());
    }
  }
  double secs = seconds_since(t0);
  std::ostringstream d;
  d << kAllTaskStates.size() << " states x " << kAllTransitionEvents.size() << " events = " << cells
    << " cells, " << round_trips << "/" << kRoundTrips << " round trips, " << fmt(secs) << " s (limit "
    << kProtocolSeconds << " s)";
  if (!problems.empty()) d << "; mismatches: " << problems.front() << " and " << problems.size() - 1 << " more";
  bool ok = problems.empty() && cells == kAllTaskStates.size() * kAllTransitionEvents.size() &&
            round_trips == kRoundTrips && secs < kProtocolSeconds;
  report(1, "protocol suite", ok ? Verdict::kPass : Verdict::kFail, d.str());
}

// ---------------------------------------------------------------- 2-5

struct MatrixRun {
  h::MatrixResult result;
  std::vector<double> run_seconds;  // wall time of each run, in result order
  double total_seconds = 0.0;
  h::ExperimentConfig config;
};

std::optional<MatrixRun> run_desk_matrix(const fs::path& config_path, const fs::path& out,
                                         std::string& error) {
  try {
    MatrixRun m;
    auto t0 = std::chrono::steady_clock::now();
    m.config = h::load_experiment_config(config_path);
    h::validate(m.config);
    auto bin = h::find_binaries(fs::read_symlink("/proc/self/exe"));
    auto in = h::prepare_inputs(m.config, out / "inputs");
    h::resolve_work_factors(m.config, bin, in);
    std::cerr << "work factors: low " << m.config.low.work_factor << ", high "
              << m.config.high.work_factor << " (calibrated in " << fmt(seconds_since(t0), 1)
              << " s)\n";
    auto last = std::chrono::steady_clock::now();
    m.result = h::run_experiment_matrix(m.config, bin, in, out / "matrix", [&](const h::RunMetrics& r) {
      m.run_seconds.push_back(seconds_since(last));
      last = std::chrono::steady_clock::now();
      std::cerr << to_string(r.primitive) << " r=" << r.r << " rep " << r.run_index << ": "
                << (r.ok ? "sojourn " + std::to_string(r.sojourn_high_ms) + " ms, makespan " +
                               std::to_string(r.makespan_ms) + " ms"
                         : "FAILED " + r.error)
                << '\n';
    });
    m.total_seconds = seconds_since(t0);
    try {
      h::render_report(out / "matrix" / "aggregates.csv", out / "report");
    } catch (const std::exception& e) {
      std::cerr << "report rendering failed: " << e.what() << '\n';
    }
    return m;
  } catch (const std::exception& e) {
    error = e.what();
    return std::nullopt;
  }
}

const h::AggregateMetrics* cell(const MatrixRun& m, ScheduleAction a, double r) {
  for (const auto& agg : m.result.aggregates) {
    if (agg.primitive == a && std::abs(agg.r - r) < 1e-9 && agg.runs > 0) return &agg;
  }
  return nullptr;
}

// Pure task durations from the wait runs, where nothing interrupts either task.
std::optional<std::pair<double, double>> durations(const MatrixRun& m) {
  std::vector<double> dl, dh;
  for (const auto& r : m.result.runs) {
    if (r.ok && r.primitive == ScheduleAction::kWait) {
      dl.push_back(r.low_run_ms / 1000.0);
      dh.push_back(r.high_run_ms / 1000.0);
    }
  }
  if (dl.empty()) return std::nullopt;
  return std::pair{h::summarize(dl).mean, h::summarize(dh).mean};
}

void suspend_correctness(const MatrixRun& m) {
  std::ostringstream d;
  bool ok = true;
  std::size_t checked = 0;
  std::set<double> rs;
  double first_rep_seconds = 0.0;
  for (std::size_t i = 0; i < m.result.runs.size(); ++i) {
    const auto& r = m.result.runs[i];
    if (r.primitive != ScheduleAction::kSuspendResume) continue;
    if (r.run_index == 0 && i < m.run_seconds.size()) first_rep_seconds += m.run_seconds[i];
    rs.insert(r.r);
    ++checked;
    if (!r.ok) {
      ok = false;
      d << "run r=" << r.r << " rep " << r.run_index << " failed (" << r.error << "); ";
      continue;
    }
    if (r.low_summary_tuples != r.input_tuples_low || r.tuples_total_low != r.input_tuples_low) {
      ok = false;
      d << "r=" << r.r << " rep " << r.run_index << " processed " << r.low_summary_tuples << " of "
        << r.input_tuples_low << " tuples; ";
    }
    if (r.progress_records_while_suspended != 0) {
      ok = false;
      d << "r=" << r.r << " rep " << r.run_index << " emitted " << r.progress_records_while_suspended
        << " records while suspended; ";
    }
  }
  ok = ok && checked > 0 && rs.size() == m.config.r_grid.size() && first_rep_seconds < kSuspendRunSeconds;
  d << checked << " suspend/resume runs over r in {";
  bool first = true;
  for (double r : rs) d << (first ? "" : ", ") << r, first = false;
  d << "}: summary tuples equal input tuples and no progress while suspended; one pass over the r grid took "
    << fmt(first_rep_seconds, 1) << " s (limit " << kSuspendRunSeconds << " s)";
  report(2, "end-to-end suspend correctness", ok ? Verdict::kPass : Verdict::kFail, d.str());
}

void primitive_ordering(const MatrixRun& m) {
  auto dur = durations(m);
  std::ostringstream d;
  bool ok = dur.has_value();
  if (!dur) {
    report(3, "primitive ordering", Verdict::kFail, "no successful wait runs to measure D_l");
    return;
  }
  double dl = dur->first;
  d << "D_l = " << fmt(dl) << " s; ";
  for (double r : m.config.r_grid) {
    auto* w = cell(m, ScheduleAction::kWait, r);
    auto* k = cell(m, ScheduleAction::kKillRestart, r);
    auto* s = cell(m, ScheduleAction::kSuspendResume, r);
    if (!w || !k || !s) {
      ok = false;
      d << "r=" << r << ": missing cell; ";
      continue;
    }
    double soj_gap = (w->sojourn_high_ms.mean - s->sojourn_high_ms.mean) / 1000.0;
    double mk_gap = (k->makespan_ms.mean - s->makespan_ms.mean) / 1000.0;
    double soj_want = (1 - r) * dl;
    double mk_want = r * dl;
    bool cell_ok = s->sojourn_high_ms.mean <= w->sojourn_high_ms.mean &&
                   s->makespan_ms.mean <= k->makespan_ms.mean &&
                   rel(soj_gap, soj_want) <= kRelativeTolerance && rel(mk_gap, mk_want) <= kRelativeTolerance;
    ok = ok && cell_ok;
    d << "r=" << r << ": sojourn W-S " << fmt(soj_gap) << " s vs " << fmt(soj_want) << " s ("
      << pct(rel(soj_gap, soj_want)) << "), makespan K-S " << fmt(mk_gap) << " s vs " << fmt(mk_want)
      << " s (" << pct(rel(mk_gap, mk_want)) << ")" << (cell_ok ? "" : " <-") << "; ";
  }
  std::size_t illegal = 0, failed = 0;
  for (const auto& r : m.result.runs) {
    illegal += r.illegal_events;
    failed += !r.ok;
  }
  ok = ok && illegal == 0 && m.total_seconds < kMatrixSeconds;
  d << m.result.runs.size() << " runs (" << failed << " failed, " << illegal
    << " with illegal log events), matrix " << fmt(m.total_seconds / 60, 1) << " min (limit "
    << kMatrixSeconds / 60 << " min); tolerance " << pct(kRelativeTolerance);
  report(3, "primitive ordering", ok ? Verdict::kPass : Verdict::kFail, d.str());
}

void oracle_agreement(const MatrixRun& m) {
  auto dur = durations(m);
  if (!dur) {
    report(4, "oracle agreement", Verdict::kFail, "no successful wait runs to measure D_l and D_h");
    return;
  }
  std::ostringstream d;
  d << "D_l = " << fmt(dur->first) << " s, D_h = " << fmt(dur->second) << " s; ";
  bool ok = true;
  double worst = 0.0;
  std::string worst_cell;
  std::size_t cells = 0;
  for (auto a : m.config.primitives) {
    for (double r : m.config.r_grid) {
      auto* c = cell(m, a, r);
      if (!c) {
        ok = false;
        d << to_string(a) << " r=" << r << " missing; ";
        continue;
      }
      ++cells;
      auto o = h::timeline_oracle(a, r, dur->first, dur->second);
      double es = rel(c->sojourn_high_ms.mean / 1000.0, o.sojourn_s);
      double em = rel(c->makespan_ms.mean / 1000.0, o.makespan_s);
      for (auto [e, what] : {std::pair{es, "sojourn"}, std::pair{em, "makespan"}}) {
        if (e > worst) {
          worst = e;
          worst_cell = std::string(to_string(a)) + " r=" + fmt(r) + " " + what;
        }
        if (e > kRelativeTolerance) {
          ok = false;
          d << to_string(a) << " r=" << r << " " << what << " off by " << pct(e) << "; ";
        }
      }
    }
  }
  ok = ok && cells == 9;
  d << cells << " cells, worst deviation " << pct(worst) << " (" << worst_cell << "), tolerance "
    << pct(kRelativeTolerance);
  report(4, "oracle agreement", ok ? Verdict::kPass : Verdict::kFail, d.str());
}

void kill_waste(const MatrixRun& m) {
  std::ostringstream d;
  bool ok = true;
  std::size_t checked = 0;
  for (const auto& r : m.result.runs) {
    if (r.primitive != ScheduleAction::kKillRestart || std::abs(r.r - 0.5) > 1e-9) continue;
    ++checked;
    if (!r.ok) {
      ok = false;
      d << "rep " << r.run_index << " failed (" << r.error << "); ";
      continue;
    }
    double want = 1.5 * double(r.input_tuples_low);
    double off = double(r.tuples_total_low) - want;
    bool run_ok = std::abs(off) <= double(m.config.low.progress_interval) && r.low_attempts == 2;
    ok = ok && run_ok;
    d << "rep " << r.run_index << ": " << r.tuples_total_low << " tuples vs " << fmt(want, 0) << " ("
      << (off >= 0 ? "+" : "") << fmt(off, 0) << ", " << r.low_attempts << " attempts); ";
  }
  ok = ok && checked > 0;
  d << "granule " << m.config.low.progress_interval << " tuples";
  report(5, "kill waste accounting", ok ? Verdict::kPass : Verdict::kFail, d.str());
}

// ---------------------------------------------------------------- 6

void evaluate_paper_scale(const std::vector<h::AggregateMetrics>& aggs, const std::string& source) {
  std::size_t spread = 0, cells = 0;
  std::map<double, double> wait_mk, susp_mk;
  for (const auto& a : aggs) {
    if (a.runs == 0) continue;
    ++cells;
    spread += a.spread_ok;
    if (a.primitive == ScheduleAction::kWait) wait_mk[a.r] = a.makespan_ms.mean;
    if (a.primitive == ScheduleAction::kSuspendResume) susp_mk[a.r] = a.makespan_ms.mean;
  }
  std::ostringstream d;
  double share = cells ? double(spread) / double(cells) : 0.0;
  bool ok = cells > 0 && share >= kSpreadCellShare;
  d << source << ": spread_ok in " << spread << "/" << cells << " cells (" << pct(share) << ", need "
    << pct(kSpreadCellShare) << "); suspend makespan overhead vs wait:";
  double worst = 0.0;
  for (const auto& [r, mk] : susp_mk) {
    auto it = wait_mk.find(r);
    if (it == wait_mk.end()) continue;
    double overhead = (mk - it->second) / it->second;
    worst = std::max(worst, overhead);
    d << " r=" << r << " " << pct(overhead);
  }
  ok = ok && !susp_mk.empty() && worst < kSuspendOverheadLimit;
  d << " (limit " << pct(kSuspendOverheadLimit) << ")";
  report(6, "paper-scale reproduction", ok ? Verdict::kPass : Verdict::kFail, d.str());
}

void paper_scale(const fs::path& source_dir, const fs::path& out) {
  if (const char* csv = std::getenv("PREEMPT_PAPER_AGGREGATES")) {
    try {
      auto table = h::read_csv(csv);
      if (table.header != h::kAggregateColumns) throw SchemaMismatch("row 1: not an aggregates table");
      std::vector<h::AggregateMetrics> aggs;
      for (std::size_t i = 0; i < table.rows.size(); ++i) {
        aggs.push_back(h::aggregate_from_row(table.rows[i], i + 2));
      }
      evaluate_paper_scale(aggs, csv);
    } catch (const std::exception& e) {
      report(6, "paper-scale reproduction", Verdict::kFail, e.what());
    }
    return;
  }
  const char* run = std::getenv("PREEMPT_PAPER_SCALE");
  if (!run || std::string(run) != "1") {
    report(6, "paper-scale reproduction", Verdict::kSkip,
           "optional; set PREEMPT_PAPER_SCALE=1 to run configs/paper.json here, or "
           "PREEMPT_PAPER_AGGREGATES=<aggregates.csv> to check a finished run");
    return;
  }
  std::string error;
  auto m = run_desk_matrix(source_dir / "configs" / "paper.json", out / "paper", error);
  if (!m) {
    report(6, "paper-scale reproduction", Verdict::kFail, error);
    return;
  }
  evaluate_paper_scale(m->result.aggregates, "configs/paper.json");
}

// ---------------------------------------------------------------- 7

void swap_sweep(const fs::path& source_dir, const fs::path& out) {
  fs::path config_path = source_dir / "configs" / "sweep-desk.json";
  if (const char* p = std::getenv("PREEMPT_SWEEP_CONFIG")) config_path = p;
  h::ExperimentConfig c;
  try {
    c = h::load_experiment_config(config_path);
    h::require_sweep_environment(h::probe_environment(), c);
  } catch (const EnvironmentUnsupported& e) {
    report(7, "swap sweep", Verdict::kSkip, std::string("environment unsupported: ") + e.what());
    return;
  } catch (const std::exception& e) {
    report(7, "swap sweep", Verdict::kFail, e.what());
    return;
  }
  try {
    auto bin = h::find_binaries(fs::read_symlink("/proc/self/exe"));
    auto in = h::prepare_inputs(c, out / "sweep-inputs");
    h::resolve_work_factors(c, bin, in);
    auto points = h::footprint_sweep(c, bin, in, out / "sweep");
    h::render_report(out / "sweep" / "sweep.csv", out / "sweep-report");
    // Sampling noise on an idle swap device; a drop smaller than this is not
    // counted as a decrease.
    constexpr double kSwapSlackBytes = 1 << 20;
    bool monotone = true;
    std::vector<double> sw, ds, dm;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (i > 0 && points[i].swapped_bytes_low + kSwapSlackBytes < points[i - 1].swapped_bytes_low) {
        monotone = false;
      }
      sw.push_back(points[i].swapped_bytes_low);
      ds.push_back(points[i].sojourn_degradation);
      dm.push_back(points[i].makespan_degradation);
    }
    double rho_s = h::spearman(sw, ds), rho_m = h::spearman(sw, dm);
    const auto& worst = points.back();
    bool ok = monotone && rho_s >= kRankCorrelation && rho_m >= kRankCorrelation;
    std::ostringstream d;
    d << points.size() << " points, swapped bytes " << (monotone ? "non-decreasing" : "DECREASING")
      << ", Spearman(swap, sojourn degradation) = " << fmt(rho_s, 3)
      << ", Spearman(swap, makespan degradation) = " << fmt(rho_m, 3) << " (need " << kRankCorrelation
      << "); most constrained point: sojourn +" << pct(worst.sojourn_degradation) << " vs kill (reference "
      << pct(kReferenceSojournDegradation) << "), makespan +" << pct(worst.makespan_degradation)
      << " vs wait (reference " << pct(kReferenceMakespanDegradation) << "), reported only";
    report(7, "swap sweep", ok ? Verdict::kPass : Verdict::kFail, d.str());
  } catch (const std::exception& e) {
    report(7, "swap sweep", Verdict::kFail, e.what());
  }
}

// ---------------------------------------------------------------- 8

void race_trials(int trials, const fs::path& out) {
  auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out / "race");
  const fs::path input = out / "race" / "input";
  const std::uint64_t tuples = 256;
  synthetic::generate_input(input, tuples * 1024, 1024, 99);
  double cost = synthetic::measure_work_cost(1024, 512);

  CoordinatorService::Options opt;
  opt.config.heartbeat_interval_ms = 200;
  opt.event_log = out / "race" / "coordinator-events.tsv";
  CoordinatorService service(opt);
  service.start();
  WorkerOptions wopt;
  wopt.heartbeat_interval_ms = 200;
  wopt.workdir = out / "race" / "work";
  Worker worker(wopt);
  worker.start_heartbeating(net::Endpoint{"127.0.0.1", service.port()});
  bool registered = service.wait_until(
      [](const Snapshot& s) { return s.find_worker("worker-1") != nullptr; }, 10s);

  std::mt19937_64 rng(20260517);
  int succeeded = 0, dropped_before_delivery = 0, exited_before_signal = 0, suspended_first = 0,
      too_late = 0;
  std::vector<std::string> problems;
  if (!registered) problems.push_back("worker never registered");
  const std::string bin = (fs::read_symlink("/proc/self/exe").parent_path() / "synthetic-task").string();

  for (int i = 0; registered && i < trials && problems.size() < 5; ++i) {
    double seconds = std::uniform_real_distribution<double>(0.25, 0.5)(rng);
    auto factor = synthetic::work_factor_for(seconds, tuples, cost);
    TaskLaunchDescriptor d;
    d.executable = bin;
    d.input_path = input.string();
    d.input_bytes = tuples * 1024;
    d.tuple_bytes = 1024;
    d.progress_interval = 16;
    d.arguments = {"--input", input.string(), "--progress-interval", "16", "--tuple-bytes", "1024",
                   "--work-factor", std::to_string(factor), "--output-dir", "{output_dir}"};
    TaskId id = service.with_coordinator(
        [&](Coordinator& c) { return c.submit_task(d, Priority::kLow, WorkerId("worker-1")); });
    auto state_is = [&](TaskState s) {
      return [&, s](const Snapshot& snap) { return snap.find_task(id)->state == s; };
    };
    if (!service.wait_until(state_is(TaskState::kRunning), 5s)) {
      problems.push_back(id + " never ran");
      break;
    }
    // Aim the request at the last stretch of the run, with jitter on both
    // sides of the exit.
    double near_end = std::uniform_real_distribution<double>(0.6, 0.95)(rng);
    worker.wait_for(id, [&](const LocalTaskView& v) { return v.progress_fraction >= near_end || is_terminal(v.observed_state); }, 5s);
    std::this_thread::sleep_for(std::chrono::microseconds(rng() % 60000));
    bool requested = service.with_coordinator([&](Coordinator& c) {
      if (c.task(id).state != TaskState::kRunning) return false;
      c.request_preemption(id, Primitive::kSuspend);
      return true;
    });
    if (!requested) ++too_late;

    bool settled = service.wait_until(
        [&](const Snapshot& s) {
          auto st = s.find_task(id)->state;
          return st == TaskState::kSucceeded || st == TaskState::kSuspended || st == TaskState::kFailed;
        },
        5s);
    if (!settled) {
      problems.push_back(id + " stuck in " + std::string(to_string(service.snapshot()->find_task(id)->state)));
      continue;
    }
    if (service.snapshot()->find_task(id)->state == TaskState::kSuspended) {
      ++suspended_first;
      service.with_coordinator([&](Coordinator& c) { c.request_resume(id); });
      if (!service.wait_until(
              [&](const Snapshot& s) { return is_terminal(s.find_task(id)->state); }, 10s)) {
        problems.push_back(id + " stuck after resume");
        continue;
      }
    }
    auto rec = *service.snapshot()->find_task(id);
    bool record_ok = rec.state == TaskState::kSucceeded && rec.completion_time &&
                     rec.suspend_times.size() - rec.resume_times.size() <= 1 &&
                     rec.resume_times.size() <= rec.suspend_times.size() &&
                     rec.progress_fraction == 1.0 && rec.attempt_count == 1;
    if (!record_ok) {
      problems.push_back(id + " ended " + std::string(to_string(rec.state)) + " at progress " +
                         fmt(rec.progress_fraction, 4) + " with " + std::to_string(rec.suspend_times.size()) +
                         " suspends, " + std::to_string(rec.resume_times.size()) + " resumes");
      continue;
    }
    ++succeeded;
    service.with_coordinator([&](Coordinator& c) {
      for (const auto& t : c.transitions()) {
        if (t.task_id != id || t.to != TaskState::kSucceeded) continue;
        if (t.from == TaskState::kMustSuspend) ++dropped_before_delivery;
        if (t.from == TaskState::kSuspendingSent) ++exited_before_signal;
      }
    });
  }
  auto [illegal, protocol_errors] = service.with_coordinator([](Coordinator& c) {
    return std::pair{find_illegal_event(c.transitions()), c.protocol_errors()};
  });
  worker.stop_heartbeating();
  service.stop();

  bool ok = problems.empty() && succeeded == trials && !illegal && protocol_errors == 0 &&
            dropped_before_delivery > 0;
  std::ostringstream d;
  d << succeeded << "/" << trials << " trials SUCCEEDED; completion landed between MUST_SUSPEND and delivery in "
    << dropped_before_delivery << ", after delivery but before the stop in " << exited_before_signal
    << "; suspended first in " << suspended_first << ", request after completion in " << too_late
    << "; event log " << (illegal ? "has an illegal edge" : "legal") << ", " << protocol_errors
    << " protocol errors, " << fmt(seconds_since(t0), 1) << " s";
  for (const auto& p : problems) d << "; " << p;
  report(8, "race test", ok ? Verdict::kPass : Verdict::kFail, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path out = fs::temp_directory_path() / ("preempt-acceptance-" + std::to_string(::getpid()));
  fs::path source_dir = PREEMPT_SOURCE_DIR;
  std::vector<int> only;
  int trials = 100;
  bool keep = false;
  std::string log_level = "warn";
  app.add_option("--out", out, "working directory for inputs, CSVs and plots");
  app.add_option("--source-dir", source_dir, "repository root (for configs/)");
  app.add_option("--only", only, "criteria to run (default: all)");
  app.add_option("--race-trials", trials, "trials for the race test");
  app.add_flag("--keep", keep, "keep the working directory");
  app.add_option("--log-level", log_level, "spdlog level");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));
  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

  fs::create_directories(out);
  std::cerr << "working directory: " << out.string() << '\n';

  if (wanted(1)) protocol_suite();
  if (wanted(2) || wanted(3) || wanted(4) || wanted(5)) {
    std::string error;
    auto m = run_desk_matrix(source_dir / "configs" / "acceptance.json", out, error);
    if (!m) {
      for (int n : {2, 3, 4, 5}) {
        if (wanted(n)) report(n, "desk matrix", Verdict::kFail, "matrix did not run: " + error);
      }
    } else {
      if (wanted(2)) suspend_correctness(*m);
      if (wanted(3)) primitive_ordering(*m);
      if (wanted(4)) oracle_agreement(*m);
      if (wanted(5)) kill_waste(*m);
    }
  }
  if (wanted(6)) paper_scale(source_dir, out);
  if (wanted(7)) swap_sweep(source_dir, out);
  if (wanted(8)) race_trials(trials, out);

  std::size_t pass = 0, fail = 0, skip = 0;
  for (const auto& l : g_lines) {
    pass += l.verdict == Verdict::kPass;
    fail += l.verdict == Verdict::kFail;
    skip += l.verdict == Verdict::kSkip;
  }
  std::cout << "summary: " << pass << " passed, " << fail << " failed, " << skip << " skipped"
            << std::endl;
  if (!keep && fail == 0) {
    std::error_code ec;
    fs::remove_all(out, ec);
  } else {
    std::cerr << "artifacts kept in " << out.string() << '\n';
  }
  return fail == 0 ? 0 : 1;
}
