// Experiment runner and reporting CLI.
#include <CLI11.hpp>
#include <cmath>
#include <iostream>

#include "log_setup.hpp"
#include "preempt/errors.hpp"
#include "preempt/harness.hpp"
#include "preempt/synthetic.hpp"

namespace h = preempt::harness;

namespace {

std::filesystem::path self_path() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::filesystem::path{} : p;
}

void apply_scale(h::ExperimentConfig& c, bool desk, bool paper, unsigned reps) {
  if (desk) {
    c.low.input_bytes = c.high.input_bytes = 64ull << 20;
    c.repetitions = 3;
  }
  if (paper) {
    c.low.input_bytes = c.high.input_bytes = 512ull << 20;
    c.repetitions = 20;
  }
  if (reps > 0) c.repetitions = reps;
  h::validate(c);
}

void print_run(const h::RunMetrics& m) {
  if (!m.ok) {
    std::cerr << to_string(m.primitive) << " r=" << m.r << " rep " << m.run_index
              << " FAILED: " << m.error << '\n';
    return;
  }
  std::cerr << to_string(m.primitive) << " r=" << m.r << " rep " << m.run_index
            << ": sojourn " << m.sojourn_high_ms << " ms, makespan " << m.makespan_ms
            << " ms, tuples of t_l " << m.tuples_total_low << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"harness: preemption-primitive experiments"};
  std::string level = "info";
  app.add_option("--log-level", level, "trace, debug, info, warn, error");
  app.require_subcommand(1);

  std::string config_path, out_dir, csv;
  unsigned reps = 0;
  bool desk = false, paper = false;
  auto* run = app.add_subcommand("run", "run the primitive x r x repetition matrix");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--reps", reps, "override repetitions");
  auto* desk_flag = run->add_flag("--desk-scale", desk, "64 MiB inputs, 3 repetitions");
  run->add_flag("--paper-scale", paper, "512 MiB inputs, 20 repetitions")->excludes(desk_flag);

  auto* report = app.add_subcommand("report", "render plots and a summary from a CSV");
  report->add_option("--csv", csv, "runs, aggregates or sweep CSV")->required();
  report->add_option("--out", out_dir, "output directory")->required();

  std::string primitive;
  double r = 0, dl = 0, dh = 0, cleanup = 0, page_penalty = 0;
  auto* oracle = app.add_subcommand("oracle", "closed-form sojourn and makespan");
  oracle->add_option("--primitive", primitive, "wait, kill or suspend_resume")->required();
  oracle->add_option("--r", r, "completion rate of t_l at arrival of t_h")->required();
  oracle->add_option("--dl", dl, "duration of t_l (s)")->required();
  oracle->add_option("--dh", dh, "duration of t_h (s)")->required();
  oracle->add_option("--cleanup", cleanup, "kill cleanup overhead (s)");
  oracle->add_option("--page-penalty", page_penalty, "resume paging overhead (s)");

  auto* sweep = app.add_subcommand("sweep", "vary the memory footprint of t_h");
  sweep->add_option("--config", config_path, "experiment config (JSON)")->required();
  sweep->add_option("--out", out_dir, "output directory")->required();

  double target = 0;
  auto* calibrate = app.add_subcommand("calibrate", "find the work factor for a task duration");
  calibrate->add_option("--config", config_path, "experiment config (JSON)")->required();
  calibrate->add_option("--out", out_dir, "directory for the input file")->required();
  calibrate->add_option("--target", target, "seconds (default: config target)");

  std::string gen_path;
  std::uint64_t bytes = 64ull << 20, tuple = 1024, seed = 1;
  auto* gen = app.add_subcommand("gen-input", "write a synthetic input file");
  gen->add_option("--out", gen_path, "file")->required();
  gen->add_option("--bytes", bytes, "total size");
  gen->add_option("--tuple-bytes", tuple, "tuple width");
  gen->add_option("--seed", seed, "generator seed");

  auto* env = app.add_subcommand("env", "report swap and memory facts of this host");

  CLI11_PARSE(app, argc, argv);
  preempt::tools::setup_logging("harness", level);

  try {
    if (*run) {
      auto c = h::load_experiment_config(config_path);
      apply_scale(c, desk, paper, reps);
      auto bin = h::find_binaries(self_path());
      auto inputs = h::prepare_inputs(c, std::filesystem::path(out_dir) / "inputs");
      h::resolve_work_factors(c, bin, inputs);
      std::cerr << "work factors: low " << c.low.work_factor << ", high " << c.high.work_factor
                << '\n';
      auto result = h::run_experiment_matrix(c, bin, inputs, out_dir, print_run);
      std::size_t failed = 0;
      for (const auto& m : result.runs) failed += m.ok ? 0 : 1;
      std::cout << result.runs.size() << " runs (" << failed << " failed), "
                << result.aggregates.size() << " aggregates in " << out_dir << '\n';
      return failed == 0 ? 0 : 1;
    }
    if (*report) {
      auto files = h::render_report(csv, out_dir);
      for (const auto& p : files.plots) std::cout << p.string() << '\n';
      std::cout << files.summary.string() << '\n';
      return 0;
    }
    if (*oracle) {
      auto p = preempt::parse_schedule_action(primitive);
      if (!p) throw preempt::ConfigError("unknown primitive '" + primitive + "'");
      auto o = h::timeline_oracle(*p, r, dl, dh, {cleanup, page_penalty});
      std::cout << "sojourn_s=" << o.sojourn_s << " makespan_s=" << o.makespan_s << '\n';
      return 0;
    }
    if (*sweep) {
      auto c = h::load_experiment_config(config_path);
      auto bin = h::find_binaries(self_path());
      auto inputs = h::prepare_inputs(c, std::filesystem::path(out_dir) / "inputs");
      h::resolve_work_factors(c, bin, inputs);
      auto points = h::footprint_sweep(c, bin, inputs, out_dir, print_run);
      std::cout << points.size() << " sweep points in " << out_dir << '\n';
      return 0;
    }
    if (*calibrate) {
      auto c = h::load_experiment_config(config_path);
      auto bin = h::find_binaries(self_path());
      auto inputs = h::prepare_inputs(c, out_dir);
      auto cal = h::calibrate_work_factor(bin, inputs.low, c.low,
                                          target > 0 ? target : c.target_task_seconds);
      std::cout << "work_factor=" << cal.work_factor << '\n';
      return 0;
    }
    if (*gen) {
      preempt::synthetic::generate_input(gen_path, bytes, tuple, seed);
      return 0;
    }
    if (*env) {
      auto e = h::probe_environment();
      std::cout << "swap_accounting=" << (e.swap_accounting ? "yes" : "no")
                << "\nswap_total_bytes=" << e.swap_total_bytes
                << "\nmem_total_bytes=" << e.mem_total_bytes << "\ncgroup_limit_bytes="
                << (e.cgroup_limit_bytes ? std::to_string(*e.cgroup_limit_bytes) : "none")
                << "\nswappiness="
                << (e.swappiness ? std::to_string(*e.swappiness) : "unknown") << '\n';
      return 0;
    }
  } catch (const preempt::EnvironmentUnsupported& e) {
    std::cerr << "skipped: " << e.what() << '\n';
    return 2;
  } catch (const preempt::Error& e) {
    std::cerr << e.kind() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
