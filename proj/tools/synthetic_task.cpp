// Synthetic mapper driven by the worker. Writes the progress protocol to
// stdout and diagnostics to stderr.
#include <unistd.h>

#include <CLI11.hpp>
#include <cstdio>

#include "preempt/synthetic.hpp"

int main(int argc, char** argv) {
  preempt::synthetic::TaskConfig config;
  std::string input;
  std::string output_dir;
  CLI::App app{"synthetic-task: reads and parses a generated input, reporting progress"};
  app.add_option("--input", input, "input file")->required();
  app.add_option("--ballast-bytes", config.ballast_bytes, "memory to allocate and dirty");
  app.add_option("--progress-interval", config.progress_interval, "tuples per progress record")
      ->check(CLI::PositiveNumber);
  app.add_option("--tuple-bytes", config.tuple_bytes, "tuple width");
  app.add_flag("--verify-ballast", config.verify_ballast, "re-read the ballast at the end");
  app.add_option("--work-factor", config.work_factor, "parsing rounds per tuple")
      ->check(CLI::PositiveNumber);
  app.add_option("--output-dir", output_dir, "directory for per-chunk outputs");
  CLI11_PARSE(app, argc, argv);
  config.input = input;
  if (!output_dir.empty()) config.output_dir = output_dir;

  preempt::synthetic::install_job_control_handlers(STDOUT_FILENO);
  auto result = preempt::synthetic::run_task(config, STDOUT_FILENO);
  if (result.exit_code != 0) {
    std::fprintf(stderr, "synthetic-task: %s\n", result.error.c_str());
  }
  return result.exit_code;
}
