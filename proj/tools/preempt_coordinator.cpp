// Standalone coordinator serving workers and control clients.
#include <signal.h>

#include <CLI11.hpp>
#include <fstream>

#include "log_setup.hpp"
#include "preempt/coordinator_service.hpp"
#include "preempt/errors.hpp"

int main(int argc, char** argv) {
  preempt::CoordinatorService::Options options;
  std::string event_log;
  std::string port_file;
  std::string level = "info";
  std::uint64_t memory_budget = 0;
  CLI::App app{"preempt-coordinator: central task tracker"};
  app.add_option("--host", options.listen_host, "listen address");
  app.add_option("--port", options.port, "listen port, 0 for any");
  app.add_option("--heartbeat-ms", options.config.heartbeat_interval_ms,
                 "expected worker heartbeat interval")
      ->check(CLI::PositiveNumber);
  app.add_option("--missed-heartbeats", options.config.missed_heartbeats_before_dead,
                 "missed heartbeats before a worker counts as dead");
  app.add_option("--per-task-memory-cap", options.config.per_task_memory_cap_bytes,
                 "memory cap per task for suspension admission (bytes, 0 = off)");
  app.add_option("--memory-budget", memory_budget, "RAM plus swap per worker (bytes)");
  app.add_option("--event-log", event_log, "append transition events here");
  app.add_option("--port-file", port_file, "write the bound port here");
  app.add_option("--log-level", level, "trace, debug, info, warn, error");
  CLI11_PARSE(app, argc, argv);
  preempt::tools::setup_logging("coordinator", level);

  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  try {
    if (!event_log.empty()) options.event_log = event_log;
    if (memory_budget > 0) options.config.memory_budget_bytes = memory_budget;
    preempt::CoordinatorService service(options);
    service.start();
    spdlog::info("listening on {}:{}", options.listen_host, service.port());
    if (!port_file.empty()) std::ofstream(port_file) << service.port() << '\n';
    int sig = 0;
    sigwait(&stop_signals, &sig);
    spdlog::info("signal {}: stopping", sig);
    service.stop();
  } catch (const preempt::Error& e) {
    spdlog::error("{}: {}", e.kind(), e.what());
    return 1;
  }
  return 0;
}
