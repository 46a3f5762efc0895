// Worker agent: registers with the coordinator, runs tasks, heartbeats
// until SIGINT or SIGTERM.
#include <signal.h>

#include <CLI11.hpp>

#include "log_setup.hpp"
#include "preempt/errors.hpp"
#include "preempt/worker.hpp"

int main(int argc, char** argv) {
  preempt::WorkerOptions options;
  std::string coordinator;
  std::string workdir = options.workdir.string();
  std::string event_log;
  std::string level = "info";
  CLI::App app{"preempt-worker: runs and preempts task processes"};
  app.add_option("--coordinator", coordinator, "coordinator host:port")->required();
  app.add_option("--worker-id", options.worker_id, "worker id");
  app.add_option("--slots", options.slots_total, "task slots")->check(CLI::PositiveNumber);
  app.add_option("--max-suspended", options.max_suspended, "suspended tasks allowed");
  app.add_option("--heartbeat-ms", options.heartbeat_interval_ms, "heartbeat interval")
      ->check(CLI::PositiveNumber);
  app.add_option("--workdir", workdir, "scratch directory for task outputs");
  app.add_option("--event-log", event_log, "append local task events here");
  app.add_option("--log-level", level, "trace, debug, info, warn, error");
  CLI11_PARSE(app, argc, argv);
  preempt::tools::setup_logging("worker", level);

  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  try {
    options.workdir = workdir;
    if (!event_log.empty()) options.event_log = event_log;
    auto endpoint = preempt::net::parse_endpoint(coordinator);
    preempt::Worker worker(options);
    worker.start_heartbeating(endpoint);
    spdlog::info("{} heartbeating to {} every {} ms", options.worker_id, coordinator,
                 options.heartbeat_interval_ms);
    int sig = 0;
    sigwait(&stop_signals, &sig);
    spdlog::info("signal {}: stopping", sig);
  } catch (const preempt::Error& e) {
    spdlog::error("{}: {}", e.kind(), e.what());
    return 1;
  }
  return 0;
}
