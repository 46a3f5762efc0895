// Control client: submit, preempt, resume, reschedule, snapshot.
#include <CLI11.hpp>
#include <iostream>

#include "log_setup.hpp"
#include "preempt/coordinator_service.hpp"
#include "preempt/errors.hpp"

int main(int argc, char** argv) {
  std::string coordinator = "127.0.0.1:7070";
  CLI::App app{"preempt-ctl: control client for preempt-coordinator"};
  app.add_option("--coordinator", coordinator, "coordinator host:port");
  app.require_subcommand(1);

  preempt::TaskLaunchDescriptor d;
  std::string priority = "LOW";
  std::string target;
  auto* submit = app.add_subcommand("submit", "submit a synthetic task");
  submit->add_option("--executable", d.executable, "task binary")->required();
  submit->add_option("--input", d.input_path, "input file")->required();
  submit->add_option("--input-bytes", d.input_bytes, "input size")->required();
  submit->add_option("--tuple-bytes", d.tuple_bytes, "tuple width")->required();
  submit->add_option("--ballast-bytes", d.ballast_bytes, "ballast");
  submit->add_option("--progress-interval", d.progress_interval, "tuples per progress record")
      ->required();
  submit->add_option("--priority", priority, "HIGH or LOW");
  submit->add_option("--worker", target, "pin to this worker");
  std::vector<std::string> extra;
  submit->add_option("args", extra, "extra task arguments after --")->expected(-1);

  std::string task;
  std::string primitive = "SUSPEND";
  auto* preempt_cmd = app.add_subcommand("preempt", "suspend or kill a running task");
  preempt_cmd->add_option("task", task)->required();
  preempt_cmd->add_option("--primitive", primitive, "SUSPEND or KILL");
  auto* resume = app.add_subcommand("resume", "resume a suspended task");
  resume->add_option("task", task)->required();
  auto* reschedule = app.add_subcommand("reschedule", "restart a killed task");
  reschedule->add_option("task", task)->required();
  auto* snapshot = app.add_subcommand("snapshot", "print the coordinator state as JSON");

  CLI11_PARSE(app, argc, argv);
  preempt::tools::setup_logging("ctl", "warn");
  try {
    preempt::ControlClient client(preempt::net::parse_endpoint(coordinator));
    if (*submit) {
      auto p = preempt::parse_priority(priority);
      if (!p) throw preempt::ConfigError("priority must be HIGH or LOW");
      std::optional<preempt::WorkerId> w;
      if (!target.empty()) w = target;
      d.arguments = {"--input", d.input_path,
                     "--ballast-bytes", std::to_string(d.ballast_bytes),
                     "--progress-interval", std::to_string(d.progress_interval),
                     "--tuple-bytes", std::to_string(d.tuple_bytes),
                     "--output-dir", "{output_dir}"};
      d.arguments.insert(d.arguments.end(), extra.begin(), extra.end());
      std::cout << client.submit(d, *p, w) << '\n';
    } else if (*preempt_cmd) {
      auto p = preempt::parse_primitive(primitive);
      if (!p) throw preempt::ConfigError("primitive must be SUSPEND or KILL");
      client.preempt(task, *p);
    } else if (*resume) {
      auto outcome = client.resume(task);
      std::cout << (outcome == preempt::ResumeOutcome::kResumeQueued ? "resume queued"
                                                                     : "rescheduled")
                << '\n';
    } else if (*reschedule) {
      client.reschedule(task);
    } else if (*snapshot) {
      std::cout << preempt::to_json(client.snapshot()).dump(2) << '\n';
    }
  } catch (const preempt::Error& e) {
    std::cerr << e.kind() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
