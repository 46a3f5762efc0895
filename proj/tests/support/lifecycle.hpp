#pragma once

#include <map>
#include <sstream>
#include <string>
#include <utility>

namespace preempt::testing {

// The lifecycle written out edge by edge, independently of the library's
// table: "FROM event TO".
inline constexpr const char* kExpectedEdges = R"(
PENDING launch LAUNCHING
LAUNCHING launched RUNNING
LAUNCHING worker_reported_success SUCCEEDED
LAUNCHING worker_reported_failure FAILED
RUNNING scheduler_suspend MUST_SUSPEND
RUNNING scheduler_kill MUST_KILL
RUNNING worker_reported_success SUCCEEDED
RUNNING worker_reported_failure FAILED
MUST_SUSPEND command_sent SUSPENDING_SENT
MUST_SUSPEND worker_reported_success SUCCEEDED
MUST_SUSPEND worker_reported_failure FAILED
SUSPENDING_SENT worker_confirmed_suspended SUSPENDED
SUSPENDING_SENT worker_reported_success SUCCEEDED
SUSPENDING_SENT worker_reported_failure FAILED
SUSPENDED scheduler_resume MUST_RESUME
SUSPENDED scheduler_kill MUST_KILL
SUSPENDED worker_reported_failure FAILED
MUST_RESUME command_sent RESUMING_SENT
MUST_RESUME worker_reported_failure FAILED
RESUMING_SENT worker_confirmed_running RUNNING
RESUMING_SENT worker_reported_success SUCCEEDED
RESUMING_SENT worker_reported_failure FAILED
MUST_KILL command_sent MUST_KILL
MUST_KILL worker_confirmed_killed CLEANUP
MUST_KILL worker_reported_success SUCCEEDED
MUST_KILL worker_reported_failure FAILED
CLEANUP cleanup_done KILLED
)";

using Key = std::pair<std::string, std::string>;

inline std::map<Key, std::string> expected_edges() {
  std::map<Key, std::string> out;
  std::istringstream in(kExpectedEdges);
  std::string from, event, to;
  while (in >> from >> event >> to) out[{from, event}] = to;
  return out;
}

}  // namespace preempt::testing
