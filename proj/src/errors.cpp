#include "preempt/errors.hpp"

#include "preempt/task_state.hpp"

namespace preempt {

void throw_error_of_kind(std::string_view kind, const std::string& message) {
  if (kind == "IllegalTransition") throw IllegalTransition(message);
  if (kind == "MalformedMessage") throw MalformedMessage(message);
  if (kind == "UnknownWorker") throw UnknownWorker(message);
  if (kind == "UnknownTask") throw UnknownTask(message);
  if (kind == "SwapBudgetExceeded") throw SwapBudgetExceeded(message);
  if (kind == "SlotUnavailable") throw SlotUnavailable(message);
  if (kind == "NoFreeSlot") throw NoFreeSlot(message);
  if (kind == "SpawnFailure") throw SpawnFailure(message);
  if (kind == "ProcessGone") throw ProcessGone(message);
  if (kind == "PreconditionViolation") throw PreconditionViolation(message);
  if (kind == "TriggerNeverFired") throw TriggerNeverFired(message);
  if (kind == "EnvironmentUnsupported") throw EnvironmentUnsupported(message);
  if (kind == "ConfigError") throw ConfigError(message);
  if (kind == "EmptyCandidates") throw EmptyCandidates(message);
  if (kind == "SchemaMismatch") throw SchemaMismatch(message);
  if (kind == "NetworkError") throw NetworkError(message);
  if (kind == "RunTimeout") throw RunTimeout(message);
  if (kind == "TaskFailed") throw TaskFailed(message);
  throw Error(std::string(kind) + ": " + message);
}

}  // namespace preempt
