#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace preempt {

// Base of every error raised by the framework. The concrete type names
// double as the error "kind" carried in control replies on the wire.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual std::string_view kind() const noexcept { return "Error"; }
};

#define PREEMPT_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                              \
   public:                                                                 \
    using Error::Error;                                                    \
    std::string_view kind() const noexcept override { return #Name; }      \
  }

PREEMPT_DEFINE_ERROR(MalformedMessage);
PREEMPT_DEFINE_ERROR(UnknownWorker);
PREEMPT_DEFINE_ERROR(UnknownTask);
PREEMPT_DEFINE_ERROR(SwapBudgetExceeded);
PREEMPT_DEFINE_ERROR(SlotUnavailable);
PREEMPT_DEFINE_ERROR(NoFreeSlot);
PREEMPT_DEFINE_ERROR(SpawnFailure);
PREEMPT_DEFINE_ERROR(ProcessGone);
PREEMPT_DEFINE_ERROR(PreconditionViolation);
PREEMPT_DEFINE_ERROR(TriggerNeverFired);
PREEMPT_DEFINE_ERROR(EnvironmentUnsupported);
PREEMPT_DEFINE_ERROR(ConfigError);
PREEMPT_DEFINE_ERROR(EmptyCandidates);
PREEMPT_DEFINE_ERROR(SchemaMismatch);
PREEMPT_DEFINE_ERROR(NetworkError);
PREEMPT_DEFINE_ERROR(RunTimeout);
PREEMPT_DEFINE_ERROR(TaskFailed);

#undef PREEMPT_DEFINE_ERROR

// Rebuilds a typed error from the kind/message pair of a control reply.
[[noreturn]] void throw_error_of_kind(std::string_view kind,
                                      const std::string& message);

}  // namespace preempt
