#include "preempt/messages.hpp"

#include <array>
#include <utility>

namespace preempt {

namespace {

template <typename Enum, std::size_t N>
std::string_view name_of(const std::array<std::pair<Enum, std::string_view>, N>& names,
                         Enum value) noexcept {
  for (const auto& [e, name] : names) {
    if (e == value) return name;
  }
  return "?";
}

template <typename Enum, std::size_t N>
std::optional<Enum> value_of(
    const std::array<std::pair<Enum, std::string_view>, N>& names,
    std::string_view text) noexcept {
  for (const auto& [e, name] : names) {
    if (name == text) return e;
  }
  return std::nullopt;
}

constexpr std::array<std::pair<Priority, std::string_view>, 2> kPriorities{{
    {Priority::kHigh, "HIGH"},
    {Priority::kLow, "LOW"},
}};

constexpr std::array<std::pair<DirectiveAction, std::string_view>, 4> kActions{{
    {DirectiveAction::kLaunch, "LAUNCH"},
    {DirectiveAction::kSuspend, "SUSPEND"},
    {DirectiveAction::kResume, "RESUME"},
    {DirectiveAction::kKill, "KILL"},
}};

constexpr std::array<std::pair<Primitive, std::string_view>, 2> kPrimitives{{
    {Primitive::kSuspend, "SUSPEND"},
    {Primitive::kKill, "KILL"},
}};

constexpr std::array<std::pair<ControlOp, std::string_view>, 5> kOps{{
    {ControlOp::kSubmit, "submit"},
    {ControlOp::kPreempt, "preempt"},
    {ControlOp::kResume, "resume"},
    {ControlOp::kReschedule, "reschedule"},
    {ControlOp::kSnapshot, "snapshot"},
}};

}  // namespace

std::string_view to_string(Priority p) noexcept { return name_of(kPriorities, p); }
std::string_view to_string(DirectiveAction a) noexcept { return name_of(kActions, a); }
std::string_view to_string(Primitive p) noexcept { return name_of(kPrimitives, p); }
std::string_view to_string(ControlOp op) noexcept { return name_of(kOps, op); }

std::optional<Priority> parse_priority(std::string_view text) noexcept {
  return value_of(kPriorities, text);
}
std::optional<DirectiveAction> parse_directive_action(
    std::string_view text) noexcept {
  return value_of(kActions, text);
}
std::optional<Primitive> parse_primitive(std::string_view text) noexcept {
  return value_of(kPrimitives, text);
}
std::optional<ControlOp> parse_control_op(std::string_view text) noexcept {
  return value_of(kOps, text);
}

void validate(const TaskLaunchDescriptor& d) {
  if (d.executable.empty()) {
    throw PreconditionViolation("launch descriptor has no executable");
  }
  if (d.input_bytes == 0) {
    throw PreconditionViolation("launch descriptor has zero input bytes");
  }
  if (d.tuple_bytes == 0 || d.input_bytes % d.tuple_bytes != 0) {
    throw PreconditionViolation(
        "tuple size must divide the input size of task " + d.task_id);
  }
  if (d.attempt == 0) {
    throw PreconditionViolation("attempt numbers start at 1");
  }
}

}  // namespace preempt
