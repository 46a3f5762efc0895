#include "preempt/wire.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "preempt/json_codec.hpp"

namespace preempt {

namespace codec {

using nlohmann::json;

const json& field(const json& j, const char* key) {
  if (!j.is_object()) throw MalformedMessage("expected an object");
  auto it = j.find(key);
  if (it == j.end()) {
    throw MalformedMessage(std::string("missing field '") + key + "'");
  }
  return *it;
}

std::string string_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string()) {
    throw MalformedMessage(std::string("field '") + key + "' must be a string");
  }
  return v.get<std::string>();
}

std::uint64_t uint_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_unsigned()) {
    throw MalformedMessage(std::string("field '") + key +
                           "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::int64_t int_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_integer()) {
    throw MalformedMessage(std::string("field '") + key +
                           "' must be an integer");
  }
  return v.get<std::int64_t>();
}

double number_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number()) {
    throw MalformedMessage(std::string("field '") + key + "' must be a number");
  }
  double d = v.get<double>();
  if (!std::isfinite(d)) {
    throw MalformedMessage(std::string("field '") + key + "' is not finite");
  }
  return d;
}

bool bool_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_boolean()) {
    throw MalformedMessage(std::string("field '") + key + "' must be a boolean");
  }
  return v.get<bool>();
}

namespace {

std::uint32_t uint32_field(const json& j, const char* key) {
  auto v = uint_field(j, key);
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw MalformedMessage(std::string("field '") + key + "' out of range");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

json to_json(const TaskLaunchDescriptor& d) {
  return json{{"task_id", d.task_id},
              {"attempt", d.attempt},
              {"executable", d.executable},
              {"arguments", d.arguments},
              {"input_path", d.input_path},
              {"input_bytes", d.input_bytes},
              {"tuple_bytes", d.tuple_bytes},
              {"ballast_bytes", d.ballast_bytes},
              {"progress_interval", d.progress_interval}};
}

TaskLaunchDescriptor descriptor_from_json(const json& j) {
  TaskLaunchDescriptor d;
  d.task_id = string_field(j, "task_id");
  d.attempt = uint32_field(j, "attempt");
  d.executable = string_field(j, "executable");
  const auto& args = field(j, "arguments");
  if (!args.is_array()) throw MalformedMessage("'arguments' must be an array");
  for (const auto& a : args) {
    if (!a.is_string()) throw MalformedMessage("arguments must be strings");
    d.arguments.push_back(a.get<std::string>());
  }
  d.input_path = string_field(j, "input_path");
  d.input_bytes = uint_field(j, "input_bytes");
  d.tuple_bytes = uint_field(j, "tuple_bytes");
  d.ballast_bytes = uint_field(j, "ballast_bytes");
  d.progress_interval = uint_field(j, "progress_interval");
  if (d.input_bytes == 0) throw MalformedMessage("input_bytes must be > 0");
  if (d.attempt == 0) throw MalformedMessage("attempt must be >= 1");
  return d;
}

json to_json(const TaskReport& r) {
  json j{{"task_id", r.task_id},
         {"attempt", r.attempt},
         {"observed_state", to_string(r.observed_state)},
         {"progress_fraction", r.progress_fraction},
         {"resident_bytes", r.resident_bytes},
         {"swapped_bytes", r.swapped_bytes},
         {"swap_supported", r.swap_supported},
         {"swapped_bytes_peak", r.swapped_bytes_peak},
         {"progress_records_while_suspended",
          r.progress_records_while_suspended},
         {"resumed_markers", r.resumed_markers}};
  if (r.summary) {
    j["summary"] = json{{"tuples", r.summary->tuples},
                        {"checksum_ok", r.summary->checksum_ok}};
  } else {
    j["summary"] = nullptr;
  }
  return j;
}

TaskReport report_from_json(const json& j) {
  TaskReport r;
  r.task_id = string_field(j, "task_id");
  r.attempt = uint32_field(j, "attempt");
  auto state = parse_task_state(string_field(j, "observed_state"));
  if (!state || !is_observable(*state)) {
    throw MalformedMessage("observed_state outside the reportable subset");
  }
  r.observed_state = *state;
  r.progress_fraction = number_field(j, "progress_fraction");
  if (r.progress_fraction < 0.0 || r.progress_fraction > 1.0) {
    throw MalformedMessage("progress_fraction outside [0,1]");
  }
  r.resident_bytes = uint_field(j, "resident_bytes");
  r.swapped_bytes = uint_field(j, "swapped_bytes");
  r.swap_supported = bool_field(j, "swap_supported");
  r.swapped_bytes_peak = uint_field(j, "swapped_bytes_peak");
  r.progress_records_while_suspended =
      uint_field(j, "progress_records_while_suspended");
  r.resumed_markers = uint32_field(j, "resumed_markers");
  const auto& summary = field(j, "summary");
  if (!summary.is_null()) {
    r.summary = TaskSummary{uint_field(summary, "tuples"),
                            bool_field(summary, "checksum_ok")};
  }
  return r;
}

}  // namespace codec

namespace {

using nlohmann::json;
using namespace codec;

template <typename T>
std::optional<T> optional_of(const json& j, const char* key,
                             T (*read)(const json&, const char*)) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return read(j, key);
}

json encode_body(const RegisterWorker& m) {
  return json{{"kind", "register"},
              {"worker_id", m.worker_id},
              {"address", m.address},
              {"slots_total", m.slots_total},
              {"max_suspended", m.max_suspended}};
}

json encode_body(const HeartbeatMessage& m) {
  json reports = json::array();
  for (const auto& r : m.task_reports) reports.push_back(to_json(r));
  return json{{"kind", "heartbeat"},
              {"worker_id", m.worker_id},
              {"sequence_no", m.sequence_no},
              {"task_reports", std::move(reports)},
              {"free_slots", m.free_slots},
              {"timestamp", m.timestamp}};
}

json encode_body(const CommandMessage& m) {
  json directives = json::array();
  for (const auto& d : m.directives) {
    directives.push_back(
        json{{"task_id", d.task_id},
             {"action", to_string(d.action)},
             {"payload", d.payload ? to_json(*d.payload) : json(nullptr)}});
  }
  return json{{"kind", "command"}, {"directives", std::move(directives)}};
}

json encode_body(const ControlRequest& m) {
  json j{{"kind", "control_request"}, {"op", to_string(m.op)}};
  j["task_id"] = m.task_id ? json(*m.task_id) : json(nullptr);
  j["descriptor"] = m.descriptor ? to_json(*m.descriptor) : json(nullptr);
  j["priority"] = m.priority ? json(to_string(*m.priority)) : json(nullptr);
  j["target_worker"] = m.target_worker ? json(*m.target_worker) : json(nullptr);
  j["primitive"] = m.primitive ? json(to_string(*m.primitive)) : json(nullptr);
  return j;
}

json encode_body(const ControlReply& m) {
  return json{{"kind", "control_reply"},
              {"ok", m.ok},
              {"error_kind", m.error_kind},
              {"error_message", m.error_message},
              {"body", m.body}};
}

std::uint32_t checked_u32(std::uint64_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw MalformedMessage(std::string(what) + " out of range");
  }
  return static_cast<std::uint32_t>(v);
}

RegisterWorker decode_register(const json& j) {
  RegisterWorker m;
  m.worker_id = string_field(j, "worker_id");
  m.address = string_field(j, "address");
  m.slots_total = checked_u32(uint_field(j, "slots_total"), "slots_total");
  m.max_suspended = checked_u32(uint_field(j, "max_suspended"), "max_suspended");
  if (m.worker_id.empty()) throw MalformedMessage("empty worker_id");
  return m;
}

HeartbeatMessage decode_heartbeat(const json& j) {
  HeartbeatMessage m;
  m.worker_id = string_field(j, "worker_id");
  m.sequence_no = uint_field(j, "sequence_no");
  const auto& reports = field(j, "task_reports");
  if (!reports.is_array()) throw MalformedMessage("'task_reports' must be an array");
  std::set<TaskId> seen;
  for (const auto& r : reports) {
    auto report = report_from_json(r);
    if (!seen.insert(report.task_id).second) {
      throw MalformedMessage("duplicate report for task " + report.task_id);
    }
    m.task_reports.push_back(std::move(report));
  }
  m.free_slots = checked_u32(uint_field(j, "free_slots"), "free_slots");
  m.timestamp = int_field(j, "timestamp");
  return m;
}

CommandMessage decode_command(const json& j) {
  CommandMessage m;
  const auto& directives = field(j, "directives");
  if (!directives.is_array()) throw MalformedMessage("'directives' must be an array");
  std::set<TaskId> seen;
  for (const auto& dj : directives) {
    Directive d;
    d.task_id = string_field(dj, "task_id");
    auto action = parse_directive_action(string_field(dj, "action"));
    if (!action) throw MalformedMessage("unknown directive action");
    d.action = *action;
    const auto& payload = field(dj, "payload");
    if (d.action == DirectiveAction::kLaunch) {
      if (payload.is_null()) throw MalformedMessage("LAUNCH without payload");
      d.payload = descriptor_from_json(payload);
      if (d.payload->task_id != d.task_id) {
        throw MalformedMessage("LAUNCH payload names a different task");
      }
    } else if (!payload.is_null()) {
      throw MalformedMessage("only LAUNCH directives carry a payload");
    }
    if (!seen.insert(d.task_id).second) {
      throw MalformedMessage("more than one directive for task " + d.task_id);
    }
    m.directives.push_back(std::move(d));
  }
  return m;
}

ControlRequest decode_control_request(const json& j) {
  ControlRequest m;
  auto op = parse_control_op(string_field(j, "op"));
  if (!op) throw MalformedMessage("unknown control op");
  m.op = *op;
  m.task_id = optional_of<std::string>(j, "task_id", &string_field);
  if (auto it = j.find("descriptor"); it != j.end() && !it->is_null()) {
    m.descriptor = descriptor_from_json(*it);
  }
  if (auto p = optional_of<std::string>(j, "priority", &string_field)) {
    m.priority = parse_priority(*p);
    if (!m.priority) throw MalformedMessage("unknown priority");
  }
  m.target_worker = optional_of<std::string>(j, "target_worker", &string_field);
  if (auto p = optional_of<std::string>(j, "primitive", &string_field)) {
    m.primitive = parse_primitive(*p);
    if (!m.primitive) throw MalformedMessage("unknown primitive");
  }
  switch (m.op) {
    case ControlOp::kSubmit:
      if (!m.descriptor || !m.priority) {
        throw MalformedMessage("submit needs a descriptor and a priority");
      }
      break;
    case ControlOp::kPreempt:
      if (!m.task_id || !m.primitive) {
        throw MalformedMessage("preempt needs a task_id and a primitive");
      }
      break;
    case ControlOp::kResume:
    case ControlOp::kReschedule:
      if (!m.task_id) throw MalformedMessage("missing task_id");
      break;
    case ControlOp::kSnapshot:
      break;
  }
  return m;
}

ControlReply decode_control_reply(const json& j) {
  ControlReply m;
  m.ok = bool_field(j, "ok");
  m.error_kind = string_field(j, "error_kind");
  m.error_message = string_field(j, "error_message");
  m.body = string_field(j, "body");
  return m;
}

}  // namespace

std::string encode_payload(const Message& msg) {
  json body = std::visit([](const auto& m) { return encode_body(m); }, msg);
  // Version goes first so a reader can reject the payload early.
  std::string text = "{\"schema_version\":" + std::to_string(kSchemaVersion) +
                     "," + body.dump().substr(1);
  if (text.size() > kMaxPayloadBytes) {
    throw MalformedMessage("message exceeds the 1 MiB frame limit");
  }
  return text;
}

Message decode_payload(std::string_view payload) {
  if (payload.size() > kMaxPayloadBytes) {
    throw MalformedMessage("payload exceeds the 1 MiB frame limit");
  }
  try {
    json j = json::parse(payload.begin(), payload.end());
    if (!j.is_object()) throw MalformedMessage("payload is not an object");
    if (uint_field(j, "schema_version") != kSchemaVersion) {
      throw MalformedMessage("unsupported schema_version");
    }
    auto kind = string_field(j, "kind");
    if (kind == "register") return decode_register(j);
    if (kind == "heartbeat") return decode_heartbeat(j);
    if (kind == "command") return decode_command(j);
    if (kind == "control_request") return decode_control_request(j);
    if (kind == "control_reply") return decode_control_reply(j);
    throw MalformedMessage("unknown message kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw MalformedMessage(std::string("invalid JSON payload: ") + e.what());
  }
}

std::uint32_t read_frame_length(std::span<const std::uint8_t, 4> header) {
  return (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
         (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
}

std::vector<std::uint8_t> encode_message(const Message& msg) {
  std::string payload = encode_payload(msg);
  auto n = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> frame;
  frame.reserve(kFrameHeaderBytes + payload.size());
  frame.push_back(static_cast<std::uint8_t>(n >> 24));
  frame.push_back(static_cast<std::uint8_t>(n >> 16));
  frame.push_back(static_cast<std::uint8_t>(n >> 8));
  frame.push_back(static_cast<std::uint8_t>(n));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

Message decode_message(std::span<const std::uint8_t> frame) {
  if (frame.size() < kFrameHeaderBytes) {
    throw MalformedMessage("truncated frame header");
  }
  std::uint32_t n = read_frame_length(frame.first<4>());
  if (n > kMaxPayloadBytes) throw MalformedMessage("frame exceeds 1 MiB");
  if (frame.size() - kFrameHeaderBytes < n) {
    throw MalformedMessage("truncated frame payload");
  }
  if (frame.size() - kFrameHeaderBytes > n) {
    throw MalformedMessage("trailing bytes after frame payload");
  }
  auto payload = frame.subspan(kFrameHeaderBytes);
  return decode_payload(std::string_view(
      reinterpret_cast<const char*>(payload.data()), payload.size()));
}

}  // namespace preempt
