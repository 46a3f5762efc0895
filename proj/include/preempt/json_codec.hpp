#pragma once

#include <json.hpp>

#include "preempt/messages.hpp"

namespace preempt::codec {

// Strict JSON helpers shared by the wire format, the control API and the
// config loader. Readers throw MalformedMessage on missing fields, wrong
// types or out-of-range values.

nlohmann::json to_json(const TaskLaunchDescriptor& d);
TaskLaunchDescriptor descriptor_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TaskReport& r);
TaskReport report_from_json(const nlohmann::json& j);

const nlohmann::json& field(const nlohmann::json& j, const char* key);
std::string string_field(const nlohmann::json& j, const char* key);
std::uint64_t uint_field(const nlohmann::json& j, const char* key);
std::int64_t int_field(const nlohmann::json& j, const char* key);
double number_field(const nlohmann::json& j, const char* key);
bool bool_field(const nlohmann::json& j, const char* key);

}  // namespace preempt::codec
