#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "preempt/messages.hpp"

namespace preempt {

// Frame: 4-byte big-endian payload length, then a JSON payload whose first
// field is "schema_version". See docs/wire-format.md.
inline constexpr std::uint32_t kSchemaVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 4;
inline constexpr std::size_t kMaxPayloadBytes = std::size_t{1} << 20;

std::string encode_payload(const Message& msg);
Message decode_payload(std::string_view payload);

// Full frame including the length prefix.
std::vector<std::uint8_t> encode_message(const Message& msg);

// Accepts any byte sequence; throws MalformedMessage on truncation,
// trailing bytes, oversize frames, or schema violations.
Message decode_message(std::span<const std::uint8_t> frame);

std::uint32_t read_frame_length(std::span<const std::uint8_t, 4> header);

}  // namespace preempt
