#include <gtest/gtest.h>

#include <cstring>

#include "support/random_messages.hpp"
#include "preempt/errors.hpp"
#include "preempt/wire.hpp"

namespace preempt {
namespace {

std::vector<std::uint8_t> frame_of(const std::string& payload) {
  std::vector<std::uint8_t> out(4);
  auto n = static_cast<std::uint32_t>(payload.size());
  out[0] = static_cast<std::uint8_t>(n >> 24);
  out[1] = static_cast<std::uint8_t>(n >> 16);
  out[2] = static_cast<std::uint8_t>(n >> 8);
  out[3] = static_cast<std::uint8_t>(n);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

TEST(Wire, EmptyHeartbeatRoundTrips) {
  HeartbeatMessage hb{"worker-1", 7, {}, 1, 1234};
  EXPECT_EQ(decode_message(encode_message(hb)), Message(hb));
}

TEST(Wire, SuspendCommandRoundTrips) {
  CommandMessage c{{Directive{"task-0001", DirectiveAction::kSuspend, std::nullopt}}};
  EXPECT_EQ(decode_message(encode_message(c)), Message(c));
}

TEST(Wire, TruncatedFrameIsMalformed) {
  std::vector<std::uint8_t> three{0, 0, 0};
  EXPECT_THROW(decode_message(three), MalformedMessage);
  auto frame = encode_message(HeartbeatMessage{"w", 1, {}, 0, 0});
  frame.pop_back();
  EXPECT_THROW(decode_message(frame), MalformedMessage);
}

TEST(Wire, OversizedFrameIsMalformed) {
  std::vector<std::uint8_t> header{0x00, 0x10, 0x00, 0x01};  // 1 MiB + 1
  EXPECT_EQ(read_frame_length(std::span<const std::uint8_t, 4>(header.data(), 4)),
            kMaxPayloadBytes + 1);
  header.resize(4 + kMaxPayloadBytes + 1, ' ');
  EXPECT_THROW(decode_message(header), MalformedMessage);
}

TEST(Wire, HeaderIsBigEndianAndSchemaVersionLeads) {
  auto frame = encode_message(RegisterWorker{"w1", "", 1, 1});
  std::uint32_t n = std::uint32_t{frame[0]} << 24 | std::uint32_t{frame[1]} << 16 |
                    std::uint32_t{frame[2]} << 8 | frame[3];
  EXPECT_EQ(n, frame.size() - 4);
  std::string payload(frame.begin() + 4, frame.end());
  EXPECT_EQ(payload.rfind("{\"schema_version\":1,", 0), 0u) << payload;
}

TEST(Wire, TrailingBytesAreMalformed) {
  auto frame = encode_message(ControlReply{});
  frame.push_back(' ');
  EXPECT_THROW(decode_message(frame), MalformedMessage);
}

TEST(Wire, SchemaViolationsAreMalformed) {
  const std::string bad[] = {
      "not json",
      "[]",
      R"({"schema_version":2,"kind":"heartbeat","worker_id":"w","sequence_no":1,"task_reports":[],"free_slots":0,"timestamp":0})",
      R"({"kind":"heartbeat","worker_id":"w","sequence_no":1,"task_reports":[],"free_slots":0,"timestamp":0})",
      R"({"schema_version":1,"kind":"gossip"})",
      R"({"schema_version":1,"kind":"heartbeat","worker_id":"w","sequence_no":-1,"task_reports":[],"free_slots":0,"timestamp":0})",
      R"({"schema_version":1,"kind":"command","directives":[{"task_id":"t","action":"SUSPEND","payload":{}}]})",
      R"({"schema_version":1,"kind":"command","directives":[{"task_id":"t","action":"LAUNCH"}]})",
      R"({"schema_version":1,"kind":"command","directives":[{"task_id":"t","action":"KILL"},{"task_id":"t","action":"KILL"}]})",
  };
  for (const auto& payload : bad) {
    EXPECT_THROW(decode_message(frame_of(payload)), MalformedMessage) << payload;
  }
}

TEST(Wire, ReportFieldsAreValidated) {
  HeartbeatMessage hb{"w", 1, {}, 0, 0};
  TaskReport r;
  r.task_id = "t";
  r.progress_fraction = 0.5;
  hb.task_reports.push_back(r);
  std::string ok = encode_payload(hb);
  EXPECT_NO_THROW(decode_payload(ok));

  std::string out_of_range = ok;
  auto pos = out_of_range.find("0.5");
  ASSERT_NE(pos, std::string::npos);
  out_of_range.replace(pos, 3, "1.5");
  EXPECT_THROW(decode_payload(out_of_range), MalformedMessage);

  std::string unobservable = ok;
  pos = unobservable.find("\"RUNNING\"");
  ASSERT_NE(pos, std::string::npos);
  unobservable.replace(pos, 9, "\"MUST_KILL\"");
  EXPECT_THROW(decode_payload(unobservable), MalformedMessage);
}

TEST(Wire, RandomMessagesRoundTrip) {
  testing::MessageFactory factory(20240917);
  for (int i = 0; i < 10000; ++i) {
    Message m = factory.any();
    auto frame = encode_message(m);
    ASSERT_LE(frame.size(), 4 + kMaxPayloadBytes);
    ASSERT_EQ(decode_message(frame), m) << encode_payload(m);
  }
}

TEST(Wire, DecoderEnforcesOneDirectivePerTask) {
  CommandMessage dup{{Directive{"t", DirectiveAction::kKill, std::nullopt},
                      Directive{"t", DirectiveAction::kSuspend, std::nullopt}}};
  EXPECT_THROW(decode_message(encode_message(dup)), MalformedMessage);
}

}  // namespace
}  // namespace preempt
