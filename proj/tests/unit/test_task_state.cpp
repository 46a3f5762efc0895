#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "preempt/task_state.hpp"
#include "support/lifecycle.hpp"

namespace preempt {
namespace {

using testing::Key;
using testing::expected_edges;

TEST(TaskState, ExhaustiveTableMatchesLifecycle) {
  auto expected = expected_edges();
  ASSERT_EQ(expected.size(), 27u);
  ASSERT_EQ(kAllTaskStates.size(), 13u);
  ASSERT_EQ(kAllTransitionEvents.size(), 12u);
  std::size_t legal = 0, checked = 0;
  for (auto s : kAllTaskStates) {
    for (auto e : kAllTransitionEvents) {
      ++checked;
      Key key{std::string(to_string(s)), std::string(to_string(e))};
      auto it = expected.find(key);
      auto next = next_state(s, e);
      if (it == expected.end()) {
        EXPECT_FALSE(next.has_value()) << key.first << " + " << key.second;
        EXPECT_THROW(apply_transition(s, e), IllegalTransition);
      } else {
        ++legal;
        ASSERT_TRUE(next.has_value()) << key.first << " + " << key.second;
        EXPECT_EQ(to_string(*next), it->second);
        EXPECT_EQ(apply_transition(s, e), *next);
      }
    }
  }
  EXPECT_EQ(checked, 13u * 12u);
  EXPECT_EQ(legal, expected.size());
}

TEST(TaskState, Examples) {
  EXPECT_EQ(apply_transition(TaskState::kRunning, TransitionEvent::kSchedulerSuspend),
            TaskState::kMustSuspend);
  EXPECT_EQ(apply_transition(TaskState::kSuspendingSent, TransitionEvent::kWorkerReportedSuccess),
            TaskState::kSucceeded);
  try {
    apply_transition(TaskState::kSucceeded, TransitionEvent::kSchedulerResume);
    FAIL() << "expected IllegalTransition";
  } catch (const IllegalTransition& e) {
    EXPECT_EQ(e.current(), TaskState::kSucceeded);
    EXPECT_EQ(e.event(), TransitionEvent::kSchedulerResume);
    EXPECT_EQ(e.kind(), "IllegalTransition");
  }
}

TEST(TaskState, TerminalStatesHaveNoOutgoingEdges) {
  for (auto s : {TaskState::kSucceeded, TaskState::kKilled, TaskState::kFailed}) {
    EXPECT_TRUE(is_terminal(s));
    for (auto e : kAllTransitionEvents) EXPECT_FALSE(next_state(s, e).has_value());
  }
}

TEST(TaskState, RaceSafety) {
  EXPECT_TRUE(next_state(TaskState::kSuspendingSent, TransitionEvent::kWorkerConfirmedSuspended));
  EXPECT_TRUE(next_state(TaskState::kSuspendingSent, TransitionEvent::kWorkerReportedSuccess));
  EXPECT_FALSE(next_state(TaskState::kSuspended, TransitionEvent::kWorkerReportedSuccess));
}

TEST(TaskState, NamesRoundTrip) {
  std::set<std::string_view> seen;
  for (auto s : kAllTaskStates) {
    EXPECT_EQ(parse_task_state(to_string(s)), s);
    EXPECT_TRUE(seen.insert(to_string(s)).second);
  }
  for (auto e : kAllTransitionEvents) {
    EXPECT_EQ(parse_transition_event(to_string(e)), e);
    EXPECT_TRUE(seen.insert(to_string(e)).second);
  }
  EXPECT_FALSE(parse_task_state("RUNNABLE"));
  EXPECT_FALSE(parse_transition_event("suspend"));
}

TEST(TaskState, SlotAndSuspensionPredicates) {
  for (auto s : kAllTaskStates) {
    if (is_terminal(s)) {
      EXPECT_FALSE(occupies_slot(s)) << to_string(s);
    }
  }
  EXPECT_TRUE(occupies_slot(TaskState::kRunning));
  EXPECT_TRUE(occupies_slot(TaskState::kMustSuspend));
  EXPECT_FALSE(occupies_slot(TaskState::kSuspended));
  EXPECT_FALSE(occupies_slot(TaskState::kPending));
  EXPECT_TRUE(holds_suspension(TaskState::kSuspended));
  EXPECT_TRUE(holds_suspension(TaskState::kSuspendingSent));
  EXPECT_FALSE(holds_suspension(TaskState::kRunning));
}

// Random event sequences never escape the table and never leave a
// terminal state.
TEST(TaskState, RandomWalksStayInsideTheTable) {
  auto expected = expected_edges();
  std::mt19937_64 rng(42);
  for (int walk = 0; walk < 2000; ++walk) {
    TaskState s = TaskState::kPending;
    for (int step = 0; step < 40; ++step) {
      auto e = kAllTransitionEvents[rng() % kAllTransitionEvents.size()];
      bool listed = expected.contains({std::string(to_string(s)), std::string(to_string(e))});
      bool was_terminal = is_terminal(s);
      try {
        TaskState next = apply_transition(s, e);
        ASSERT_TRUE(listed);
        ASSERT_FALSE(was_terminal);
        s = next;
      } catch (const IllegalTransition&) {
        ASSERT_FALSE(listed);
      }
    }
  }
}

}  // namespace
}  // namespace preempt
