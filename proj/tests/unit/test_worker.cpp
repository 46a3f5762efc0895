#include <gtest/gtest.h>

#include <signal.h>
#include <unistd.h>

#include <thread>

#include "preempt/coordinator_service.hpp"
#include "preempt/errors.hpp"
#include "preempt/proc.hpp"
#include "preempt/synthetic.hpp"
#include "preempt/worker.hpp"
#include "support/fixtures.hpp"

namespace preempt {
namespace {

using namespace std::chrono_literals;
using testing::TempDir;
using testing::task_descriptor;

constexpr std::uint64_t kInputBytes = 1ull << 20;  // 1024 tuples

class WorkerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    synthetic::generate_input(dir / "input", kInputBytes, 1024, 42);
    opts.workdir = dir / "work";
  }

  Worker make_worker() { return Worker(opts); }

  TaskLaunchDescriptor task(const TaskId& id, double seconds, std::uint64_t ballast = 0) {
    return task_descriptor(id, dir / "input", kInputBytes, seconds, 64, ballast);
  }

  static bool terminal(const LocalTaskView& v) { return is_terminal(v.observed_state); }

  TempDir dir;
  WorkerOptions opts;
};

TEST_F(WorkerTest, LaunchRunsInOwnProcessGroup) {
  Worker w(opts);
  auto view = w.launch(task("t1", 2.0));
  EXPECT_EQ(view.observed_state, TaskState::kRunning);
  EXPECT_DOUBLE_EQ(view.progress_fraction, 0.0);
  EXPECT_EQ(::getpgid(view.pid), view.pid);
  EXPECT_TRUE(std::filesystem::is_directory(opts.workdir / "t1"));
  EXPECT_EQ(w.free_slots(), 0u);
  w.kill("t1");
}

TEST_F(WorkerTest, MissingExecutableIsSpawnFailure) {
  Worker w(opts);
  auto d = task("t1", 1.0);
  d.executable = (dir / "no-such-binary").string();
  EXPECT_THROW(w.launch(d), SpawnFailure);
  EXPECT_EQ(w.free_slots(), 1u);
}

TEST_F(WorkerTest, LaunchBeyondSlotsIsNoFreeSlot) {
  Worker w(opts);
  w.launch(task("t1", 2.0));
  EXPECT_THROW(w.launch(task("t2", 2.0)), NoFreeSlot);
  w.kill("t1");
}

TEST_F(WorkerTest, FailedLaunchDirectiveSurfacesAsFailed) {
  Worker w(opts);
  auto d = task("t1", 1.0);
  d.executable = (dir / "no-such-binary").string();
  CommandMessage cmd;
  cmd.directives.push_back(Directive{"t1", DirectiveAction::kLaunch, d});
  w.apply(cmd);
  auto hb = w.build_heartbeat();
  ASSERT_EQ(hb.task_reports.size(), 1u);
  EXPECT_EQ(hb.task_reports[0].observed_state, TaskState::kFailed);
}

TEST_F(WorkerTest, SuspendStopsProcessAndFreezesProgress) {
  Worker w(opts);
  w.launch(task("t1", 2.0));
  ASSERT_TRUE(w.wait_for("t1", [](auto& v) { return v.progress_fraction > 0.1; }, 10s));
  w.suspend("t1");
  auto before = *w.task("t1");
  EXPECT_EQ(before.observed_state, TaskState::kSuspended);
  EXPECT_EQ(proc::process_state(before.pid), proc::ProcessState::kStopped);

  std::this_thread::sleep_for(400ms);
  auto hb = w.build_heartbeat();
  ASSERT_EQ(hb.task_reports.size(), 1u);
  EXPECT_EQ(hb.task_reports[0].observed_state, TaskState::kSuspended);
  auto during = *w.task("t1");
  EXPECT_EQ(during.progress_records, before.progress_records);
  EXPECT_EQ(during.progress_fraction, before.progress_fraction);
  EXPECT_EQ(during.progress_records_while_suspended, 0u);

  w.resume("t1");
  EXPECT_NE(proc::process_state(before.pid), proc::ProcessState::kStopped);
  EXPECT_EQ(w.task("t1")->observed_state, TaskState::kRunning);
  ASSERT_TRUE(w.wait_for("t1", terminal, 30s));
  auto done = *w.task("t1");
  EXPECT_EQ(done.observed_state, TaskState::kSucceeded);
  ASSERT_TRUE(done.summary);
  EXPECT_EQ(done.summary->tuples, kInputBytes / 1024);
  EXPECT_TRUE(done.summary->checksum_ok);
  EXPECT_EQ(done.resumed_markers, 1u);
  EXPECT_EQ(done.progress_records_while_suspended, 0u);
  EXPECT_DOUBLE_EQ(done.progress_fraction, 1.0);
}

TEST_F(WorkerTest, DoubleResumeIsRejected) {
  Worker w(opts);
  w.launch(task("t1", 2.0));
  w.suspend("t1");
  w.resume("t1");
  EXPECT_THROW(w.resume("t1"), PreconditionViolation);
  w.kill("t1");
}

TEST_F(WorkerTest, SuspendAfterExitIsProcessGone) {
  Worker w(opts);
  w.launch(task("t1", 0.05));
  ASSERT_TRUE(w.wait_for("t1", terminal, 10s));
  EXPECT_THROW(w.suspend("t1"), ProcessGone);
  auto hb = w.build_heartbeat();
  ASSERT_EQ(hb.task_reports.size(), 1u);
  EXPECT_EQ(hb.task_reports[0].observed_state, TaskState::kSucceeded);
}

TEST_F(WorkerTest, KillRunningRemovesTempDir) {
  Worker w(opts);
  w.launch(task("t1", 3.0));
  ASSERT_TRUE(w.wait_for("t1", [](auto& v) { return v.progress_fraction >= 0.25; }, 10s));
  EXPECT_TRUE(std::filesystem::exists(opts.workdir / "t1"));
  w.kill("t1");
  auto v = *w.task("t1");
  EXPECT_EQ(v.observed_state, TaskState::kKilled);
  EXPECT_FALSE(std::filesystem::exists(opts.workdir / "t1"));
  EXPECT_EQ(w.free_slots(), 1u);
  EXPECT_EQ(::kill(v.pid, 0), -1);
}

TEST_F(WorkerTest, KillSuspendedWithoutContinuing) {
  Worker w(opts);
  w.launch(task("t1", 3.0));
  w.suspend("t1");
  w.kill("t1");
  auto v = *w.task("t1");
  EXPECT_EQ(v.observed_state, TaskState::kKilled);
  EXPECT_EQ(v.resumed_markers, 0u);
  ASSERT_TRUE(v.wait_status);
  EXPECT_TRUE(WIFSIGNALED(*v.wait_status));
  EXPECT_EQ(WTERMSIG(*v.wait_status), SIGKILL);
  w.kill("t1");  // already gone: no-op
}

TEST_F(WorkerTest, ExternalSignalIsFailureNotKill) {
  Worker w(opts);
  auto view = w.launch(task("t1", 3.0));
  ::kill(view.pid, SIGKILL);
  ASSERT_TRUE(w.wait_for("t1", terminal, 10s));
  EXPECT_EQ(w.task("t1")->observed_state, TaskState::kFailed);
}

TEST_F(WorkerTest, BallastIsResident) {
  const std::uint64_t ballast = 64ull << 20;
  Worker w(opts);
  w.launch(task("t1", 2.0, ballast));
  // The ballast is dirtied before the first tuple is parsed.
  ASSERT_TRUE(w.wait_for("t1", [](auto& v) { return v.progress_records > 0; }, 10s));
  auto m = w.sample_memory("t1");
  ASSERT_TRUE(m);
  EXPECT_GE(double(m->resident_bytes), 0.95 * double(ballast));
  w.kill("t1");
  EXPECT_FALSE(w.sample_memory("t1"));
}

TEST_F(WorkerTest, TerminalReportsStopAfterAcknowledgement) {
  Worker w(opts);
  w.launch(task("t1", 0.05));
  ASSERT_TRUE(w.wait_for("t1", terminal, 10s));
  auto hb = w.build_heartbeat();
  ASSERT_EQ(hb.task_reports.size(), 1u);
  auto again = w.build_heartbeat();
  EXPECT_EQ(again.task_reports.size(), 1u);  // not yet acknowledged
  EXPECT_GT(again.sequence_no, hb.sequence_no);
  w.acknowledge(again);
  EXPECT_TRUE(w.build_heartbeat().task_reports.empty());
}

TEST(ParseStatus, ReadsResidentAndSwap) {
  auto s = proc::parse_status("Name:\tx\nVmRSS:\t  2048 kB\nVmSwap:\t     16 kB\n");
  ASSERT_TRUE(s);
  EXPECT_EQ(s->resident_bytes, 2048u * 1024);
  EXPECT_EQ(s->swapped_bytes, 16u * 1024);
  auto no_swap = proc::parse_status("VmRSS:\t10 kB\n");
  ASSERT_TRUE(no_swap);
  EXPECT_FALSE(no_swap->swapped_bytes);
  EXPECT_FALSE(proc::parse_status("Name:\tzombie\n"));
}

TEST(ProcessState, SelfIsRunningAndMissingIsGone) {
  auto self = proc::process_state(::getpid());
  EXPECT_TRUE(self == proc::ProcessState::kRunning || self == proc::ProcessState::kSleeping);
  EXPECT_EQ(proc::process_state(0x7ffffff0), proc::ProcessState::kGone);
  EXPECT_FALSE(proc::sample_memory(0x7ffffff0));
}

// Heartbeat loop against a live coordinator service.
class HeartbeatLoopTest : public WorkerTest {
 protected:
  void start(Millis interval) {
    CoordinatorService::Options o;
    o.config.heartbeat_interval_ms = interval;
    service = std::make_unique<CoordinatorService>(o);
    service->start();
    opts.heartbeat_interval_ms = interval;
    worker = std::make_unique<Worker>(opts);
    worker->start_heartbeating(net::Endpoint{"127.0.0.1", service->port()});
    ASSERT_TRUE(service->wait_until(
        [](const Snapshot& s) { return s.find_worker("worker-1") != nullptr; }, 5s));
  }
  void TearDown() override {
    if (worker) worker->stop_heartbeating();
    worker.reset();
    if (service) service->stop();
  }
  TaskState state_of(const TaskId& id) { return service->snapshot()->find_task(id)->state; }

  std::unique_ptr<CoordinatorService> service;
  std::unique_ptr<Worker> worker;
};

TEST_F(HeartbeatLoopTest, PeriodicBeatsArrive) {
  start(100);
  auto first = service->snapshot()->find_worker("worker-1")->last_heartbeat;
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_worker("worker-1")->last_heartbeat >= first + 500; },
      5s));
}

TEST_F(HeartbeatLoopTest, CompletionTriggersImmediateBeat) {
  start(3000);
  TaskId id = service->with_coordinator(
      [&](Coordinator& c) { return c.submit_task(task("", 0.2), Priority::kHigh); });
  // The launch rides the next periodic reply; completion must be seen well
  // before the periodic beat after it.
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kLaunching; }, 5s));
  auto launched = std::chrono::steady_clock::now();
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kSucceeded; }, 10s));
  EXPECT_LT(std::chrono::steady_clock::now() - launched, 2500ms);
}

TEST_F(HeartbeatLoopTest, SuspendAppliedWithinOneInterval) {
  start(200);
  TaskId id = service->with_coordinator(
      [&](Coordinator& c) { return c.submit_task(task("", 3.0), Priority::kLow); });
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kRunning; }, 5s));
  service->with_coordinator([&](Coordinator& c) { c.request_preemption(id, Primitive::kSuspend); });
  auto requested = std::chrono::steady_clock::now();
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kSuspendingSent; }, 5s));
  EXPECT_LE(std::chrono::steady_clock::now() - requested, 450ms);
  ASSERT_TRUE(worker->wait_for(id, [](auto& v) { return v.observed_state == TaskState::kSuspended; },
                               1s));
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kSuspended; }, 5s));
}

TEST_F(HeartbeatLoopTest, ControlClientRoundTrip) {
  start(100);
  ControlClient client(net::Endpoint{"127.0.0.1", service->port()});
  TaskId id = client.submit(task("", 2.0), Priority::kLow, WorkerId("worker-1"));
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kRunning; }, 5s));
  EXPECT_THROW(client.resume(id), IllegalTransition);
  client.preempt(id, Primitive::kSuspend);
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kSuspended; }, 5s));
  EXPECT_EQ(client.resume(id), ResumeOutcome::kResumeQueued);
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kRunning; }, 5s));
  client.preempt(id, Primitive::kKill);
  ASSERT_TRUE(service->wait_until(
      [&](const Snapshot& s) { return s.find_task(id)->state == TaskState::kKilled; }, 5s));
  client.reschedule(id);
  auto snap = client.snapshot();
  EXPECT_EQ(snap.find_task(id)->attempt_count, 2u);
  EXPECT_NE(state_of(id), TaskState::kKilled);
  EXPECT_THROW(client.submit(task("", 1.0), Priority::kLow, WorkerId("ghost")), UnknownWorker);
}

}  // namespace
}  // namespace preempt
