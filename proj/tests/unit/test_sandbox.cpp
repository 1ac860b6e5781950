#include "forge/error.hpp"
#include "forge/sandbox.hpp"
#include "support.hpp"

#include <doctest.h>

#include <chrono>
#include <thread>

using namespace forge;
using namespace forge::test;

namespace {

struct Rig {
    TempDir dir{"sbx"};
    std::shared_ptr<LocalDirectoryDriver> driver = std::make_shared<LocalDirectoryDriver>(dir / "root");
    SandboxRuntime runtime{driver, dir / "workspace"};
};

ExecResult sync_exec(SandboxRuntime& rt, const SandboxId& id, const std::string& cmd) {
    return std::get<ExecResult>(rt.exec(id, cmd, ExecLimits{}, ExecMode::sync));
}

HandleState wait_terminal(SandboxRuntime& rt, const InvocationHandle& h) {
    for (int i = 0; i < 2000; ++i) {
        auto s = rt.poll(h);
        if (is_terminal(s)) return s;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    FAIL("handle never finished");
    return HandleState::pending;
}

int rank(HandleState s) {
    switch (s) {
        case HandleState::pending: return 0;
        case HandleState::running: return 1;
        default: return 2;
    }
}

}  // namespace

TEST_CASE("setup commands run once per environment and are restored from the snapshot") {
    Rig rig;
    EnvSpec spec{"fuzzenv", "ubuntu", {"echo built >> setup.log", "mkdir -p corpus"}, "/workspace"};
    std::vector<SandboxId> ids;
    for (int i = 0; i < 5; ++i) ids.push_back(rig.runtime.provision(spec));
    CHECK(rig.runtime.setup_executions() == 2);
    for (const auto& id : ids) {
        auto r = sync_exec(rig.runtime, id, "cat setup.log && test -d corpus");
        CHECK(r.exit_status == 0);
        CHECK(r.stdout_text == "built\n");
    }
}

TEST_CASE("failing setup reports SetupFailed and leaves no snapshot") {
    Rig rig;
    EnvSpec spec{"broken", "", {"exit 3"}, "/workspace"};
    try {
        rig.runtime.provision(spec);
        FAIL("expected SetupFailed");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SetupFailed);
    }
    CHECK_FALSE(rig.driver->has_snapshot(SandboxRuntime::setup_key(spec).value));
}

TEST_CASE("workspace is shared across sandboxes") {
    Rig rig;
    auto a = rig.runtime.provision(EnvSpec{"a_env", "", {}, "/workspace"});
    auto b = rig.runtime.provision(EnvSpec{"b_env", "", {}, "/mnt/shared"});
    CHECK(sync_exec(rig.runtime, a, "echo probe-123 > workspace/probe.txt").exit_status == 0);
    CHECK(sync_exec(rig.runtime, b, "cat mnt/shared/probe.txt").stdout_text == "probe-123\n");
    CHECK(read_file(rig.runtime.workspace() / "probe.txt") == "probe-123\n");
    CHECK(sync_exec(rig.runtime, b, "echo x > local.txt").exit_status == 0);
    CHECK(sync_exec(rig.runtime, a, "test -e local.txt").exit_status != 0);
}

TEST_CASE("background results equal synchronous results") {
    Rig rig;
    auto id = rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"});
    for (const std::string cmd : {"echo out; echo err >&2; exit 4", "printf 'a\\nb'", "true"}) {
        auto sync = sync_exec(rig.runtime, id, cmd);
        auto h = std::get<InvocationHandle>(rig.runtime.exec(id, cmd, ExecLimits{}, ExecMode::background));
        auto state = wait_terminal(rig.runtime, h);
        CHECK(state == (sync.exit_status == 0 ? HandleState::done : HandleState::failed));
        CHECK(rig.runtime.fetch_result(h) == sync);
    }
}

TEST_CASE("sync exec past its timeout is offloaded to a handle") {
    Rig rig;
    auto id = rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"});
    auto out = rig.runtime.exec(id, "sleep 0.4; echo late", ExecLimits{0.05}, ExecMode::sync);
    REQUIRE(std::holds_alternative<InvocationHandle>(out));
    auto h = std::get<InvocationHandle>(out);
    CHECK(wait_terminal(rig.runtime, h) == HandleState::done);
    CHECK(rig.runtime.fetch_result(h).stdout_text == "late\n");
}

TEST_CASE("terminate stops a long command and sticks") {
    Rig rig;
    auto id = rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"});
    auto h = std::get<InvocationHandle>(rig.runtime.exec(id, "sleep 30", ExecLimits{}, ExecMode::background));
    auto t0 = std::chrono::steady_clock::now();
    rig.runtime.terminate(h);
    CHECK(rig.runtime.poll(h) == HandleState::terminated);
    try {
        rig.runtime.fetch_result(h);
        FAIL("expected NotFinished");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotFinished);
    }
    // the next command on the same sandbox is not held up by the killed one
    CHECK(sync_exec(rig.runtime, id, "echo next").stdout_text == "next\n");
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(10));
    CHECK(rig.runtime.poll(h) == HandleState::terminated);
}

TEST_CASE("errors for unknown handles, dead sandboxes and busy sandboxes") {
    Rig rig;
    auto id = rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"});
    auto code = [](auto fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::Io;
    };
    CHECK(code([&] { rig.runtime.poll(InvocationHandle{"inv-nope"}); }) == ErrorCode::UnknownHandle);
    auto h = std::get<InvocationHandle>(rig.runtime.exec(id, "sleep 0.3", ExecLimits{}, ExecMode::background));
    CHECK(code([&] { rig.runtime.commit_snapshot(id); }) == ErrorCode::Busy);
    CHECK(code([&] { rig.runtime.destroy(id); }) == ErrorCode::Busy);
    wait_terminal(rig.runtime, h);
    rig.runtime.destroy(id);
    CHECK(code([&] { rig.runtime.exec(id, "true", ExecLimits{}, ExecMode::sync); }) == ErrorCode::SandboxDead);
    CHECK(code([&] { rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"}, SnapshotKey{"missing"}); }) ==
          ErrorCode::UnknownSnapshot);
}

TEST_CASE("committed snapshots carry state into new sandboxes") {
    Rig rig;
    auto id = rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"});
    sync_exec(rig.runtime, id, "echo state > built.txt");
    auto key = rig.runtime.commit_snapshot(id);
    auto copy = rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"}, key);
    CHECK(sync_exec(rig.runtime, copy, "cat built.txt").stdout_text == "state\n");
}

TEST_CASE("handle states never regress under random poll and terminate") {
    Rig rig;
    auto id = rig.runtime.provision(EnvSpec{"env", "", {}, "/workspace"});
    Rng rng(7);
    std::vector<InvocationHandle> handles;
    const char* cmds[] = {"true", "exit 1", "sleep 0.02", "sleep 0.05; echo x"};
    for (int i = 0; i < 12; ++i)
        handles.push_back(std::get<InvocationHandle>(
            rig.runtime.exec(id, cmds[rng() % 4], ExecLimits{}, ExecMode::background)));
    std::vector<HandleState> last(handles.size(), HandleState::pending);
    for (int step = 0; step < 300; ++step) {
        std::size_t i = rng() % handles.size();
        if (rng() % 5 == 0) rig.runtime.terminate(handles[i]);
        auto s = rig.runtime.poll(handles[i]);
        CHECK(rank(s) >= rank(last[i]));
        if (is_terminal(last[i])) CHECK(s == last[i]);
        last[i] = s;
    }
    for (auto& h : handles) wait_terminal(rig.runtime, h);
}
