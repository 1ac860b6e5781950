#include "forge/agent_topology.hpp"
#include "forge/error.hpp"
#include "forge/kernel.hpp"
#include "support.hpp"

#include <doctest.h>

#include <set>
#include <thread>

using namespace forge;
using namespace forge::test;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected forge::Error");
    return ErrorCode::Io;
}

AgentSpec spec(const std::string& name, std::vector<std::string> tools = {}, const std::string& model = "inherit") {
    AgentSpec s;
    s.agent_name = name;
    s.description = "helper " + name;
    s.instruction = "Do the " + name + " job.";
    s.model_name = model;
    s.tools_list = std::move(tools);
    return s;
}

struct Rig {
    TempDir dir{"topo"};
    std::unique_ptr<Kernel> kernel;

    explicit Rig(bool memory_agent = false, std::size_t depth = 8) {
        auto c = make_config(fixture_dir() / "registry", dir.path());
        c.install_memory_agent = memory_agent;
        c.max_agent_depth = depth;
        kernel = std::make_unique<Kernel>(c);
    }
    AgentContext root(std::shared_ptr<ModelBackend> backend, std::vector<std::string> tools = {"create_agent", "call_agent"}) {
        kernel->gateway().register_backend("main", std::move(backend));
        return kernel->open_root(spec("root", std::move(tools), "main"));
    }
};

}  // namespace

TEST_CASE("agent spec wire form") {
    auto s = spec("gdb_helper", {"set_file", "execute"});
    s.initial_memory = InitialMemory::parent_summary;
    CHECK(AgentSpec::from_json(s.to_json()) == s);
    auto alt = AgentSpec::from_json(
        json{{"agent_name", "x"}, {"role", "r"}, {"instruction", "i"}, {"tools", {"a"}}});
    CHECK(alt.description == "r");
    CHECK(alt.tools_list == std::vector<std::string>{"a"});
    CHECK(alt.model_name == "inherit");
    CHECK(code_of([] { AgentSpec::from_json(json{{"agent_name", 3}}); }) == ErrorCode::InvalidSpec);
    CHECK(code_of([] { AgentSpec::from_json(json::array()); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("pool listing and duplicate names") {
    AgentPool pool;
    CHECK(AgentPool::listing(pool.list())["message"] ==
          "Found 0 total agents. If no suitable agents exist, create a dynamic sub-agent.");
    pool.insert(PoolEntry{spec("alpha"), {}, "root#1", 0, 0});
    pool.insert(PoolEntry{spec("beta"), {}, "root#1", 0, 0});
    CHECK(code_of([&] { pool.insert(PoolEntry{spec("alpha"), {}, "x", 0, 0}); }) == ErrorCode::DuplicateAgentName);
    auto listing = AgentPool::listing(pool.list());
    CHECK(listing["summary"]["total_active_agents"] == 2);
    CHECK(listing["message"] == "Found 2 total agents.");
    CHECK(pool.list("ALPHA").size() == 1);
    CHECK(pool.list("helper").size() == 2);
    pool.record_invocation("alpha");
    CHECK(pool.find("alpha")->invocation_count == 1);
}

TEST_CASE("board delivers every peer message exactly once") {
    TempDir dir("board");
    BoardHub hub(dir.path());
    auto board = hub.open({"a", "b", "c"});
    CHECK(code_of([&] { board->post("z", "hi"); }) == ErrorCode::NotBoardMember);
    CHECK(code_of([&] { hub.get("board-none"); }) == ErrorCode::UnknownBoard);

    std::thread ta([&] { for (int i = 0; i < 40; ++i) board->post("a", "a" + std::to_string(i)); });
    std::thread tb([&] { for (int i = 0; i < 40; ++i) board->post("b", "b" + std::to_string(i)); });
    std::multiset<std::string> seen_by_c;
    for (int i = 0; i < 20; ++i)
        for (const auto& m : board->drain("c")) seen_by_c.insert(m.text);
    ta.join();
    tb.join();
    for (const auto& m : board->drain("c")) seen_by_c.insert(m.text);
    CHECK(seen_by_c.size() == 80);
    CHECK(std::set<std::string>(seen_by_c.begin(), seen_by_c.end()).size() == 80);
    for (const auto& m : board->drain("a")) CHECK(m.writer == "b");

    auto on_disk = MessageBoard::read_file(board->file());
    REQUIRE(on_disk.size() == 80);
    for (std::size_t i = 0; i < on_disk.size(); ++i) CHECK(on_disk[i].seq == i + 1);
    CHECK(on_disk == board->messages());
    board->close();
    CHECK(code_of([&] { board->post("a", "late"); }) == ErrorCode::BoardClosed);
    CHECK(board->drain("b").size() == 40);
}

TEST_CASE("create_agent validates name, model and tools") {
    Rig rig;
    auto root = rig.root(scripted({}), {"create_agent", "dynamic/debugger"});
    CHECK(code_of([&] { rig.kernel->create_agent(root, spec("bad name")); }) == ErrorCode::InvalidSpec);
    CHECK(code_of([&] { rig.kernel->create_agent(root, spec("x", {}, "unknown-model")); }) == ErrorCode::InvalidModel);
    CHECK(code_of([&] { rig.kernel->create_agent(root, spec("x", {"no_such_tool"})); }) == ErrorCode::UnresolvableTool);
    CHECK(rig.kernel->pool().size() == 0);

    rig.kernel->create_agent(root, spec("gdb_helper", {"set_file", "execute", "static/code_analysis"}));
    auto entry = rig.kernel->pool().find("gdb_helper");
    REQUIRE(entry);
    CHECK(entry->scope.contains("set_file"));
    CHECK(entry->scope.at("set_file").registry_path == "dynamic/debugger/set_file");
    CHECK(entry->scope.contains("query_cpg"));
    CHECK(entry->scope.contains("call_graph"));
    CHECK(entry->created_by == root.agent_id);
    CHECK(code_of([&] { rig.kernel->create_agent(root, spec("gdb_helper")); }) == ErrorCode::DuplicateAgentName);
}

TEST_CASE("sub-agent runs in a clone and leaves the pool untouched") {
    Rig rig;
    auto backend = scripted({text_step("child answer: done")});
    auto root = rig.root(backend);
    rig.kernel->create_agent(root, spec("worker"));
    const auto before = rig.kernel->pool().spec_snapshot();
    auto resp = rig.kernel->call_agent(root, "worker", "do it");
    CHECK(resp.ok());
    CHECK(resp.summary == std::vector<std::string>{"child answer: done"});
    CHECK(rig.kernel->pool().spec_snapshot() == before);
    CHECK(rig.kernel->live_clones() == 0);
    CHECK(rig.kernel->pool().find("worker")->invocation_count == 1);
    auto chain = rig.kernel->stm().graph_query(
        {{"match", {{"kind", "AgentRun"}}}, {"steps", {{{"edge", "emits"}}, {{"edge", "spawns"}, {"kind", "AgentRun"}}}}});
    CHECK(chain.size() == 1);
}

TEST_CASE("unknown agents produce guidance instead of an exception") {
    Rig rig;
    auto root = rig.root(scripted({}));
    auto resp = rig.kernel->call_agent(root, "generic_consultant", "help");
    CHECK_FALSE(resp.ok());
    CHECK(resp.error == "Agent 'generic_consultant' not found.");
    auto j = resp.to_json();
    CHECK(j["status"] == "failed");
    CHECK(j["summary"] ==
          "No suitable agents available. Create a dynamic sub-agent and invoke it via the agent ensemble.");
}

TEST_CASE("failing sub-agent is reported as SubAgentError") {
    Rig rig;
    auto root = rig.root(scripted({}));
    rig.kernel->create_agent(root, spec("empty_worker"));
    auto resp = rig.kernel->call_agent(root, "empty_worker", "go");
    CHECK_FALSE(resp.ok());
    CHECK(resp.error_code == "SubAgentError");
    CHECK(resp.error.find("Sub-agent 'empty_worker' failed") != std::string::npos);
    CHECK(rig.kernel->live_clones() == 0);
}

TEST_CASE("nesting depth is capped") {
    Rig rig(false, 1);
    auto backend = scripted({call_step("call_agent", json{{"agent_name", "self_caller"}, {"task_message", "again"}})});
    auto root = rig.root(backend);
    rig.kernel->create_agent(root, spec("self_caller", {"call_agent"}));
    auto resp = rig.kernel->call_agent(root, "self_caller", "start");
    // the inner call fails, then the transcript runs dry, so the outer call fails too
    CHECK_FALSE(resp.ok());
    auto events = rig.kernel->stm().nodes();
    bool saw_limit = false;
    for (const auto& n : events)
        if (n.payload.dump().find("nesting limit") != std::string::npos) saw_limit = true;
    CHECK(saw_limit);
    CHECK(rig.kernel->live_clones() == 0);
}

TEST_CASE("ensemble members run as isolated clones sharing a board") {
    Rig rig;
    auto root = rig.root(scripted({text_step("combined")}));
    rig.kernel->create_agent(root, spec("fuzzer"));
    rig.kernel->create_agent(root, spec("auditor"));
    rig.kernel->gateway().register_backend("m1", scripted({call_step("post_message", json{{"text", "seed found"}}),
                                                           text_step("fuzzer done", "seq")}));
    rig.kernel->gateway().register_backend("m2", scripted({text_step("auditor done")}));
    EnsembleRequest req{"find bugs", {{"fuzzer", "m1"}, {"auditor", "m2"}}};
    auto res = rig.kernel->run_ensemble(root, req);
    REQUIRE(res.members.size() == 2);
    CHECK(res.members[0].response.ok());
    CHECK(res.members[1].response.ok());
    CHECK(res.members[0].backend_id == "m1");
    CHECK(res.summary == "combined");
    auto msgs = rig.kernel->boards().get(res.board_id)->messages();
    REQUIRE(msgs.size() == 1);
    CHECK(msgs[0].writer == res.members[0].clone_id);
    CHECK(rig.kernel->live_clones() == 0);

    EnsembleRequest bad{"x", {{"fuzzer", "m1"}, {"nobody", "m2"}}};
    auto started = rig.kernel->clones_started();
    CHECK(code_of([&] { rig.kernel->run_ensemble(root, bad); }) == ErrorCode::AgentNotFound);
    CHECK(rig.kernel->clones_started() == started);
}
