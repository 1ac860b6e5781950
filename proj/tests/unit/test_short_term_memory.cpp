#include "forge/error.hpp"
#include "forge/short_term_memory.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>
#include <sstream>

using namespace forge;
using namespace forge::test;

namespace {

json tool_event(const std::string& tool) {
    return {{"turn", "tool_call"}, {"tool_name", tool}, {"args", json::object()}};
}

std::string fixed_summary(const json& covered) {
    return "summary of " + std::to_string(covered.size()) + " events";
}

std::string random_bytes(Rng& rng, std::size_t n) {
    std::string s(n, '\0');
    for (auto& c : s) c = static_cast<char>(rng() & 0xff);
    return s;
}

}  // namespace

TEST_CASE("runs and events get sequential ids linked by emits edges") {
    StmGraph g;
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    CHECK(run == 1);
    NodeId e1 = g.append_event(run, {{"turn", "text"}, {"text", "hi"}});
    NodeId e2 = g.append_event(run, tool_event("ls"), std::string("out"));
    CHECK(e1 == 2);
    CHECK(e2 == 3);
    auto edges = g.edges();
    CHECK(edges == std::vector<StmEdge>{{run, e1, StmEdgeKind::emits}, {run, e2, StmEdgeKind::emits}});
    CHECK(g.node(e2)->payload["index"] == 2);
    CHECK(g.node(e2)->payload["response"] == "out");
    CHECK(g.node(e2)->payload["truncated"] == false);
    CHECK(g.event_count(run) == 2);
}

TEST_CASE("oversized output is truncated and the raw bytes stay recoverable") {
    Rng rng(11);
    StmGraph g(64);
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    for (int i = 0; i < 50; ++i) {
        std::string raw = random_bytes(rng, 65 + rng() % 300);
        NodeId ev = g.append_event(run, tool_event("cat"), raw);
        auto n = g.node(ev);
        CHECK(n->payload["truncated"] == true);
        CHECK(n->payload["response"].get<std::string>().size() <= 64);
        CHECK(g.recover_raw(ev) == raw);
    }
    NodeId small = g.append_event(run, tool_event("cat"), std::string(64, 'x'));
    CHECK(g.node(small)->payload["truncated"] == false);
    CHECK_THROWS_AS(g.recover_raw(small), Error);
}

TEST_CASE("truncation never splits a multi-byte character") {
    StmGraph g(10);
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    std::string text;
    for (int i = 0; i < 10; ++i) text += "\xc3\xa9";  // U+00E9
    NodeId ev = g.append_event(run, tool_event("cat"), text);
    std::string shown = g.node(ev)->payload["response"];
    CHECK(shown.size() == 10);
    CHECK(g.recover_raw(ev) == text);
}

TEST_CASE("tool events completed with an explicit full output keep it as raw") {
    StmGraph g(1000);
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    NodeId ev = g.begin_event(run, tool_event("fuzz"));
    g.complete_event(ev, {{"status", "ok"}}, std::string("{\"output\":\"abc\",\"truncated\":true}"),
                     std::string("abcdefgh"));
    CHECK(g.node(ev)->payload["truncated"] == true);
    CHECK(g.node(ev)->payload["status"] == "ok");
    CHECK(g.recover_raw(ev) == "abcdefgh");
}

TEST_CASE("spawned runs must hang off an agent-spawning tool call") {
    StmGraph g;
    NodeId root = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    NodeId text = g.append_event(root, {{"turn", "text"}, {"text", "x"}});
    NodeId ls = g.append_event(root, tool_event("run_terminal_command"));
    NodeId call = g.begin_event(root, tool_event("call_agent"));
    CHECK_THROWS_AS(g.open_agent_run(text, {{"agent_name", "c"}}), Error);
    CHECK_THROWS_AS(g.open_agent_run(ls, {{"agent_name", "c"}}), Error);
    CHECK_THROWS_AS(g.open_agent_run(root, {{"agent_name", "c"}}), Error);
    CHECK_THROWS_AS(g.open_agent_run(999, {{"agent_name", "c"}}), Error);
    NodeId child = g.open_agent_run(call, {{"agent_name", "c"}});
    RunSummary s = g.run_summary(child);
    CHECK(s.parent_run == root);
    CHECK(s.parent_event == call);
    auto chain = g.graph_query({{"match", {{"kind", "AgentRun"}, {"id", root}}},
                                {"steps", {{{"edge", "emits"}}, {{"edge", "spawns"}, {"kind", "AgentRun"}}}}});
    CHECK(chain == std::vector<std::vector<NodeId>>{{root, call, child}});
}

TEST_CASE("closed runs reject new events") {
    StmGraph g;
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    g.close_agent_run(run, "completed");
    try {
        g.append_event(run, tool_event("x"));
        FAIL("expected RunClosed");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::RunClosed);
    }
    CHECK(g.run_summary(run).status == "completed");
}

TEST_CASE("summarization covers all but the most recent events") {
    StmGraph g;
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    for (int i = 0; i < 10; ++i) g.append_event(run, {{"turn", "text"}, {"text", "event " + std::to_string(i)}});
    json seen;
    NodeId s = g.summarize_history(run, 3, [&](const json& covered) {
        seen = covered;
        return fixed_summary(covered);
    });
    CHECK(seen.size() == 7);
    CHECK(g.node(s)->kind == StmKind::SummaryEvent);
    auto h = g.assemble_history(run);
    REQUIRE(h.size() == 4);
    CHECK(h[0].role == "summary");
    CHECK(h[0].text == "summary of 7 events");
    CHECK(h[0].seq == 7);
    CHECK(h[1].seq == 8);
    CHECK(h[3].seq == 10);
    for (std::size_t i = 1; i <= 10; ++i) CHECK(g.inspect_events(run, i, i).size() == 1);
    CHECK_THROWS_AS(g.summarize_history(run, 3, fixed_summary), Error);
    g.append_event(run, {{"turn", "text"}, {"text", "more"}});
    g.summarize_history(run, 3, fixed_summary);
    auto h2 = g.assemble_history(run);
    CHECK(h2.size() == 5);
    CHECK(g.summary_count(run) == 2);
    auto covered = g.graph_query({{"match", {{"id", s}}}, {"steps", {{{"edge", "summarizes"}}}}});
    CHECK(covered.size() == 7);
}

TEST_CASE("nothing to summarize when the run is shorter than the keep window") {
    StmGraph g;
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    g.append_event(run, {{"turn", "text"}, {"text", "a"}});
    try {
        g.summarize_history(run, 8, fixed_summary);
        FAIL("expected NothingToSummarize");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NothingToSummarize);
    }
}

TEST_CASE("inspect_events clamps its range") {
    StmGraph g;
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    for (int i = 0; i < 5; ++i) g.append_event(run, {{"turn", "text"}, {"text", std::to_string(i)}});
    CHECK(g.inspect_events(run, 0, 100).size() == 5);
    CHECK(g.inspect_events(run, 4, 100).size() == 2);
    CHECK(g.inspect_events(run, 6, 9).empty());
    CHECK(g.inspect_events(run, 3, 2).empty());
    CHECK_THROWS_AS(g.inspect_events(12345), Error);
}

TEST_CASE("list_agent_runs filters by name and status") {
    StmGraph g;
    NodeId a = g.open_agent_run(std::nullopt, {{"agent_name", "gdb_helper"}});
    g.open_agent_run(std::nullopt, {{"agent_name", "static_reader"}});
    g.close_agent_run(a, "completed");
    CHECK(g.list_agent_runs().size() == 2);
    CHECK(g.list_agent_runs(RunFilter{"GDB", std::nullopt}).size() == 1);
    CHECK(g.list_agent_runs(RunFilter{std::nullopt, "running"}).at(0).agent_name == "static_reader");
    CHECK(g.list_agent_runs(RunFilter{"zzz", std::nullopt}).empty());
}

TEST_CASE("graph_query predicates and malformed patterns") {
    StmGraph g;
    NodeId run = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    NodeId a = g.append_event(run, {{"turn", "tool_call"}, {"tool_name", "set_breakpoint"}, {"args", {{"at", "main"}}}});
    g.append_event(run, {{"turn", "text"}, {"text", "done"}});
    CHECK(g.graph_query({{"match", {{"kind", "Event"}, {"where", {{"tool_name", "set_breakpoint"}}}}}}) ==
          std::vector<std::vector<NodeId>>{{a}});
    CHECK(g.graph_query({{"match", {{"kind", "Event"}, {"where", {{"args.at", "main"}}}}}}).size() == 1);
    CHECK(g.graph_query({{"match", {{"kind", "Event"}, {"where", {{"tool_name", {{"contains", "break"}}}}}}}}).size() == 1);
    CHECK(g.graph_query({{"match", {{"kind", "Event"}, {"where", {{"text", {{"exists", true}}}}}}}}).size() == 1);
    CHECK(g.graph_query({{"match", {{"kind", "Nonexistent"}}}}).empty());
    CHECK(g.graph_query({{"match", {{"kind", "Event"}}}, {"steps", {{{"edge", "emits"}, {"dir", "in"}}}}}).size() == 2);
    for (const json& bad : {json{{"steps", json::array()}}, json{{"match", {{"kind", "Event"}}}, {"bogus", 1}},
                            json{{"match", {{"kind", "Event"}}}, {"steps", {{{"edge", "teleports"}}}}},
                            json{{"match", {{"kind", "Event"}}}, {"steps", {{{"dir", "out"}}}}},
                            json{{"match", {{"kind", "Event"}}}, {"steps", {{{"edge", "emits"}, {"max", 17}}}}},
                            json{{"match", {{"where", {{"x", {{"regex", "a"}}}}}}}}}) {
        try {
            g.graph_query(bad);
            FAIL("expected MalformedPattern for " << bad.dump());
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MalformedPattern);
        }
    }
}

TEST_CASE("export_run writes the run subtree as JSON lines") {
    StmGraph g(4);
    NodeId root = g.open_agent_run(std::nullopt, {{"agent_name", "root"}});
    NodeId call = g.begin_event(root, tool_event("call_agent"));
    NodeId child = g.open_agent_run(call, {{"agent_name", "c"}});
    g.append_event(child, tool_event("cat"), std::string("0123456789"));
    g.complete_event(call, {}, std::string("ok"));
    NodeId other = g.open_agent_run(std::nullopt, {{"agent_name", "other"}});
    g.append_event(other, {{"turn", "text"}, {"text", "x"}});

    std::istringstream in(g.export_run(root));
    std::string line;
    std::size_t nodes = 0, edges = 0;
    bool saw_raw = false;
    while (std::getline(in, line)) {
        json j = json::parse(line);
        if (j.contains("node_id")) {
            ++nodes;
            if (j.contains("raw_base64")) {
                saw_raw = true;
                CHECK(base64_decode(j["raw_base64"].get<std::string>()) == "0123456789");
            }
        } else {
            ++edges;
        }
    }
    CHECK(nodes == 5);  // root, call, child, event, raw
    CHECK(edges == 4);
    CHECK(saw_raw);
}

TEST_CASE("random operation sequences keep the graph well formed") {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        Rng rng(seed);
        StmGraph g(32);
        std::vector<NodeId> runs{g.open_agent_run(std::nullopt, {{"agent_name", "root"}})};
        std::vector<NodeId> spawners;
        std::map<NodeId, std::string> raws;
        for (int op = 0; op < 120; ++op) {
            NodeId run = runs[rng() % runs.size()];
            switch (rng() % 5) {
                case 0: {
                    std::string out(rng() % 80, 'a' + static_cast<char>(rng() % 26));
                    NodeId ev = g.append_event(run, tool_event("cat"), out);
                    if (out.size() > 32) raws[ev] = out;
                    break;
                }
                case 1: spawners.push_back(g.begin_event(run, tool_event("call_agent"))); break;
                case 2:
                    if (!spawners.empty())
                        runs.push_back(g.open_agent_run(spawners[rng() % spawners.size()], {{"agent_name", "sub"}}));
                    break;
                case 3:
                    try {
                        g.summarize_history(run, 1 + rng() % 4, fixed_summary);
                    } catch (const Error& e) {
                        CHECK(e.code() == ErrorCode::NothingToSummarize);
                    }
                    break;
                default: g.append_event(run, {{"turn", "text"}, {"text", "t"}}); break;
            }
        }
        auto nodes = g.nodes();
        for (std::size_t i = 0; i < nodes.size(); ++i) CHECK(nodes[i].id == i + 1);
        std::map<NodeId, int> emits_in;
        for (const auto& e : g.edges())
            if (e.kind == StmEdgeKind::emits) ++emits_in[e.dst];
        for (const auto& n : nodes)
            if (n.kind == StmKind::Event || n.kind == StmKind::SummaryEvent) CHECK(emits_in[n.id] == 1);
        for (NodeId run : runs) {
            auto h = g.assemble_history(run);
            for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i - 1].seq < h[i].seq);
        }
        for (const auto& [ev, raw] : raws) CHECK(g.recover_raw(ev) == raw);
    }
}
