#include "forge/memory_agent.hpp"

#include "forge/error.hpp"
#include "forge/kernel.hpp"

#include <algorithm>
#include <set>

namespace forge {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool in(const std::vector<std::string>& names, const std::string& name) {
    return std::find(names.begin(), names.end(), name) != names.end();
}

}  // namespace

std::string_view to_string(StoreDecision::Kind kind) noexcept {
    switch (kind) {
        case StoreDecision::Kind::created: return "created";
        case StoreDecision::Kind::updated: return "updated";
        case StoreDecision::Kind::skipped: return "skipped";
    }
    return "created";
}

json MemoryAnswer::to_json() const {
    return {{"tier", tier},       {"action", action},   {"found", found},
            {"total_found", total_found}, {"results", results}, {"summary", summary}};
}

json StoreDecision::to_json() const {
    return {{"decision", to_string(kind)}, {"node_id", node_id}};
}

MemoryAgent::MemoryAgent(Kernel& kernel) : kernel_(kernel) {}

const std::vector<std::string>& MemoryAgent::short_term_tools() {
    static const std::vector<std::string> tools = {"list_agent_runs", "inspect_events", "recover_raw", "graph_query"};
    return tools;
}

const std::vector<std::string>& MemoryAgent::long_term_tools() {
    static const std::vector<std::string> tools = {"create_node", "create_edge", "list_schema", "search_nodes",
                                                   "grep_nodes",  "update_node", "delete_node"};
    return tools;
}

AgentSpec MemoryAgent::default_spec(const std::string& model_name) {
    AgentSpec s;
    s.agent_name = std::string(kMemoryAgentName);
    s.description = "Answers natural-language questions about past work from short-term and long-term memory.";
    s.instruction =
        "You manage the memory of other agents. Decide whether a request concerns the current execution "
        "(use list_agent_runs, inspect_events, recover_raw or graph_query) or accumulated knowledge (use "
        "list_schema, search_nodes, grep_nodes and the node/edge writers). Search before storing so that "
        "only new knowledge is written. Reply with plain text once the request is handled.";
    s.model_name = model_name;
    s.tools_list = short_term_tools();
    s.tools_list.insert(s.tools_list.end(), long_term_tools().begin(), long_term_tools().end());
    return s;
}

MemoryAnswer MemoryAgent::handle_query(const MemoryQuery& query, const std::string& caller_backend) {
    if (trim(query.text).empty()) throw Error(ErrorCode::InvalidQuery, "memory query text is empty");
    auto pooled = kernel_.pool().find(std::string(kMemoryAgentName));
    PoolEntry entry;
    if (pooled) {
        entry = *pooled;
    } else {
        entry.spec = default_spec(kernel_.config().memory_agent_model);
        entry.scope = kernel_.resolve_scope(entry.spec.tools_list, nullptr);
    }
    std::string backend = kernel_.gateway().resolve(entry.spec.model_name, caller_backend);

    StmGraph scratch(kernel_.config().truncation_limit_bytes);
    AgentContext ctx;
    ctx.agent_id = entry.spec.agent_name + "@" + (query.requester.empty() ? "kernel" : query.requester);
    ctx.spec = entry.spec;
    ctx.scope = entry.scope;
    ctx.backend_id = backend;
    ctx.graph = &scratch;
    ctx.run = scratch.open_agent_run(std::nullopt, entry.spec.to_json());
    RunResult rr = kernel_.run_agent(ctx, query.text, kernel_.config().max_steps);

    bool any_stm = false, any_ltm = false, created = false, updated = false, deleted = false;
    for (const auto& t : ctx.trace) {
        if (in(short_term_tools(), t.tool_name)) any_stm = true;
        if (in(long_term_tools(), t.tool_name)) any_ltm = true;
        if (!t.ok) continue;
        if (t.tool_name == "create_node" || t.tool_name == "create_edge") created = true;
        if (t.tool_name == "update_node") updated = true;
        if (t.tool_name == "delete_node") deleted = true;
    }
    if (!any_stm && !any_ltm)
        throw Error(ErrorCode::RoutingFailure, "the memory agent finished without calling any memory tool");

    MemoryAnswer a;
    a.tier = any_ltm ? "long_term" : "short_term";
    a.action = deleted ? "delete" : updated ? "update" : created ? "store" : "search";

    std::set<std::uint64_t> seen_nodes;
    auto add_node = [&](const json& node) {
        if (seen_nodes.insert(node.value("node_id", std::uint64_t{0})).second) a.results.push_back(node);
    };
    for (const auto& t : ctx.trace) {
        if (!t.ok) continue;
        const json& r = t.response;
        if (a.action == "search") {
            if (t.tool_name == "search_nodes") {
                for (const auto& hit : r.value("results", json::array())) add_node(hit.at("node"));
            } else if (t.tool_name == "grep_nodes") {
                for (const auto& n : r.value("nodes", json::array())) add_node(n);
            } else if (t.tool_name == "list_agent_runs") {
                for (const auto& run : r.value("runs", json::array())) a.results.push_back(run);
            } else if (t.tool_name == "inspect_events") {
                for (const auto& e : r.value("events", json::array())) a.results.push_back(e);
            } else if (t.tool_name == "recover_raw") {
                a.results.push_back({{"event_id", r.value("event_id", 0)}, {"bytes", r.value("bytes", 0)}});
            } else if (t.tool_name == "graph_query") {
                for (const auto& b : r.value("bindings", json::array())) a.results.push_back({{"binding", b}});
            }
        } else if (r.contains("node_id")) {
            if (auto n = kernel_.ltm().node(r["node_id"].get<LtmNodeId>())) add_node(n->to_json());
            else a.results.push_back({{"node_id", r["node_id"]}, {"deleted", true}});
        } else if (r.contains("edge_id")) {
            a.results.push_back({{"edge_id", r["edge_id"]}});
        }
    }
    a.total_found = a.results.size();
    a.found = !a.results.empty();

    if (a.action == "search") {
        ModelRequest req;
        req.agent_id = ctx.agent_id;
        req.system_instruction = "Aggregate the retrieved memory items into a concise summary for the requesting agent.";
        req.task = query.text;
        std::uint64_t seq = 0;
        for (const auto& item : a.results) {
            Turn turn;
            turn.seq = ++seq;
            turn.role = "context";
            turn.text = dump_lossy(item);
            req.history.push_back(std::move(turn));
        }
        ModelResponse resp = kernel_.gateway().complete(backend, req);
        if (resp.kind != ModelResponse::Kind::text || !resp.text)
            throw Error(ErrorCode::InvalidTranscript, "memory summarization expected a text response");
        a.summary = *resp.text;
    } else {
        a.summary = rr.final_text;
    }
    return a;
}

StoreDecision MemoryAgent::dedup_store(const std::string& node_type, const std::string& label,
                                       const std::string& content, const std::string& backend) {
    if (trim(label).empty()) throw Error(ErrorCode::EmptyLabel, "memory label is empty");
    std::lock_guard lock(store_mu_);
    LtmStore& store = kernel_.ltm();
    auto hits = store.search_nodes(RetrievalQuery{node_type, label, 3});
    StoreDecision d;
    if (!hits.empty() && hits.front().score >= kernel_.config().dedup_threshold) {
        const LtmNode& existing = hits.front().node;
        d.node_id = existing.node_id;
        if (existing.content == content) {
            d.kind = StoreDecision::Kind::skipped;
            return d;
        }
        ModelRequest req;
        req.agent_id = std::string(kMemoryAgentName);
        req.system_instruction =
            "A stored memory item has a near-identical label. Reply SKIP to keep the stored item as it is, "
            "or reply with the merged content that should replace it.";
        req.task = json{{"existing", {{"label", existing.label}, {"content", existing.content}}},
                        {"candidate", {{"label", label}, {"content", content}}}}
                       .dump();
        ModelResponse resp = kernel_.gateway().complete(backend, req);
        std::string text = resp.text.value_or("");
        if (resp.kind != ModelResponse::Kind::text)
            throw Error(ErrorCode::InvalidTranscript, "merge decision expected a text response");
        if (trim(text) == "SKIP") {
            d.kind = StoreDecision::Kind::skipped;
            return d;
        }
        store.update_node(existing.node_id, std::nullopt, text);
        d.kind = StoreDecision::Kind::updated;
    } else {
        d.node_id = store.create_node(node_type, label, content);
        d.kind = StoreDecision::Kind::created;
    }
    kernel_.persist_ltm();
    return d;
}

}  // namespace forge
