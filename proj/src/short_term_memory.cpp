#include "forge/short_term_memory.hpp"

#include "forge/error.hpp"

#include <algorithm>
#include <mutex>
#include <set>

namespace forge {

namespace {

const std::set<std::string, std::less<>> kSpawningTools = {"create_agent", "call_agent", "run_ensemble",
                                                           "agent_ensemble"};

constexpr std::size_t kMaxWalkHops = 16;

std::string id_str(NodeId id) { return std::to_string(id); }

const json* lookup_path(const json& doc, const std::string& dotted) {
    const json* cur = &doc;
    std::size_t start = 0;
    while (start <= dotted.size()) {
        std::size_t dot = dotted.find('.', start);
        std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return cur;
}

void check_where(const json& where) {
    if (!where.is_object()) throw Error(ErrorCode::MalformedPattern, "'where' must be a document");
    for (const auto& [key, cond] : where.items()) {
        if (!cond.is_object()) continue;
        for (const auto& [op, arg] : cond.items()) {
            if (op == "contains" && arg.is_string()) continue;
            if (op == "exists" && arg.is_boolean()) continue;
            throw Error(ErrorCode::MalformedPattern, "bad predicate '" + op + "' on '" + key + "'");
        }
    }
}

bool where_holds(const json& where, const json& payload) {
    for (const auto& [key, cond] : where.items()) {
        const json* v = lookup_path(payload, key);
        if (cond.is_object()) {
            if (cond.contains("exists") && cond["exists"].get<bool>() != (v != nullptr && !v->is_null())) return false;
            if (cond.contains("contains")) {
                if (!v || !v->is_string()) return false;
                if (v->get<std::string>().find(cond["contains"].get<std::string>()) == std::string::npos) return false;
            }
        } else if (!v || *v != cond) {
            return false;
        }
    }
    return true;
}

struct NodeFilter {
    bool impossible = false;
    std::optional<StmKind> kind;
    std::optional<NodeId> id;
    json where = json::object();

    bool admits(const StmNode& n) const {
        if (impossible) return false;
        if (kind && n.kind != *kind) return false;
        if (id && n.id != *id) return false;
        return where_holds(where, n.payload);
    }
};

NodeFilter parse_filter(const json& j, bool allow_id) {
    if (!j.is_object()) throw Error(ErrorCode::MalformedPattern, "node filter must be a document");
    NodeFilter f;
    for (const auto& [key, value] : j.items()) {
        if (key == "kind") {
            if (!value.is_string()) throw Error(ErrorCode::MalformedPattern, "'kind' must be a string");
            f.kind = parse_stm_kind(value.get<std::string>());
            if (!f.kind) f.impossible = true;
        } else if (key == "id" && allow_id) {
            if (!value.is_number_unsigned()) throw Error(ErrorCode::MalformedPattern, "'id' must be a node id");
            f.id = value.get<NodeId>();
        } else if (key == "where") {
            check_where(value);
            f.where = value;
        } else if (!(key == "edge" || key == "edges" || key == "dir" || key == "min" || key == "max") || allow_id) {
            throw Error(ErrorCode::MalformedPattern, "unknown pattern field '" + key + "'");
        }
    }
    return f;
}

struct WalkStep {
    std::set<StmEdgeKind> edges;
    bool outgoing = true;
    std::size_t min_hops = 1;
    std::size_t max_hops = 1;
    NodeFilter target;
};

WalkStep parse_step(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::MalformedPattern, "walk step must be a document");
    WalkStep s;
    auto add_edge = [&](const json& e) {
        if (!e.is_string()) throw Error(ErrorCode::MalformedPattern, "edge kinds must be strings");
        auto k = parse_stm_edge_kind(e.get<std::string>());
        if (!k) throw Error(ErrorCode::MalformedPattern, "unknown edge kind '" + e.get<std::string>() + "'");
        s.edges.insert(*k);
    };
    if (j.contains("edge")) add_edge(j["edge"]);
    if (j.contains("edges")) {
        if (!j["edges"].is_array()) throw Error(ErrorCode::MalformedPattern, "'edges' must be a list");
        for (const auto& e : j["edges"]) add_edge(e);
    }
    if (s.edges.empty()) throw Error(ErrorCode::MalformedPattern, "walk step names no edge kind");
    if (j.contains("dir")) {
        if (j["dir"] == "out") s.outgoing = true;
        else if (j["dir"] == "in") s.outgoing = false;
        else throw Error(ErrorCode::MalformedPattern, "'dir' must be \"in\" or \"out\"");
    }
    auto read_count = [&](const char* key, std::size_t& out) {
        if (!j.contains(key)) return;
        if (!j[key].is_number_integer() || j[key].get<std::int64_t>() < 0)
            throw Error(ErrorCode::MalformedPattern, std::string("'") + key + "' must be a count");
        out = j[key].get<std::size_t>();
    };
    read_count("min", s.min_hops);
    s.max_hops = std::max(s.max_hops, s.min_hops);
    read_count("max", s.max_hops);
    if (s.min_hops == 0 || s.min_hops > s.max_hops || s.max_hops > kMaxWalkHops)
        throw Error(ErrorCode::MalformedPattern, "hop bounds must satisfy 1 <= min <= max <= 16");
    s.target = parse_filter(j, false);
    return s;
}

}  // namespace

std::string_view to_string(StmKind kind) noexcept {
    switch (kind) {
        case StmKind::AgentRun: return "AgentRun";
        case StmKind::Event: return "Event";
        case StmKind::RawToolResponse: return "RawToolResponse";
        case StmKind::SummaryEvent: return "SummaryEvent";
    }
    return "";
}

std::string_view to_string(StmEdgeKind kind) noexcept {
    switch (kind) {
        case StmEdgeKind::emits: return "emits";
        case StmEdgeKind::spawns: return "spawns";
        case StmEdgeKind::raw_of: return "raw_of";
        case StmEdgeKind::summarizes: return "summarizes";
    }
    return "";
}

std::optional<StmKind> parse_stm_kind(std::string_view s) noexcept {
    for (auto k : {StmKind::AgentRun, StmKind::Event, StmKind::RawToolResponse, StmKind::SummaryEvent})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

std::optional<StmEdgeKind> parse_stm_edge_kind(std::string_view s) noexcept {
    for (auto k : {StmEdgeKind::emits, StmEdgeKind::spawns, StmEdgeKind::raw_of, StmEdgeKind::summarizes})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

json RunSummary::to_json() const {
    json j = {{"run_id", run_id}, {"agent_name", agent_name}, {"status", status}, {"event_count", event_count}};
    j["parent_run"] = parent_run ? json(*parent_run) : json(nullptr);
    j["parent_event"] = parent_event ? json(*parent_event) : json(nullptr);
    return j;
}

StmGraph::StmGraph(std::size_t truncation_limit) : truncation_limit_(truncation_limit) {}

NodeId StmGraph::add_node_locked(StmKind kind, json payload, std::string raw) {
    NodeId id = nodes_.size() + 1;
    nodes_.push_back(StmNode{id, kind, std::move(payload), std::move(raw)});
    return id;
}

void StmGraph::add_edge_locked(NodeId src, NodeId dst, StmEdgeKind kind) {
    edges_.push_back(StmEdge{src, dst, kind});
    out_edges_[src].push_back(edges_.size() - 1);
    in_edges_[dst].push_back(edges_.size() - 1);
}

const StmNode& StmGraph::node_locked(NodeId id) const {
    if (id == 0 || id > nodes_.size()) throw Error(ErrorCode::UnknownRun, "unknown node " + id_str(id));
    return nodes_[id - 1];
}

StmGraph::RunState& StmGraph::run_locked(NodeId run) {
    auto it = runs_.find(run);
    if (it == runs_.end()) throw Error(ErrorCode::UnknownRun, "unknown run " + id_str(run));
    return it->second;
}

const StmGraph::RunState& StmGraph::run_locked(NodeId run) const {
    auto it = runs_.find(run);
    if (it == runs_.end()) throw Error(ErrorCode::UnknownRun, "unknown run " + id_str(run));
    return it->second;
}

NodeId StmGraph::open_agent_run(std::optional<NodeId> parent_event, const json& spec_snapshot) {
    std::unique_lock lock(mu_);
    json payload = {{"agent_name", spec_snapshot.value("agent_name", std::string())},
                    {"spec", spec_snapshot},
                    {"status", "running"},
                    {"parent_run", nullptr},
                    {"parent_event", nullptr}};
    if (parent_event) {
        if (*parent_event == 0 || *parent_event > nodes_.size())
            throw Error(ErrorCode::InvalidParent, "parent event " + id_str(*parent_event) + " does not exist");
        const StmNode& parent = nodes_[*parent_event - 1];
        if (parent.kind != StmKind::Event || parent.payload.value("turn", "") != "tool_call" ||
            !kSpawningTools.contains(parent.payload.value("tool_name", std::string())))
            throw Error(ErrorCode::InvalidParent,
                        "node " + id_str(*parent_event) + " is not an agent-spawning tool_call event");
        payload["parent_event"] = *parent_event;
        payload["parent_run"] = parent.payload.at("run");
    }
    NodeId run = add_node_locked(StmKind::AgentRun, std::move(payload));
    runs_.emplace(run, RunState{});
    if (parent_event) add_edge_locked(*parent_event, run, StmEdgeKind::spawns);
    return run;
}

void StmGraph::close_agent_run(NodeId run, const std::string& status) {
    std::unique_lock lock(mu_);
    RunState& state = run_locked(run);
    state.open = false;
    nodes_[run - 1].payload["status"] = status;
}

NodeId StmGraph::begin_event(NodeId run, json payload) {
    std::unique_lock lock(mu_);
    RunState& state = run_locked(run);
    if (!state.open) throw Error(ErrorCode::RunClosed, "run " + id_str(run) + " is closed");
    if (!payload.is_object()) payload = json{{"value", payload}};
    payload["index"] = state.events.size() + 1;
    payload["run"] = run;
    NodeId ev = add_node_locked(StmKind::Event, std::move(payload));
    state.events.push_back(ev);
    add_edge_locked(run, ev, StmEdgeKind::emits);
    return ev;
}

void StmGraph::attach_output_locked(NodeId event, std::optional<std::string> output,
                                    std::optional<std::string> full) {
    if (!output) return;
    json& payload = nodes_[event - 1].payload;
    if (full && *full != *output) {
        payload["response"] = utf8_prefix(*output, truncation_limit_);
        payload["truncated"] = true;
        payload["raw_bytes"] = full->size();
        NodeId raw = add_node_locked(StmKind::RawToolResponse, json{{"event", event}, {"size", full->size()}},
                                     std::move(*full));
        add_edge_locked(event, raw, StmEdgeKind::raw_of);
    } else if (output->size() > truncation_limit_) {
        payload["response"] = utf8_prefix(*output, truncation_limit_);
        payload["truncated"] = true;
        payload["raw_bytes"] = output->size();
        NodeId raw = add_node_locked(StmKind::RawToolResponse, json{{"event", event}, {"size", output->size()}},
                                     std::move(*output));
        add_edge_locked(event, raw, StmEdgeKind::raw_of);
    } else {
        payload["response"] = std::move(*output);
        payload["truncated"] = false;
    }
}

void StmGraph::complete_event(NodeId event, const json& fields, std::optional<std::string> output,
                              std::optional<std::string> full) {
    std::unique_lock lock(mu_);
    const StmNode& n = node_locked(event);
    if (n.kind != StmKind::Event) throw Error(ErrorCode::UnknownRun, "node " + id_str(event) + " is not an event");
    json& payload = nodes_[event - 1].payload;
    if (fields.is_object())
        for (const auto& [k, v] : fields.items()) payload[k] = v;
    attach_output_locked(event, std::move(output), std::move(full));
}

NodeId StmGraph::append_event(NodeId run, json payload, std::optional<std::string> raw_output) {
    std::unique_lock lock(mu_);
    RunState& state = run_locked(run);
    if (!state.open) throw Error(ErrorCode::RunClosed, "run " + id_str(run) + " is closed");
    if (!payload.is_object()) payload = json{{"value", payload}};
    payload["index"] = state.events.size() + 1;
    payload["run"] = run;
    NodeId ev = add_node_locked(StmKind::Event, std::move(payload));
    state.events.push_back(ev);
    add_edge_locked(run, ev, StmEdgeKind::emits);
    attach_output_locked(ev, std::move(raw_output));
    return ev;
}

NodeId StmGraph::summarize_history(NodeId run, std::size_t keep_recent, const Summarizer& summarize) {
    std::size_t first = 0, last = 0;
    json covered = json::array();
    {
        std::shared_lock lock(mu_);
        const RunState& state = run_locked(run);
        if (!state.open) throw Error(ErrorCode::RunClosed, "run " + id_str(run) + " is closed");
        first = state.covered_upto + 1;
        if (state.events.size() <= keep_recent || state.events.size() - keep_recent < first)
            throw Error(ErrorCode::NothingToSummarize,
                        "run " + id_str(run) + " has no uncovered events older than the last " +
                            std::to_string(keep_recent));
        last = state.events.size() - keep_recent;
        for (std::size_t i = first; i <= last; ++i) covered.push_back(nodes_[state.events[i - 1] - 1].payload);
    }
    // The model call happens outside the lock; the run has a single writer.
    std::string text = summarize(covered);
    std::unique_lock lock(mu_);
    RunState& state = run_locked(run);
    NodeId s = add_node_locked(StmKind::SummaryEvent,
                               json{{"summary", text}, {"from", first}, {"to", last}, {"run", run}});
    add_edge_locked(run, s, StmEdgeKind::emits);
    for (std::size_t i = first; i <= last; ++i) add_edge_locked(s, state.events[i - 1], StmEdgeKind::summarizes);
    state.summaries.push_back(s);
    state.covered_upto = last;
    return s;
}

Turn StmGraph::event_turn_locked(const StmNode& event) const {
    const json& p = event.payload;
    Turn t;
    t.seq = p.value("index", std::uint64_t{0});
    const std::string turn = p.value("turn", std::string());
    if (turn == "tool_call") {
        t.role = "tool";
        t.tool_call = ToolCall{p.value("tool_name", std::string()), p.value("args", json::object())};
        t.tool_response = p.value("response", std::string());
    } else if (turn == "text") {
        t.role = "model";
        t.text = p.value("text", std::string());
    } else {
        t.role = "context";
        t.text = p.contains("text") ? p.value("text", std::string()) : dump_lossy(p);
        t.tool_response = p.value("response", std::string());
    }
    return t;
}

std::vector<Turn> StmGraph::assemble_history(NodeId run) const {
    std::shared_lock lock(mu_);
    const RunState& state = run_locked(run);
    std::vector<Turn> history;
    for (NodeId s : state.summaries) {
        const json& p = nodes_[s - 1].payload;
        Turn t;
        t.seq = p["to"].get<std::uint64_t>();
        t.role = "summary";
        t.text = p["summary"].get<std::string>();
        history.push_back(std::move(t));
    }
    for (std::size_t i = state.covered_upto; i < state.events.size(); ++i)
        history.push_back(event_turn_locked(nodes_[state.events[i] - 1]));
    return history;
}

RunSummary StmGraph::run_summary(NodeId run) const {
    std::shared_lock lock(mu_);
    const RunState& state = run_locked(run);
    const json& p = nodes_[run - 1].payload;
    RunSummary s;
    s.run_id = run;
    s.agent_name = p.value("agent_name", std::string());
    s.status = p.value("status", std::string());
    if (!p["parent_run"].is_null()) s.parent_run = p["parent_run"].get<NodeId>();
    if (!p["parent_event"].is_null()) s.parent_event = p["parent_event"].get<NodeId>();
    s.event_count = state.events.size();
    return s;
}

std::vector<RunSummary> StmGraph::list_agent_runs(const RunFilter& filter) const {
    std::vector<NodeId> ids;
    {
        std::shared_lock lock(mu_);
        for (const auto& [id, _] : runs_) ids.push_back(id);
    }
    std::vector<RunSummary> out;
    for (NodeId id : ids) {
        RunSummary s = run_summary(id);
        if (filter.name_substring && !contains_ci(s.agent_name, *filter.name_substring)) continue;
        if (filter.status && s.status != *filter.status) continue;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<json> StmGraph::inspect_events(NodeId run, std::size_t first, std::size_t last) const {
    std::shared_lock lock(mu_);
    const RunState& state = run_locked(run);
    std::vector<json> out;
    first = std::max<std::size_t>(first, 1);
    last = std::min(last, state.events.size());
    for (std::size_t i = first; i <= last; ++i) out.push_back(nodes_[state.events[i - 1] - 1].payload);
    return out;
}

std::vector<json> StmGraph::inspect_events(NodeId run) const {
    return inspect_events(run, 1, static_cast<std::size_t>(-1));
}

std::string StmGraph::recover_raw(NodeId event) const {
    std::shared_lock lock(mu_);
    const StmNode& n = node_locked(event);
    if (n.kind != StmKind::Event) throw Error(ErrorCode::NoRawAttachment, "node " + id_str(event) + " is not an event");
    auto it = out_edges_.find(event);
    if (it != out_edges_.end())
        for (std::size_t e : it->second)
            if (edges_[e].kind == StmEdgeKind::raw_of) return nodes_[edges_[e].dst - 1].raw;
    throw Error(ErrorCode::NoRawAttachment, "event " + id_str(event) + " has no raw tool response");
}

std::vector<std::vector<NodeId>> StmGraph::graph_query(const json& pattern) const {
    if (!pattern.is_object() || !pattern.contains("match"))
        throw Error(ErrorCode::MalformedPattern, "pattern needs a 'match' document");
    for (const auto& [key, _] : pattern.items())
        if (key != "match" && key != "steps") throw Error(ErrorCode::MalformedPattern, "unknown pattern field '" + key + "'");
    NodeFilter start = parse_filter(pattern["match"], true);
    std::vector<WalkStep> steps;
    if (pattern.contains("steps")) {
        if (!pattern["steps"].is_array()) throw Error(ErrorCode::MalformedPattern, "'steps' must be a list");
        for (const auto& s : pattern["steps"]) steps.push_back(parse_step(s));
    }

    std::shared_lock lock(mu_);
    std::vector<std::vector<NodeId>> bindings;
    for (const StmNode& n : nodes_)
        if (start.admits(n)) bindings.push_back({n.id});

    for (const WalkStep& step : steps) {
        std::vector<std::vector<NodeId>> next;
        for (const auto& b : bindings) {
            std::set<NodeId> endpoints;
            std::vector<NodeId> frontier{b.back()};
            for (std::size_t hop = 1; hop <= step.max_hops && !frontier.empty(); ++hop) {
                std::set<NodeId> reached;
                for (NodeId cur : frontier) {
                    const auto& index = step.outgoing ? out_edges_ : in_edges_;
                    auto it = index.find(cur);
                    if (it == index.end()) continue;
                    for (std::size_t e : it->second) {
                        const StmEdge& edge = edges_[e];
                        if (!step.edges.contains(edge.kind)) continue;
                        reached.insert(step.outgoing ? edge.dst : edge.src);
                    }
                }
                if (hop >= step.min_hops)
                    for (NodeId r : reached)
                        if (step.target.admits(nodes_[r - 1])) endpoints.insert(r);
                frontier.assign(reached.begin(), reached.end());
            }
            for (NodeId end : endpoints) {
                auto nb = b;
                nb.push_back(end);
                next.push_back(std::move(nb));
            }
        }
        bindings = std::move(next);
    }
    std::sort(bindings.begin(), bindings.end());
    bindings.erase(std::unique(bindings.begin(), bindings.end()), bindings.end());
    return bindings;
}

std::size_t StmGraph::summary_count(NodeId run) const {
    std::shared_lock lock(mu_);
    return run_locked(run).summaries.size();
}

std::size_t StmGraph::event_count(NodeId run) const {
    std::shared_lock lock(mu_);
    return run_locked(run).events.size();
}

std::optional<StmNode> StmGraph::node(NodeId id) const {
    std::shared_lock lock(mu_);
    if (id == 0 || id > nodes_.size()) return std::nullopt;
    return nodes_[id - 1];
}

std::vector<StmNode> StmGraph::nodes() const {
    std::shared_lock lock(mu_);
    return nodes_;
}

std::vector<StmEdge> StmGraph::edges() const {
    std::shared_lock lock(mu_);
    return edges_;
}

std::string StmGraph::export_run(NodeId run) const {
    std::shared_lock lock(mu_);
    run_locked(run);
    std::set<NodeId> keep;
    std::vector<NodeId> stack{run};
    while (!stack.empty()) {
        NodeId cur = stack.back();
        stack.pop_back();
        if (!keep.insert(cur).second) continue;
        auto it = out_edges_.find(cur);
        if (it == out_edges_.end()) continue;
        for (std::size_t e : it->second) stack.push_back(edges_[e].dst);
    }
    std::string out;
    for (NodeId id : keep) {
        const StmNode& n = nodes_[id - 1];
        json line = {{"node_id", n.id}, {"kind", to_string(n.kind)}, {"payload", n.payload}};
        if (n.kind == StmKind::RawToolResponse) line["raw_base64"] = base64_encode(n.raw);
        out += dump_lossy(line) + '\n';
    }
    for (const StmEdge& e : edges_) {
        if (!keep.contains(e.src) || !keep.contains(e.dst)) continue;
        out += json{{"src", e.src}, {"dst", e.dst}, {"kind", to_string(e.kind)}}.dump() + '\n';
    }
    return out;
}

}  // namespace forge
