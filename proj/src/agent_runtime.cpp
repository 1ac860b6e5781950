#include "forge/error.hpp"
#include "forge/kernel.hpp"
#include "forge/memory_agent.hpp"

#include <sstream>
#include <thread>

namespace forge {

namespace {

std::vector<std::string> text_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
    return out;
}

std::vector<std::string> string_items(const json& v) {
    std::vector<std::string> out;
    if (v.is_string()) {
        out.push_back(v.get<std::string>());
    } else if (v.is_array()) {
        for (const auto& item : v) out.push_back(item.is_string() ? item.get<std::string>() : dump_lossy(item));
    }
    return out;
}

// Shapes a clone's final text into the structured sub-agent response.
void fill_response(AgentResponse& r, const std::string& final_text, const std::vector<ToolTraceEntry>& trace) {
    r.final_text = final_text;
    json doc = json::parse(final_text, nullptr, false);
    if (doc.is_object() && doc.contains("summary")) {
        r.summary = string_items(doc["summary"]);
        if (doc.contains("observations")) {
            r.observations = string_items(doc["observations"]);
            return;
        }
    } else {
        r.summary = text_lines(final_text);
        if (r.summary.empty()) r.summary.push_back(final_text);
    }
    for (const auto& t : trace) {
        std::string line = t.tool_name + ": " + (t.ok ? "ok" : "failed");
        if (!t.ok) line += " - " + t.response.value("error", std::string());
        r.observations.push_back(line);
    }
}

}  // namespace

struct Kernel::CloneGuard {
    explicit CloneGuard(Kernel& k) : kernel(k) {
        ++kernel.live_clones_;
        ++kernel.clones_started_;
    }
    ~CloneGuard() { --kernel.live_clones_; }
    Kernel& kernel;
};

json AgentResponse::to_json() const {
    if (status == "success") {
        json j = {{"agent", agent}, {"status", status}, {"summary", summary}, {"observations", observations}};
        if (!details.is_null()) j["answer"] = details;
        return j;
    }
    if (!guidance.empty()) return {{"status", status}, {"error", error}, {"summary", guidance}};
    return {{"agent", agent}, {"status", status}, {"error", error}, {"error_code", error_code}};
}

json EnsembleResult::to_json() const {
    json members_json = json::array();
    for (const auto& m : members) {
        json r = m.response.to_json();
        r["clone_id"] = m.clone_id;
        r["model"] = m.backend_id;
        members_json.push_back(r);
    }
    return {{"status", "success"}, {"summary", summary}, {"board", board_id}, {"members", members_json}};
}

AgentContext Kernel::open_root(const AgentSpec& spec) {
    if (!is_identifier(spec.agent_name))
        throw Error(ErrorCode::InvalidSpec, "agent_name '" + spec.agent_name + "' is not a valid identifier");
    if (spec.model_name == kInheritModel || !gateway_.has_backend(spec.model_name))
        throw Error(ErrorCode::InvalidModel, "root model '" + spec.model_name + "' is not a registered backend");
    AgentContext ctx;
    ctx.agent_id = next_agent_id(spec.agent_name);
    ctx.spec = spec;
    ctx.scope = resolve_scope(spec.tools_list, nullptr);
    ctx.backend_id = spec.model_name;
    ctx.graph = &stm_;
    ctx.run = stm_.open_agent_run(std::nullopt, spec.to_json());
    return ctx;
}

RunResult Kernel::run_root(const AgentSpec& spec, const std::string& task, RunLimits limits) {
    if (limits.max_steps < 1) throw Error(ErrorCode::InvalidSpec, "max_steps must be at least 1");
    AgentContext ctx = open_root(spec);
    return run_agent(ctx, task, limits.max_steps);
}

ModelRequest Kernel::build_request(const AgentContext& ctx, const std::string& task) const {
    ModelRequest r;
    r.agent_id = ctx.agent_id;
    r.system_instruction = ctx.spec.instruction;
    r.task = task;
    r.history = ctx.graph->assemble_history(ctx.run);
    for (const auto& [name, b] : ctx.scope) {
        ToolSummary s = b.summary;
        s.name = name;
        r.available_tools.push_back(std::move(s));
    }
    return r;
}

std::string Kernel::summarize_events(const std::string& backend, const std::string& agent_id, const json& events) {
    ModelRequest r;
    r.agent_id = agent_id;
    r.system_instruction =
        "Condense the agent events below into a short summary that keeps the findings and the pending work.";
    r.task = "Summarize the history so far.";
    std::uint64_t seq = 0;
    for (const auto& e : events) {
        Turn t;
        t.seq = e.value("index", ++seq);
        t.role = "context";
        t.text = dump_lossy(e);
        r.history.push_back(std::move(t));
    }
    ModelResponse resp = gateway_.complete(backend, r);
    if (resp.kind != ModelResponse::Kind::text || !resp.text)
        throw Error(ErrorCode::InvalidTranscript, "summarization expected a text response");
    return *resp.text;
}

void Kernel::maybe_summarize(AgentContext& ctx) {
    ModelRequest probe;
    probe.history = ctx.graph->assemble_history(ctx.run);
    if (estimate_tokens(dump_lossy(probe.history_json())) <= config_.summarization_threshold_tokens) return;
    try {
        ctx.graph->summarize_history(ctx.run, config_.keep_recent_events, [&](const json& covered) {
            return summarize_events(ctx.backend_id, ctx.agent_id, covered);
        });
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NothingToSummarize) throw;
    }
}

RunResult Kernel::run_agent(AgentContext& ctx, const std::string& task, std::size_t max_steps) {
    for (std::size_t step = 0; step < max_steps; ++step) {
        ModelResponse resp;
        try {
            maybe_summarize(ctx);
            resp = gateway_.complete(ctx.backend_id, build_request(ctx, task));
        } catch (const Error& e) {
            ctx.graph->append_event(ctx.run,
                                    {{"turn", "error"}, {"text", e.what()}, {"error_code", to_string(e.code())}});
            ctx.graph->close_agent_run(ctx.run, "failed");
            throw;
        }
        if (resp.kind == ModelResponse::Kind::text) {
            ctx.graph->append_event(ctx.run, {{"turn", "text"}, {"text", resp.text.value_or("")}});
            ctx.graph->close_agent_run(ctx.run, "completed");
            return RunResult{resp.text.value_or(""), ctx.agent_id, ctx.run, ctx.graph->event_count(ctx.run)};
        }
        const ToolCall& call = *resp.tool_call;
        NodeId ev = ctx.graph->begin_event(
            ctx.run, {{"turn", "tool_call"}, {"tool_name", call.tool_name}, {"args", call.args}});
        ToolOutcome out = dispatch_tool(ctx, ev, call);
        bool ok = out.response.value("status", std::string()) != "failed";
        ctx.graph->complete_event(ev, {{"status", ok ? "ok" : "error"}}, dump_lossy(out.response),
                                  std::move(out.full_output));
    }
    ctx.graph->close_agent_run(ctx.run, "failed");
    throw Error(ErrorCode::StepLimitExceeded,
                "agent '" + ctx.agent_id + "' reached the step limit of " + std::to_string(max_steps));
}

NodeId Kernel::record_api_call(AgentContext& caller, const std::string& tool_name, const json& args) {
    return caller.graph->begin_event(caller.run,
                                     {{"turn", "tool_call"}, {"tool_name", tool_name}, {"args", args}, {"origin", "api"}});
}

void Kernel::finish_api_call(AgentContext& caller, NodeId event, const json& response) {
    bool ok = response.value("status", std::string()) != "failed";
    caller.graph->complete_event(event, {{"status", ok ? "ok" : "error"}}, dump_lossy(response));
}

AgentContext Kernel::make_clone(const PoolEntry& entry, const std::string& backend, const AgentContext& caller) {
    AgentContext c;
    c.agent_id = next_agent_id(entry.spec.agent_name);
    c.spec = entry.spec;
    c.scope = entry.scope;
    c.backend_id = backend;
    c.graph = caller.graph;
    c.depth = caller.depth + 1;
    return c;
}

AgentResponse Kernel::run_clone(AgentContext& clone, const std::string& task, const AgentContext& caller,
                                std::optional<NodeId> parent_event) {
    CloneGuard guard(*this);
    AgentResponse r;
    r.agent = clone.spec.agent_name;
    try {
        if (clone.depth > config_.max_agent_depth)
            throw Error(ErrorCode::SubAgentError, "agent nesting limit of " + std::to_string(config_.max_agent_depth) +
                                                      " reached");
        if (clone.spec.agent_name == kMemoryAgentName) {
            MemoryAnswer a = memory_->handle_query(MemoryQuery{caller.agent_id, task}, clone.backend_id);
            r.summary = text_lines(a.summary);
            if (r.summary.empty()) r.summary.push_back(a.summary);
            r.observations = {"tier: " + a.tier, "action: " + a.action, "total_found: " + std::to_string(a.total_found)};
            r.final_text = a.summary;
            r.details = a.to_json();
        } else {
            clone.run = clone.graph->open_agent_run(parent_event, clone.spec.to_json());
            r.run = clone.run;
            if (clone.spec.initial_memory == InitialMemory::parent_summary) {
                json events = json::array();
                for (auto& e : caller.graph->inspect_events(caller.run)) events.push_back(std::move(e));
                if (!events.empty()) {
                    std::string text = summarize_events(caller.backend_id, caller.agent_id, events);
                    clone.graph->append_event(clone.run,
                                              {{"turn", "context"}, {"source", "parent_summary"}, {"text", text}});
                }
            }
            RunResult rr = run_agent(clone, task, config_.max_steps);
            fill_response(r, rr.final_text, clone.trace);
        }
    } catch (const std::exception& e) {
        if (clone.run != 0 && clone.graph->run_summary(clone.run).status == "running")
            clone.graph->close_agent_run(clone.run, "failed");
        r.status = "failed";
        r.error = "Sub-agent '" + clone.spec.agent_name + "' failed: " + e.what();
        r.error_code = std::string(to_string(ErrorCode::SubAgentError));
    }
    pool_.record_invocation(clone.spec.agent_name);
    return r;
}

AgentResponse Kernel::call_agent(AgentContext& caller, const std::string& agent_name, const std::string& task,
                                 std::optional<NodeId> call_event) {
    const bool api = !call_event;
    if (api) call_event = record_api_call(caller, "call_agent", {{"agent_name", agent_name}, {"task_message", task}});
    AgentResponse r;
    auto entry = pool_.find(agent_name);
    if (!entry) {
        r.agent = agent_name;
        r.status = "failed";
        r.error = "Agent '" + agent_name + "' not found.";
        r.error_code = std::string(to_string(ErrorCode::AgentNotFound));
        r.guidance = "No suitable agents available. Create a dynamic sub-agent and invoke it via the agent ensemble.";
    } else {
        try {
            std::string backend = gateway_.resolve(entry->spec.model_name, caller.backend_id);
            AgentContext clone = make_clone(*entry, backend, caller);
            r = run_clone(clone, task, caller, call_event);
        } catch (const Error& e) {
            r.agent = agent_name;
            r.status = "failed";
            r.error = "Sub-agent '" + agent_name + "' failed: " + e.what();
            r.error_code = std::string(to_string(ErrorCode::SubAgentError));
        }
    }
    if (api) finish_api_call(caller, *call_event, r.to_json());
    return r;
}

EnsembleResult Kernel::run_ensemble(AgentContext& caller, const EnsembleRequest& request,
                                    std::optional<NodeId> call_event) {
    if (request.members.empty()) throw Error(ErrorCode::InvalidSpec, "an ensemble needs at least one member");

    struct Plan {
        PoolEntry entry;
        std::string backend;
    };
    std::vector<Plan> plans;
    for (const auto& m : request.members) {
        auto entry = pool_.find(m.agent_name);
        if (!entry) throw Error(ErrorCode::AgentNotFound, "Agent '" + m.agent_name + "' not found.");
        const std::string& model = m.model_name == kInheritModel ? entry->spec.model_name : m.model_name;
        plans.push_back(Plan{*entry, gateway_.resolve(model, caller.backend_id)});
    }

    const bool api = !call_event;
    if (api) {
        json members = json::array();
        for (const auto& m : request.members) members.push_back({{"agent_name", m.agent_name}, {"model_name", m.model_name}});
        call_event = record_api_call(caller, "run_ensemble", {{"task", request.task}, {"members", members}});
    }

    std::vector<AgentContext> clones;
    std::set<std::string> ids;
    for (const auto& p : plans) {
        clones.push_back(make_clone(p.entry, p.backend, caller));
        clones.back().spec.model_name = p.backend;
        ids.insert(clones.back().agent_id);
    }
    auto board = boards_->open(ids);
    for (std::size_t i = 0; i < clones.size(); ++i) {
        std::string peers;
        for (std::size_t j = 0; j < clones.size(); ++j) {
            if (j == i) continue;
            peers += "\n- " + clones[j].agent_id + ": " + clones[j].spec.description;
        }
        clones[i].spec.instruction += "\n\nYou are one of " + std::to_string(clones.size()) +
                                      " sub-agents working on this task in parallel." +
                                      (peers.empty() ? std::string() : " Your peers:" + peers) +
                                      "\nShare useful findings with post_message; messages from peers arrive "
                                      "with your tool responses.";
        ToolBinding post;
        post.summary = builtins_.at("post_message").summary;
        clones[i].scope.emplace("post_message", std::move(post));
        clones[i].board_id = board->id();
    }

    EnsembleResult result;
    result.board_id = board->id();
    result.members.resize(clones.size());
    {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < clones.size(); ++i) {
            threads.emplace_back([&, i] {
                MemberResponse& slot = result.members[i];
                slot.agent_name = plans[i].entry.spec.agent_name;
                slot.clone_id = clones[i].agent_id;
                slot.backend_id = plans[i].backend;
                slot.response = run_clone(clones[i], request.task, caller, call_event);
                if (!slot.response.ok()) slot.response.error_code = std::string(to_string(ErrorCode::MemberFailed));
            });
        }
        for (auto& t : threads) t.join();
    }
    board->close();

    ModelRequest r;
    r.agent_id = caller.agent_id;
    r.system_instruction =
        "Combine the responses of sub-agents that worked on the same task in parallel into one concise answer.";
    r.task = request.task;
    std::uint64_t seq = 0;
    for (const auto& m : result.members) {
        Turn t;
        t.seq = ++seq;
        t.role = "context";
        std::string body = m.response.ok() ? m.response.final_text : m.response.error;
        t.text = m.clone_id + " (" + m.response.status + "): " + body;
        r.history.push_back(std::move(t));
    }
    ModelResponse resp = gateway_.complete(caller.backend_id, r);
    if (resp.kind != ModelResponse::Kind::text || !resp.text)
        throw Error(ErrorCode::InvalidTranscript, "ensemble summarization expected a text response");
    result.summary = *resp.text;
    if (api) finish_api_call(caller, *call_event, result.to_json());
    return result;
}

}  // namespace forge
