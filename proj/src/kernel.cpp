#include "forge/kernel.hpp"

#include "forge/error.hpp"
#include "forge/memory_agent.hpp"

#include <algorithm>
#include <initializer_list>
#include <set>
#include <system_error>

namespace forge {

namespace {

struct Param {
    const char* name;
    const char* type;
    bool required;
    const char* description;
};

json params(std::initializer_list<Param> ps) {
    json props = json::object();
    json required = json::array();
    for (const auto& p : ps) {
        props[p.name] = {{"type", p.type}, {"description", p.description}};
        if (p.required) required.push_back(p.name);
    }
    return {{"type", "object"}, {"properties", props}, {"required", required}};
}

std::string req_str(const json& args, const char* key) {
    if (!args.is_object() || !args.contains(key) || !args[key].is_string())
        throw Error(ErrorCode::ArgValidation, std::string(key) + ": required string argument missing");
    return args[key].get<std::string>();
}

std::optional<std::string> opt_str(const json& args, const char* key) {
    if (!args.is_object() || !args.contains(key) || args[key].is_null()) return std::nullopt;
    if (!args[key].is_string()) throw Error(ErrorCode::ArgValidation, std::string(key) + ": expected string");
    return args[key].get<std::string>();
}

std::uint64_t to_id(const json& v, const char* key) {
    if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)) return v.get<std::uint64_t>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
            return std::stoull(s);
    }
    throw Error(ErrorCode::ArgValidation, std::string(key) + ": expected a non-negative integer id");
}

std::uint64_t req_id(const json& args, const char* key) {
    if (!args.is_object() || !args.contains(key))
        throw Error(ErrorCode::ArgValidation, std::string(key) + ": required id argument missing");
    return to_id(args[key], key);
}

std::optional<std::uint64_t> opt_id(const json& args, const char* key) {
    if (!args.is_object() || !args.contains(key) || args[key].is_null()) return std::nullopt;
    return to_id(args[key], key);
}

json failed(const Error& e) {
    return {{"status", "failed"}, {"error", e.what()}, {"error_code", to_string(e.code())}};
}

ToolOutcome tool_outcome(const ToolResult& r) {
    ToolOutcome out{r.to_json(), std::nullopt};
    if (r.truncated) out.full_output = r.full_output;
    return out;
}

fs::path resolve_against(const fs::path& base, const fs::path& p) {
    if (base.empty() || p.empty() || p.is_absolute()) return p;
    return (base / p).lexically_normal();
}

std::size_t count_field(const json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j[key];
    if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
        throw Error(ErrorCode::InvalidConfig, std::string(key) + ": must be a positive integer");
    return v.get<std::size_t>();
}

double real_field(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) throw Error(ErrorCode::InvalidConfig, std::string(key) + ": must be a number");
    return j[key].get<double>();
}

std::optional<fs::path> path_field(const json& j, const char* key, const fs::path& base) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string() || j[key].get<std::string>().empty())
        throw Error(ErrorCode::InvalidConfig, std::string(key) + ": must be a non-empty path string");
    return resolve_against(base, j[key].get<std::string>());
}

}  // namespace

json KernelConfig::to_json() const {
    json backends_json = json::array();
    for (const auto& b : backends)
        backends_json.push_back({{"id", b.id}, {"type", b.type}, {"transcript", b.transcript.string()}});
    return {{"registry_root", registry_root.string()},
            {"workspace", workspace.string()},
            {"ltm_path", ltm_path ? json(ltm_path->string()) : json(nullptr)},
            {"sandbox_root", sandbox_root ? json(sandbox_root->string()) : json(nullptr)},
            {"summarization_threshold_tokens", summarization_threshold_tokens},
            {"keep_recent_events", keep_recent_events},
            {"truncation_limit_bytes", truncation_limit_bytes},
            {"dedup_threshold", dedup_threshold},
            {"max_steps", max_steps},
            {"max_agent_depth", max_agent_depth},
            {"command_timeout_seconds", command_timeout_seconds},
            {"memory_agent_model", memory_agent_model},
            {"install_memory_agent", install_memory_agent},
            {"backends", backends_json}};
}

KernelConfig KernelConfig::from_json(const json& j, const fs::path& base) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON document");
    static const std::set<std::string> known = {
        "registry_root",     "workspace",          "ltm_path",        "sandbox_root",
        "summarization_threshold_tokens",          "keep_recent_events", "truncation_limit_bytes",
        "dedup_threshold",   "max_steps",          "max_agent_depth", "command_timeout_seconds",
        "memory_agent_model", "install_memory_agent", "backends"};
    for (const auto& [k, _] : j.items())
        if (!known.contains(k)) throw Error(ErrorCode::InvalidConfig, k + ": unknown config field");

    KernelConfig c;
    auto registry = path_field(j, "registry_root", base);
    auto workspace = path_field(j, "workspace", base);
    if (!registry) throw Error(ErrorCode::InvalidConfig, "registry_root: required");
    if (!workspace) throw Error(ErrorCode::InvalidConfig, "workspace: required");
    c.registry_root = *registry;
    c.workspace = *workspace;
    c.ltm_path = path_field(j, "ltm_path", base);
    c.sandbox_root = path_field(j, "sandbox_root", base);
    c.summarization_threshold_tokens = count_field(j, "summarization_threshold_tokens", c.summarization_threshold_tokens);
    c.keep_recent_events = count_field(j, "keep_recent_events", c.keep_recent_events);
    c.truncation_limit_bytes = count_field(j, "truncation_limit_bytes", c.truncation_limit_bytes);
    c.max_steps = count_field(j, "max_steps", c.max_steps);
    c.max_agent_depth = count_field(j, "max_agent_depth", c.max_agent_depth);
    c.dedup_threshold = real_field(j, "dedup_threshold", c.dedup_threshold);
    c.command_timeout_seconds = real_field(j, "command_timeout_seconds", c.command_timeout_seconds);
    if (j.contains("memory_agent_model")) {
        if (!j["memory_agent_model"].is_string())
            throw Error(ErrorCode::InvalidConfig, "memory_agent_model: must be a string");
        c.memory_agent_model = j["memory_agent_model"].get<std::string>();
    }
    if (j.contains("install_memory_agent")) {
        if (!j["install_memory_agent"].is_boolean())
            throw Error(ErrorCode::InvalidConfig, "install_memory_agent: must be a boolean");
        c.install_memory_agent = j["install_memory_agent"].get<bool>();
    }
    if (j.contains("backends")) {
        if (!j["backends"].is_array()) throw Error(ErrorCode::InvalidConfig, "backends: must be a list");
        for (const auto& b : j["backends"]) {
            if (!b.is_object() || !b.contains("id") || !b["id"].is_string())
                throw Error(ErrorCode::InvalidConfig, "backends: each entry needs a string id");
            BackendDecl d;
            d.id = b["id"].get<std::string>();
            d.type = b.value("type", std::string("scripted"));
            if (auto t = path_field(b, "transcript", base)) d.transcript = *t;
            c.backends.push_back(std::move(d));
        }
    }
    c.validate(false);
    return c;
}

void KernelConfig::validate(bool check_paths) const {
    if (summarization_threshold_tokens == 0 || keep_recent_events == 0 || truncation_limit_bytes == 0 ||
        max_steps == 0 || max_agent_depth == 0)
        throw Error(ErrorCode::InvalidConfig, "counts: must be positive");
    if (!(dedup_threshold > 0.0 && dedup_threshold <= 1.0))
        throw Error(ErrorCode::InvalidConfig, "dedup_threshold: must be in (0, 1]");
    if (!(command_timeout_seconds > 0.0))
        throw Error(ErrorCode::InvalidConfig, "command_timeout_seconds: must be positive");
    std::set<std::string> ids;
    for (const auto& b : backends) {
        if (b.type != "scripted")
            throw Error(ErrorCode::InvalidConfig, "backends." + b.id + ": unsupported type '" + b.type + "'");
        if (b.transcript.empty())
            throw Error(ErrorCode::InvalidConfig, "backends." + b.id + ": scripted backends need a transcript");
        if (!ids.insert(b.id).second) throw Error(ErrorCode::InvalidConfig, "backends." + b.id + ": duplicate id");
    }
    if (!check_paths) return;
    if (!fs::is_directory(registry_root))
        throw Error(ErrorCode::InvalidConfig, "registry_root: '" + registry_root.string() + "' is not a directory");
    if (fs::exists(workspace) && !fs::is_directory(workspace))
        throw Error(ErrorCode::InvalidConfig, "workspace: '" + workspace.string() + "' is not a directory");
    for (const auto& b : backends)
        if (!fs::is_regular_file(b.transcript))
            throw Error(ErrorCode::InvalidConfig, "backends." + b.id + ": transcript '" + b.transcript.string() + "' not found");
}

KernelConfig load_config(const fs::path& file) {
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, file.string() + ": " + e.what());
    }
    fs::path base = fs::absolute(file).parent_path();
    KernelConfig c = KernelConfig::from_json(j, base);
    c.validate(true);
    return c;
}

std::string dump_config(const KernelConfig& config) {
    return config.to_json().dump(2) + "\n";
}

Kernel::Kernel(KernelConfig config, std::shared_ptr<SandboxDriver> driver,
               std::shared_ptr<const EmbeddingProvider> embedder)
    : config_(std::move(config)), stm_(config_.truncation_limit_bytes) {
    config_.validate(false);
    fs::create_directories(config_.workspace);
    if (config_.sandbox_root) {
        sandbox_root_ = *config_.sandbox_root;
    } else {
        sandbox_root_ = fs::temp_directory_path() / ("forge-sandboxes-" + random_token().substr(0, 12));
        own_sandbox_root_ = true;
    }
    fs::create_directories(sandbox_root_);
    registry_ = std::make_unique<ToolRegistry>(config_.registry_root);
    driver_ = driver ? std::move(driver) : std::make_shared<LocalDirectoryDriver>(sandbox_root_);
    sandboxes_ = std::make_unique<SandboxRuntime>(driver_, config_.workspace);
    invoker_ = std::make_unique<ToolInvoker>(*registry_, *sandboxes_, config_.truncation_limit_bytes);
    ltm_ = std::make_unique<LtmStore>(embedder ? std::move(embedder) : std::make_shared<HashingEmbedder>());
    if (config_.ltm_path && fs::exists(*config_.ltm_path)) ltm_->load(*config_.ltm_path);
    boards_ = std::make_unique<BoardHub>(config_.workspace / "boards");
    for (const auto& b : config_.backends)
        gateway_.register_backend(b.id, std::make_shared<ScriptedBackend>(ScriptedTranscript::load(b.transcript)));
    memory_ = std::make_unique<MemoryAgent>(*this);
    install_builtins();
    if (config_.install_memory_agent) install_memory_agent();
}

Kernel::~Kernel() {
    sandboxes_.reset();
    if (own_sandbox_root_) {
        std::error_code ec;
        fs::remove_all(sandbox_root_, ec);
    }
}

void Kernel::install_memory_agent() {
    AgentSpec spec = MemoryAgent::default_spec(config_.memory_agent_model);
    if (spec.model_name != kInheritModel && !gateway_.has_backend(spec.model_name))
        throw Error(ErrorCode::InvalidModel, "memory_agent_model '" + spec.model_name + "' is not a registered backend");
    pool_.insert(PoolEntry{spec, resolve_scope(spec.tools_list, nullptr), "kernel", monotonic_ms(), 0});
}

std::string Kernel::next_agent_id(const std::string& name) {
    std::lock_guard lock(ids_mu_);
    return name + "#" + std::to_string(++id_counters_[name]);
}

void Kernel::persist_ltm() {
    if (!config_.ltm_path) return;
    std::lock_guard lock(ltm_save_mu_);
    if (config_.ltm_path->has_parent_path()) fs::create_directories(config_.ltm_path->parent_path());
    ltm_->save(*config_.ltm_path);
}

ToolScope Kernel::resolve_scope(const std::vector<std::string>& tools_list, const ToolScope* parent) const {
    ToolScope scope;
    auto add_registry_tool = [&](const ToolId& id) {
        ToolManifest m = registry_->describe_tool(id);
        if (scope.contains(m.name)) return;
        ToolBinding b;
        b.kind = ToolBinding::Kind::registry;
        b.registry_path = id.path;
        b.summary = ToolSummary{m.name, m.description, m.parameter_schema()};
        scope.emplace(m.name, std::move(b));
    };
    for (const auto& entry : tools_list) {
        if (auto it = builtins_.find(entry); it != builtins_.end()) {
            ToolBinding b;
            b.summary = it->second.summary;
            scope.emplace(entry, std::move(b));
        } else if (parent && parent->contains(entry)) {
            scope.emplace(entry, parent->at(entry));
        } else if (!entry.empty() && registry_->is_tool(entry)) {
            add_registry_tool(ToolId{entry});
        } else if (!entry.empty() && registry_->is_category(entry)) {
            for (const auto& id : registry_->tools_under(entry)) add_registry_tool(id);
        } else {
            throw Error(ErrorCode::UnresolvableTool,
                        "tool '" + entry + "' is neither in the parent's scope nor a registry path");
        }
    }
    return scope;
}

std::string Kernel::create_agent(const AgentContext& parent, const AgentSpec& spec) {
    if (!is_identifier(spec.agent_name))
        throw Error(ErrorCode::InvalidSpec, "agent_name '" + spec.agent_name + "' is not a valid identifier");
    if (pool_.contains(spec.agent_name))
        throw Error(ErrorCode::DuplicateAgentName, "agent '" + spec.agent_name + "' already exists in the pool");
    if (spec.model_name != kInheritModel && !gateway_.has_backend(spec.model_name))
        throw Error(ErrorCode::InvalidModel, "model '" + spec.model_name + "' is not a registered backend");
    ToolScope scope = resolve_scope(spec.tools_list, &parent.scope);
    pool_.insert(PoolEntry{spec, std::move(scope), parent.agent_id, monotonic_ms(), 0});
    return spec.agent_name;
}

json Kernel::list_agents(const std::string& filter) const {
    return AgentPool::listing(pool_.list(filter));
}

std::uint64_t Kernel::post_message(const std::string& board_id, const std::string& writer, const std::string& text) {
    return boards_->post_message(board_id, writer, text);
}

std::vector<BoardMessage> Kernel::drain_messages(const std::string& board_id, const std::string& reader) {
    return boards_->drain_messages(board_id, reader);
}

ToolOutcome Kernel::dispatch_tool(AgentContext& ctx, NodeId event, const ToolCall& call) {
    ToolOutcome out;
    auto it = ctx.scope.find(call.tool_name);
    if (it == ctx.scope.end()) {
        json names = json::array();
        for (const auto& [name, _] : ctx.scope) names.push_back(name);
        out.response = {{"status", "failed"},
                        {"error", "Tool '" + call.tool_name + "' not found. It is not available to this agent."},
                        {"error_code", "UnknownTool"},
                        {"available_tools", names}};
    } else {
        try {
            if (it->second.kind == ToolBinding::Kind::builtin) {
                out = builtins_.at(call.tool_name).run(ctx, event, call.args);
            } else {
                std::set<std::string> paths;
                for (const auto& [_, b] : ctx.scope)
                    if (b.kind == ToolBinding::Kind::registry) paths.insert(b.registry_path);
                InvokeOutcome r = invoker_->invoke_tool(paths, ToolId{it->second.registry_path}, call.args, ExecMode::sync);
                if (auto* h = std::get_if<InvocationHandle>(&r))
                    out.response = {{"status", "running"}, {"handle_id", h->handle_id}};
                else
                    out = tool_outcome(std::get<ToolResult>(r));
            }
        } catch (const Error& e) {
            out = ToolOutcome{failed(e), std::nullopt};
        } catch (const std::exception& e) {
            out = ToolOutcome{{{"status", "failed"}, {"error", e.what()}, {"error_code", "ArgValidation"}}, std::nullopt};
        }
    }
    if (!out.response.is_object()) out.response = json{{"result", out.response}};
    if (ctx.board_id) {
        try {
            auto diff = boards_->drain_messages(*ctx.board_id, ctx.agent_id);
            if (!diff.empty()) {
                json updates = json::array();
                for (const auto& m : diff) updates.push_back(m.to_json());
                out.response["board_updates"] = updates;
            }
        } catch (const Error&) {
        }
    }
    bool ok = out.response.value("status", std::string()) != "failed";
    ctx.trace.push_back(ToolTraceEntry{call.tool_name, call.args, out.response, ok});
    return out;
}

void Kernel::install_builtins() {
    auto add = [this](const std::string& name, const std::string& description, json schema, BuiltinHandler run) {
        builtins_[name] = BuiltinTool{ToolSummary{name, description, std::move(schema)}, std::move(run)};
    };

    // Agent topology.
    add("create_agent", "Create a sub-agent and store it in the agent pool.",
        params({{"agent_name", "string", true, "unique identifier"},
                {"instruction", "string", true, "system instruction for the sub-agent"},
                {"description", "string", false, "what the agent is for"},
                {"model_name", "string", false, "backend id or \"inherit\""},
                {"tools_list", "list", false, "tool names or registry paths"},
                {"initial_memory", "string", false, "\"empty\" or \"parent_summary\""}}),
        [this](AgentContext& ctx, NodeId, const json& args) {
            AgentSpec spec = AgentSpec::from_json(args);
            create_agent(ctx, spec);
            json tools = json::array();
            auto entry = pool_.find(spec.agent_name);
            for (const auto& [name, _] : entry->scope) tools.push_back(name);
            return ToolOutcome{{{"status", "success"},
                                {"agent_name", spec.agent_name},
                                {"tools", tools},
                                {"message", "Agent '" + spec.agent_name + "' created. Invoke it with call_agent."}},
                               std::nullopt};
        });
    BuiltinHandler list = [this](AgentContext&, NodeId, const json& args) {
        return ToolOutcome{list_agents(opt_str(args, "filter").value_or("")), std::nullopt};
    };
    json list_params = params({{"filter", "string", false, "substring of name or description"}});
    add("list_active_agents", "List sub-agents in the pool, optionally filtered by name or description.", list_params,
        list);
    add("list_agents", "List sub-agents in the pool, optionally filtered by name or description.", list_params, list);
    add("call_agent", "Run a pooled sub-agent on a task and return its response.",
        params({{"agent_name", "string", true, "pooled agent to invoke"},
                {"task_message", "string", true, "task for the sub-agent"}}),
        [this](AgentContext& ctx, NodeId event, const json& args) {
            std::string name = req_str(args, "agent_name");
            std::string task;
            if (auto t = opt_str(args, "task_message")) {
                task = *t;
            } else if (args.contains("instructions") && args["instructions"].is_array()) {
                for (const auto& line : args["instructions"])
                    if (line.is_string()) task += (task.empty() ? "" : "\n") + line.get<std::string>();
            } else if (auto i = opt_str(args, "instructions")) {
                task = *i;
            } else {
                throw Error(ErrorCode::ArgValidation, "task_message: required string argument missing");
            }
            return ToolOutcome{call_agent(ctx, name, task, event).to_json(), std::nullopt};
        });
    BuiltinHandler ensemble = [this](AgentContext& ctx, NodeId event, const json& args) {
        EnsembleRequest req;
        req.task = opt_str(args, "task").value_or(opt_str(args, "task_message").value_or(""));
        if (req.task.empty()) throw Error(ErrorCode::ArgValidation, "task: required string argument missing");
        const json* members = nullptr;
        for (const char* key : {"members", "agents", "agent_names"})
            if (args.contains(key)) members = &args[key];
        if (!members || !members->is_array()) throw Error(ErrorCode::ArgValidation, "members: required list argument missing");
        for (const auto& m : *members) {
            if (m.is_string()) {
                req.members.push_back(EnsembleMember{m.get<std::string>()});
            } else if (m.is_object()) {
                req.members.push_back(EnsembleMember{req_str(m, "agent_name"),
                                                     opt_str(m, "model_name").value_or(std::string(kInheritModel))});
            } else {
                throw Error(ErrorCode::ArgValidation, "members: entries must be names or {agent_name, model_name}");
            }
        }
        return ToolOutcome{run_ensemble(ctx, req, event).to_json(), std::nullopt};
    };
    json ensemble_params = params({{"task", "string", true, "shared task for every member"},
                                   {"members", "list", true, "agent names or {agent_name, model_name}"}});
    add("run_ensemble", "Run several pooled sub-agents in parallel on one task and summarize their responses.",
        ensemble_params, ensemble);
    add("agent_ensemble", "Run several pooled sub-agents in parallel on one task and summarize their responses.",
        ensemble_params, ensemble);
    add("post_message", "Post a message to the ensemble's shared message board.",
        params({{"text", "string", true, "message for the other members"}}),
        [this](AgentContext& ctx, NodeId, const json& args) {
            if (!ctx.board_id) throw Error(ErrorCode::NotBoardMember, "'" + ctx.agent_id + "' is not running in an ensemble");
            std::string text = opt_str(args, "text").value_or(opt_str(args, "message").value_or(""));
            std::uint64_t seq = post_message(*ctx.board_id, ctx.agent_id, text);
            return ToolOutcome{{{"status", "success"}, {"seq", seq}}, std::nullopt};
        });

    // Tool registry.
    add("list_tool_categories", "Show the top-level tool categories and their summaries.", params({}),
        [this](AgentContext&, NodeId, const json&) {
            json cats = json::array();
            for (const auto& c : registry_->load_root_index()) cats.push_back({{"path", c.path}, {"summary", c.summary}});
            return ToolOutcome{{{"categories", cats}}, std::nullopt};
        });
    add("expand_category", "List the sub-categories and tools of a category.",
        params({{"path", "string", true, "category path"}}),
        [this](AgentContext&, NodeId, const json& args) {
            return ToolOutcome{registry_->expand_category(req_str(args, "path")).to_json(), std::nullopt};
        });
    add("search_tools", "Find tools whose name, description or category mentions a keyword.",
        params({{"keyword", "string", true, "case-insensitive keyword"}}),
        [this](AgentContext&, NodeId, const json& args) {
            json tools = json::array();
            for (const auto& t : registry_->search_tools(req_str(args, "keyword"))) tools.push_back(t.to_json());
            return ToolOutcome{{{"tools", tools}}, std::nullopt};
        });
    add("describe_tool", "Show the full manifest of a tool.", params({{"path", "string", true, "tool path"}}),
        [this](AgentContext&, NodeId, const json& args) {
            std::string path = req_str(args, "path");
            json m = registry_->describe_tool(ToolId{path}).to_json();
            m["path"] = path;
            return ToolOutcome{m, std::nullopt};
        });
    add("create_tool", "Add a new tool to the registry under a category.",
        params({{"category", "string", true, "target category path"},
                {"manifest", "document", true, "tool manifest"},
                {"implementation", "string", true, "entrypoint source"}}),
        [this](AgentContext& ctx, NodeId, const json& args) {
            if (!args.contains("manifest")) throw Error(ErrorCode::ArgValidation, "manifest: required document missing");
            ToolManifest m = ToolManifest::from_json(args["manifest"]);
            ToolId id = registry_->create_tool(ctx.agent_id, req_str(args, "category"), m, req_str(args, "implementation"));
            ToolBinding b;
            b.kind = ToolBinding::Kind::registry;
            b.registry_path = id.path;
            b.summary = ToolSummary{m.name, m.description, m.parameter_schema()};
            ctx.scope.emplace(m.name, std::move(b));
            return ToolOutcome{{{"status", "success"}, {"path", id.path}, {"name", m.name}}, std::nullopt};
        });
    add("modify_tool", "Replace a tool's manifest or implementation, keeping numbered backups.",
        params({{"path", "string", true, "tool path"},
                {"manifest", "document", false, "new manifest"},
                {"implementation", "string", false, "new entrypoint source"}}),
        [this](AgentContext& ctx, NodeId, const json& args) {
            std::optional<ToolManifest> m;
            if (args.contains("manifest") && !args["manifest"].is_null()) m = ToolManifest::from_json(args["manifest"]);
            std::string path = req_str(args, "path");
            registry_->modify_tool(ctx.agent_id, ToolId{path}, m, opt_str(args, "implementation"));
            return ToolOutcome{{{"status", "success"}, {"path", path}}, std::nullopt};
        });
    add("invoke_tool", "Run a registry tool in its sandbox, in the foreground or as a background job.",
        params({{"tool", "string", true, "tool name or path"},
                {"args", "document", false, "tool arguments"},
                {"background", "boolean", false, "return a handle instead of waiting"}}),
        [this](AgentContext& ctx, NodeId, const json& args) {
            std::string tool = req_str(args, "tool");
            std::string path = tool;
            if (auto it = ctx.scope.find(tool); it != ctx.scope.end() && it->second.kind == ToolBinding::Kind::registry)
                path = it->second.registry_path;
            std::set<std::string> paths;
            for (const auto& [_, b] : ctx.scope)
                if (b.kind == ToolBinding::Kind::registry) paths.insert(b.registry_path);
            ExecMode mode = args.value("background", false) ? ExecMode::background : ExecMode::sync;
            InvokeOutcome r = invoker_->invoke_tool(paths, ToolId{path}, args.value("args", json::object()), mode);
            if (auto* h = std::get_if<InvocationHandle>(&r))
                return ToolOutcome{{{"status", "running"}, {"handle_id", h->handle_id}}, std::nullopt};
            return tool_outcome(std::get<ToolResult>(r));
        });
    add("run_terminal_command", "Run a shell command in the agent's default sandbox.",
        params({{"command", "string", true, "shell command"},
                {"background", "boolean", false, "return a handle instead of waiting"}}),
        [this](AgentContext&, NodeId, const json& args) {
            SandboxId sb = invoker_->sandbox_for(ToolManifest{});
            ExecMode mode = args.value("background", false) ? ExecMode::background : ExecMode::sync;
            ExecOutcome r = sandboxes_->exec(sb, req_str(args, "command"), ExecLimits{config_.command_timeout_seconds}, mode);
            if (auto* h = std::get_if<InvocationHandle>(&r))
                return ToolOutcome{{{"status", "running"},
                                    {"handle_id", h->handle_id},
                                    {"message", "Command is still running. Check it with poll_invocation."}},
                                   std::nullopt};
            return tool_outcome(ToolInvoker::to_tool_result(std::get<ExecResult>(r), config_.truncation_limit_bytes));
        });
    add("poll_invocation", "Report the state of a background invocation.",
        params({{"handle_id", "string", true, "invocation handle"}}),
        [this](AgentContext&, NodeId, const json& args) {
            InvocationHandle h{req_str(args, "handle_id")};
            return ToolOutcome{{{"handle_id", h.handle_id}, {"state", to_string(sandboxes_->poll(h))}}, std::nullopt};
        });
    add("fetch_invocation_result", "Fetch the output of a finished background invocation.",
        params({{"handle_id", "string", true, "invocation handle"}}),
        [this](AgentContext&, NodeId, const json& args) {
            ExecResult r = sandboxes_->fetch_result(InvocationHandle{req_str(args, "handle_id")});
            return tool_outcome(ToolInvoker::to_tool_result(r, config_.truncation_limit_bytes));
        });
    add("terminate_invocation", "Kill a background invocation.",
        params({{"handle_id", "string", true, "invocation handle"}}),
        [this](AgentContext&, NodeId, const json& args) {
            InvocationHandle h{req_str(args, "handle_id")};
            sandboxes_->terminate(h);
            return ToolOutcome{{{"handle_id", h.handle_id}, {"state", to_string(sandboxes_->poll(h))}}, std::nullopt};
        });

    // Memory front end.
    add("search_memory", "Ask the memory agent a natural-language question about past work.",
        params({{"query", "string", true, "natural-language query"}}),
        [this](AgentContext& ctx, NodeId, const json& args) {
            MemoryAnswer a = memory_->handle_query(MemoryQuery{ctx.agent_id, req_str(args, "query")}, ctx.backend_id);
            return ToolOutcome{a.to_json(), std::nullopt};
        });
    add("save_memory", "Store a knowledge item in long-term memory, merging near-duplicates.",
        params({{"node_type", "string", true, "catalog node type"},
                {"label", "string", true, "short label"},
                {"content", "string", true, "knowledge text"}}),
        [this](AgentContext& ctx, NodeId, const json& args) {
            StoreDecision d = memory_->dedup_store(req_str(args, "node_type"), req_str(args, "label"),
                                                   req_str(args, "content"), ctx.backend_id);
            json r = d.to_json();
            r["status"] = "success";
            return ToolOutcome{r, std::nullopt};
        });

    // Short-term memory, read only.
    add("list_agent_runs", "List recorded agent runs, optionally filtered by agent name or status.",
        params({{"name", "string", false, "agent name substring"}, {"status", "string", false, "run status"}}),
        [this](AgentContext&, NodeId, const json& args) {
            RunFilter f{opt_str(args, "name"), opt_str(args, "status")};
            json runs = json::array();
            for (const auto& r : stm_.list_agent_runs(f)) runs.push_back(r.to_json());
            return ToolOutcome{{{"runs", runs}, {"total", runs.size()}}, std::nullopt};
        });
    add("inspect_events", "Show the events of a run, optionally a 1-based inclusive range.",
        params({{"run_id", "integer", true, "AgentRun node id"},
                {"from", "integer", false, "first event index"},
                {"to", "integer", false, "last event index"}}),
        [this](AgentContext&, NodeId, const json& args) {
            NodeId run = req_id(args, "run_id");
            auto events = stm_.inspect_events(run, opt_id(args, "from").value_or(1),
                                              opt_id(args, "to").value_or(static_cast<std::uint64_t>(-1)));
            return ToolOutcome{{{"run_id", run}, {"events", events}}, std::nullopt};
        });
    add("recover_raw", "Return the full raw output behind a truncated event.",
        params({{"event_id", "integer", true, "Event node id"}}),
        [this](AgentContext&, NodeId, const json& args) {
            NodeId ev = req_id(args, "event_id");
            std::string raw = stm_.recover_raw(ev);
            return ToolOutcome{{{"event_id", ev}, {"bytes", raw.size()}, {"content", raw}}, std::nullopt};
        });
    add("graph_query", "Match a structured path pattern against the execution graph.",
        params({{"pattern", "document", true, "{match, steps}"}}),
        [this](AgentContext&, NodeId, const json& args) {
            if (!args.contains("pattern")) throw Error(ErrorCode::MalformedPattern, "pattern: required document missing");
            return ToolOutcome{{{"bindings", stm_.graph_query(args["pattern"])}}, std::nullopt};
        });

    // Long-term memory.
    add("create_node", "Create a typed knowledge node.",
        params({{"node_type", "string", true, "catalog node type"},
                {"label", "string", true, "short label"},
                {"content", "string", true, "knowledge text"}}),
        [this](AgentContext&, NodeId, const json& args) {
            LtmNodeId id = ltm_->create_node(req_str(args, "node_type"), req_str(args, "label"),
                                             opt_str(args, "content").value_or(""));
            persist_ltm();
            return ToolOutcome{{{"status", "success"}, {"node_id", id}}, std::nullopt};
        });
    add("create_edge", "Connect two knowledge nodes with a typed edge.",
        params({{"src", "integer", true, "source node id"},
                {"dst", "integer", true, "destination node id"},
                {"edge_type", "string", true, "catalog edge type"}}),
        [this](AgentContext&, NodeId, const json& args) {
            LtmEdgeId id = ltm_->create_edge(req_id(args, "src"), req_id(args, "dst"), req_str(args, "edge_type"));
            persist_ltm();
            return ToolOutcome{{{"status", "success"}, {"edge_id", id}}, std::nullopt};
        });
    add("list_schema", "Show the node and edge types of the knowledge graph.", params({}),
        [this](AgentContext&, NodeId, const json&) { return ToolOutcome{ltm_->list_schema().to_json(), std::nullopt}; });
    add("search_nodes", "Find the nodes of a type whose labels are most similar to a query.",
        params({{"node_type", "string", true, "catalog node type"},
                {"query", "string", true, "query text"},
                {"top_n", "integer", false, "result count"}}),
        [this](AgentContext&, NodeId, const json& args) {
            RetrievalQuery q;
            q.node_type = req_str(args, "node_type");
            q.query_label = opt_str(args, "query").value_or(opt_str(args, "query_label").value_or(""));
            q.top_n = opt_id(args, "top_n").value_or(5);
            json results = json::array();
            for (const auto& h : ltm_->search_nodes(q)) results.push_back(h.to_json());
            return ToolOutcome{{{"results", results}}, std::nullopt};
        });
    add("grep_nodes", "Find nodes whose labels match a regular expression.",
        params({{"pattern", "string", true, "extended regular expression"}}),
        [this](AgentContext&, NodeId, const json& args) {
            json nodes = json::array();
            for (const auto& n : ltm_->grep_nodes(req_str(args, "pattern"))) nodes.push_back(n.to_json());
            return ToolOutcome{{{"nodes", nodes}}, std::nullopt};
        });
    add("update_node", "Change a node's label or content.",
        params({{"node_id", "integer", true, "node id"},
                {"label", "string", false, "new label"},
                {"content", "string", false, "new content"}}),
        [this](AgentContext&, NodeId, const json& args) {
            LtmNodeId id = req_id(args, "node_id");
            ltm_->update_node(id, opt_str(args, "label"), opt_str(args, "content"));
            persist_ltm();
            return ToolOutcome{{{"status", "success"}, {"node_id", id}}, std::nullopt};
        });
    add("delete_node", "Delete a node and its edges.", params({{"node_id", "integer", true, "node id"}}),
        [this](AgentContext&, NodeId, const json& args) {
            LtmNodeId id = req_id(args, "node_id");
            ltm_->delete_node(id);
            persist_ltm();
            return ToolOutcome{{{"status", "success"}, {"node_id", id}}, std::nullopt};
        });
}

}  // namespace forge
