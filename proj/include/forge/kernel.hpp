#pragma once

#include "forge/agent_topology.hpp"
#include "forge/long_term_memory.hpp"
#include "forge/model_gateway.hpp"
#include "forge/sandbox.hpp"
#include "forge/short_term_memory.hpp"
#include "forge/tool_registry.hpp"
#include "forge/util.hpp"

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace forge {

class MemoryAgent;

struct BackendDecl {
    std::string id;
    std::string type = "scripted";
    fs::path transcript;
};

struct KernelConfig {
    fs::path registry_root;
    fs::path workspace;
    std::optional<fs::path> ltm_path;      // created on first write
    std::optional<fs::path> sandbox_root;  // defaults to a fresh temp directory
    std::size_t summarization_threshold_tokens = 24000;
    std::size_t keep_recent_events = 8;
    std::size_t truncation_limit_bytes = 65536;
    double dedup_threshold = 0.9;
    std::size_t max_steps = 64;
    std::size_t max_agent_depth = 8;
    double command_timeout_seconds = 60.0;
    std::string memory_agent_model = std::string(kInheritModel);
    bool install_memory_agent = true;
    std::vector<BackendDecl> backends;

    json to_json() const;
    // Relative paths are resolved against |base| when it is non-empty.
    static KernelConfig from_json(const json& j, const fs::path& base = {});
    void validate(bool check_paths) const;
};

KernelConfig load_config(const fs::path& file);
std::string dump_config(const KernelConfig& config);

struct ToolTraceEntry {
    std::string tool_name;
    json args;
    json response;
    bool ok = true;
};

// State of one executing agent: a root agent or a clone of a pooled entry.
struct AgentContext {
    std::string agent_id;  // "<agent_name>#<n>"
    AgentSpec spec;
    ToolScope scope;
    std::string backend_id;
    StmGraph* graph = nullptr;
    NodeId run = 0;
    std::optional<std::string> board_id;
    std::size_t depth = 0;
    std::vector<ToolTraceEntry> trace;
};

struct AgentResponse {
    std::string agent;
    std::string status = "success";  // "success" or "failed"
    std::vector<std::string> summary;
    std::vector<std::string> observations;
    std::string error;
    std::string error_code;
    std::string guidance;
    std::optional<NodeId> run;
    std::string final_text;
    json details = nullptr;

    bool ok() const noexcept { return status == "success"; }
    json to_json() const;
};

struct EnsembleMember {
    std::string agent_name;
    std::string model_name = std::string(kInheritModel);
};

struct EnsembleRequest {
    std::string task;
    std::vector<EnsembleMember> members;
};

struct MemberResponse {
    std::string agent_name;
    std::string clone_id;
    std::string backend_id;
    AgentResponse response;
};

struct EnsembleResult {
    std::vector<MemberResponse> members;  // request order
    std::string summary;
    std::string board_id;

    json to_json() const;
};

struct RunLimits {
    std::size_t max_steps = 64;
};

struct RunResult {
    std::string final_text;
    std::string agent_id;
    NodeId run = 0;
    std::size_t events = 0;
};

struct ToolOutcome {
    json response;
    std::optional<std::string> full_output;  // set when |response| carries a truncated copy
};

using BuiltinHandler = std::function<ToolOutcome(AgentContext& ctx, NodeId event, const json& args)>;

struct BuiltinTool {
    ToolSummary summary;
    BuiltinHandler run;
};

// Wires every subsystem together and drives agent loops.
class Kernel {
public:
    explicit Kernel(KernelConfig config, std::shared_ptr<SandboxDriver> driver = nullptr,
                    std::shared_ptr<const EmbeddingProvider> embedder = nullptr);
    ~Kernel();
    Kernel(const Kernel&) = delete;
    Kernel& operator=(const Kernel&) = delete;

    const KernelConfig& config() const noexcept { return config_; }
    ModelGateway& gateway() noexcept { return gateway_; }
    ToolRegistry& registry() noexcept { return *registry_; }
    SandboxRuntime& sandboxes() noexcept { return *sandboxes_; }
    ToolInvoker& invoker() noexcept { return *invoker_; }
    StmGraph& stm() noexcept { return stm_; }
    LtmStore& ltm() noexcept { return *ltm_; }
    AgentPool& pool() noexcept { return pool_; }
    BoardHub& boards() noexcept { return *boards_; }
    MemoryAgent& memory() noexcept { return *memory_; }

    // Root agents are not pooled; the spec must name a registered backend.
    AgentContext open_root(const AgentSpec& spec);
    RunResult run_root(const AgentSpec& spec, const std::string& task, RunLimits limits);
    // Drives |ctx| until a text response. Closes the run either way.
    RunResult run_agent(AgentContext& ctx, const std::string& task, std::size_t max_steps);

    std::string create_agent(const AgentContext& parent, const AgentSpec& spec);
    json list_agents(const std::string& filter = {}) const;
    // |call_event| is the caller's tool_call event; when absent one is recorded.
    AgentResponse call_agent(AgentContext& caller, const std::string& agent_name, const std::string& task,
                             std::optional<NodeId> call_event = std::nullopt);
    EnsembleResult run_ensemble(AgentContext& caller, const EnsembleRequest& request,
                                std::optional<NodeId> call_event = std::nullopt);
    std::uint64_t post_message(const std::string& board_id, const std::string& writer, const std::string& text);
    std::vector<BoardMessage> drain_messages(const std::string& board_id, const std::string& reader);

    ToolScope resolve_scope(const std::vector<std::string>& tools_list, const ToolScope* parent) const;
    const std::map<std::string, BuiltinTool>& builtins() const noexcept { return builtins_; }
    ToolOutcome dispatch_tool(AgentContext& ctx, NodeId event, const ToolCall& call);

    std::size_t live_clones() const noexcept { return live_clones_.load(); }
    std::size_t clones_started() const noexcept { return clones_started_.load(); }
    void persist_ltm();

private:
    struct CloneGuard;

    void install_builtins();
    void install_memory_agent();
    std::string next_agent_id(const std::string& name);
    ModelRequest build_request(const AgentContext& ctx, const std::string& task) const;
    void maybe_summarize(AgentContext& ctx);
    std::string summarize_events(const std::string& backend, const std::string& agent_id, const json& events);
    AgentContext make_clone(const PoolEntry& entry, const std::string& backend, const AgentContext& caller);
    AgentResponse run_clone(AgentContext& clone, const std::string& task, const AgentContext& caller,
                            std::optional<NodeId> parent_event);
    NodeId record_api_call(AgentContext& caller, const std::string& tool_name, const json& args);
    void finish_api_call(AgentContext& caller, NodeId event, const json& response);

    KernelConfig config_;
    bool own_sandbox_root_ = false;
    fs::path sandbox_root_;
    ModelGateway gateway_;
    std::unique_ptr<ToolRegistry> registry_;
    std::shared_ptr<SandboxDriver> driver_;
    std::unique_ptr<SandboxRuntime> sandboxes_;
    std::unique_ptr<ToolInvoker> invoker_;
    StmGraph stm_;
    std::unique_ptr<LtmStore> ltm_;
    AgentPool pool_;
    std::unique_ptr<BoardHub> boards_;
    std::unique_ptr<MemoryAgent> memory_;
    std::map<std::string, BuiltinTool> builtins_;
    std::mutex ids_mu_;
    std::map<std::string, std::size_t> id_counters_;
    std::mutex ltm_save_mu_;
    std::atomic<std::size_t> live_clones_{0};
    std::atomic<std::size_t> clones_started_{0};
};

}  // namespace forge
