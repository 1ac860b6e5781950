#pragma once

#include "forge/agent_topology.hpp"
#include "forge/long_term_memory.hpp"
#include "forge/util.hpp"

#include <mutex>
#include <string>
#include <vector>

namespace forge {

class Kernel;

inline constexpr std::string_view kMemoryAgentName = "memory_agent";

struct MemoryQuery {
    std::string requester;
    std::string text;
};

struct MemoryAnswer {
    std::string tier;    // "short_term" or "long_term"
    std::string action;  // "search", "store", "update", "delete"
    bool found = false;
    std::size_t total_found = 0;
    std::vector<json> results;
    std::string summary;

    json to_json() const;
};

struct StoreDecision {
    enum class Kind { created, updated, skipped };
    Kind kind = Kind::created;
    LtmNodeId node_id = 0;

    json to_json() const;
};

std::string_view to_string(StoreDecision::Kind kind) noexcept;

// Natural-language front end over both memory tiers. Its own loop records
// into a private scratch graph, so it never writes to the kernel's
// short-term graph.
class MemoryAgent {
public:
    explicit MemoryAgent(Kernel& kernel);

    static AgentSpec default_spec(const std::string& model_name);
    static const std::vector<std::string>& short_term_tools();
    static const std::vector<std::string>& long_term_tools();

    MemoryAnswer handle_query(const MemoryQuery& query, const std::string& caller_backend);
    StoreDecision dedup_store(const std::string& node_type, const std::string& label, const std::string& content,
                              const std::string& backend);

private:
    Kernel& kernel_;
    std::mutex store_mu_;
};

}  // namespace forge
