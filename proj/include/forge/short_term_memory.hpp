#pragma once

#include "forge/model_gateway.hpp"
#include "forge/util.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace forge {

using NodeId = std::uint64_t;

enum class StmKind { AgentRun, Event, RawToolResponse, SummaryEvent };
enum class StmEdgeKind { emits, spawns, raw_of, summarizes };

std::string_view to_string(StmKind kind) noexcept;
std::string_view to_string(StmEdgeKind kind) noexcept;
std::optional<StmKind> parse_stm_kind(std::string_view s) noexcept;
std::optional<StmEdgeKind> parse_stm_edge_kind(std::string_view s) noexcept;

struct StmNode {
    NodeId id = 0;
    StmKind kind = StmKind::Event;
    json payload = json::object();
    std::string raw;  // RawToolResponse bytes only
};

struct StmEdge {
    NodeId src = 0;
    NodeId dst = 0;
    StmEdgeKind kind = StmEdgeKind::emits;

    friend bool operator==(const StmEdge&, const StmEdge&) = default;
};

struct RunSummary {
    NodeId run_id = 0;
    std::string agent_name;
    std::string status;
    std::optional<NodeId> parent_run;
    std::optional<NodeId> parent_event;
    std::size_t event_count = 0;

    json to_json() const;
};

struct RunFilter {
    std::optional<std::string> name_substring;
    std::optional<std::string> status;
};

// Produces summary text for a JSON array of event payloads.
using Summarizer = std::function<std::string(const json& covered_events)>;

// Per-kernel execution graph. Each AgentRun is appended by a single executing
// agent; structural changes and reads go through one reader/writer lock.
class StmGraph {
public:
    explicit StmGraph(std::size_t truncation_limit = 64 * 1024);

    NodeId open_agent_run(std::optional<NodeId> parent_event, const json& spec_snapshot);
    void close_agent_run(NodeId run, const std::string& status);

    NodeId append_event(NodeId run, json payload, std::optional<std::string> raw_output = std::nullopt);

    // Tool-call events are opened before the tool runs (so sub-agent runs can
    // hang off them) and completed with the tool output afterwards.
    NodeId begin_event(NodeId run, json payload);
    // |full| carries untruncated bytes when the tool already cut |output|.
    void complete_event(NodeId event, const json& fields, std::optional<std::string> output,
                        std::optional<std::string> full = std::nullopt);

    NodeId summarize_history(NodeId run, std::size_t keep_recent, const Summarizer& summarize);

    // Summary events in order, then every event not yet covered by a summary.
    std::vector<Turn> assemble_history(NodeId run) const;

    std::vector<RunSummary> list_agent_runs(const RunFilter& filter = {}) const;
    std::vector<json> inspect_events(NodeId run, std::size_t first, std::size_t last) const;
    std::vector<json> inspect_events(NodeId run) const;
    std::string recover_raw(NodeId event) const;

    // Small structured pattern language; see README for the query shape.
    std::vector<std::vector<NodeId>> graph_query(const json& pattern) const;

    std::size_t truncation_limit() const noexcept { return truncation_limit_; }
    std::size_t summary_count(NodeId run) const;
    std::size_t event_count(NodeId run) const;
    std::optional<StmNode> node(NodeId id) const;
    std::vector<StmNode> nodes() const;
    std::vector<StmEdge> edges() const;
    RunSummary run_summary(NodeId run) const;

    // JSON-lines: the run's subtree nodes first, then the edges among them.
    std::string export_run(NodeId run) const;

private:
    struct RunState {
        std::vector<NodeId> events;          // index i-1 -> event node
        std::vector<NodeId> summaries;
        std::size_t covered_upto = 0;
        bool open = true;
    };

    NodeId add_node_locked(StmKind kind, json payload, std::string raw = {});
    void add_edge_locked(NodeId src, NodeId dst, StmEdgeKind kind);
    const StmNode& node_locked(NodeId id) const;
    RunState& run_locked(NodeId run);
    const RunState& run_locked(NodeId run) const;
    void attach_output_locked(NodeId event, std::optional<std::string> output, std::optional<std::string> full = std::nullopt);
    Turn event_turn_locked(const StmNode& event) const;

    std::size_t truncation_limit_;
    mutable std::shared_mutex mu_;
    std::vector<StmNode> nodes_;  // node id n is nodes_[n-1]
    std::vector<StmEdge> edges_;
    std::map<NodeId, std::vector<std::size_t>> out_edges_;
    std::map<NodeId, std::vector<std::size_t>> in_edges_;
    std::map<NodeId, RunState> runs_;
};

}  // namespace forge
