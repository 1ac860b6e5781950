#pragma once

#include "forge/util.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace forge {

// Backend id that resolves to the calling agent's backend at invocation time.
inline constexpr std::string_view kInheritModel = "inherit";

struct ToolCall {
    std::string tool_name;
    json args = json::object();

    friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct ToolSummary {
    std::string name;
    std::string description;
    json parameters = json::object();
};

// One entry of the history presented to a model.
struct Turn {
    std::uint64_t seq = 0;
    std::string role;  // "model", "tool", "summary", "context"
    std::string text;
    std::optional<ToolCall> tool_call;
    std::string tool_response;

    // Flattened text used for context predicates and token estimates.
    std::string render() const;
};

struct ModelRequest {
    std::string agent_id;
    std::string system_instruction;
    std::string task;
    std::vector<Turn> history;
    std::vector<ToolSummary> available_tools;
    json options = json::object();  // carried opaquely, never interpreted

    // Text the scripted backend matches predicates against.
    std::string latest_turn_text() const;
    json history_json() const;
};

struct ModelResponse {
    enum class Kind { text, tool_call };

    Kind kind = Kind::text;
    std::optional<std::string> text;
    std::optional<ToolCall> tool_call;

    static ModelResponse make_text(std::string text);
    static ModelResponse make_call(std::string tool_name, json args = json::object());

    json to_json() const;
    static ModelResponse from_json(const json& j);

    friend bool operator==(const ModelResponse&, const ModelResponse&) = default;
};

class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual ModelResponse complete(const ModelRequest& request) = 0;
};

struct ScriptedStep {
    std::optional<std::string> match;  // substring required in the latest turn
    ModelResponse response;
};

struct ScriptedTranscript {
    std::vector<ScriptedStep> steps;

    static ScriptedTranscript from_json(const json& j);
    static ScriptedTranscript load(const fs::path& file);
    json to_json() const;
};

// Replays a transcript strictly in order. Overlapping complete() calls are
// reported as ConcurrentConsumption rather than interleaved.
class ScriptedBackend final : public ModelBackend {
public:
    explicit ScriptedBackend(ScriptedTranscript transcript);

    ModelResponse complete(const ModelRequest& request) override;

    std::size_t consumed() const;
    std::size_t remaining() const;
    std::vector<ModelRequest> requests() const;

private:
    ScriptedTranscript transcript_;
    mutable std::mutex mu_;
    std::size_t cursor_ = 0;
    std::vector<ModelRequest> requests_;
    std::atomic<int> in_flight_{0};
};

class ModelGateway {
public:
    void register_backend(const std::string& backend_id, std::shared_ptr<ModelBackend> backend);
    bool has_backend(const std::string& backend_id) const;

    ModelResponse complete(const std::string& backend_id, const ModelRequest& request) const;

    // Maps a model name to a registered backend id, following "inherit".
    std::string resolve(const std::string& model_name, const std::string& caller_backend) const;

    std::vector<std::string> backend_ids() const;

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<ModelBackend>> backends_;
};

// ceil(bytes / 4).
std::size_t estimate_tokens(std::string_view text) noexcept;

}  // namespace forge
