#pragma once

#include "forge/sandbox.hpp"
#include "forge/util.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace forge {

enum class ParamType { string, integer, number, boolean, list, document };

std::string_view to_string(ParamType t) noexcept;
std::optional<ParamType> parse_param_type(std::string_view s) noexcept;

struct ParamSpec {
    std::string param_name;
    ParamType param_type = ParamType::string;
    bool required = false;
    std::string description;

    friend bool operator==(const ParamSpec&, const ParamSpec&) = default;
};

struct ToolManifest {
    std::string name;
    std::string description;
    std::vector<ParamSpec> interface;
    std::vector<std::string> dependencies;
    json environment = nullptr;  // null, an env_id, or an inline EnvSpec
    std::string entrypoint;
    double timeout_seconds = 30.0;
    bool background_default = false;

    json to_json() const;
    // Throws InvalidManifest listing every field-level problem.
    static ToolManifest from_json(const json& j);
    // JSON-schema-like parameter description offered to models.
    json parameter_schema() const;

    friend bool operator==(const ToolManifest&, const ToolManifest&) = default;
};

struct ToolId {
    std::string path;  // registry-relative directory of the tool
    auto operator<=>(const ToolId&) const = default;
};

struct CategoryIndex {
    std::string path;
    std::string summary;
    std::vector<std::string> child_categories;
    std::vector<std::string> tool_names;

    json to_json() const;
};

struct ToolBrief {
    ToolId id;
    std::string name;
    std::string description;

    json to_json() const;
};

struct CategoryExpansion {
    CategoryIndex category;
    std::vector<CategoryIndex> child_categories;
    std::vector<ToolBrief> tools;

    json to_json() const;
};

// File-system tool hierarchy:
//   <root>/<category>/.../INDEX.md           first line is the summary
//   <root>/<category>/.../<tool>/tool.json   manifest, entrypoint beside it
//   <root>/environments.json                 optional list of EnvSpecs
class ToolRegistry {
public:
    explicit ToolRegistry(fs::path root);

    std::vector<CategoryIndex> load_root_index() const;
    std::string render_root_index() const;
    CategoryExpansion expand_category(const std::string& path) const;
    std::vector<ToolBrief> search_tools(const std::string& keyword) const;
    ToolManifest describe_tool(const ToolId& id) const;
    ToolId create_tool(const std::string& author, const std::string& target_category, const ToolManifest& manifest,
                       const std::string& implementation);
    void modify_tool(const std::string& author, const ToolId& id, const std::optional<ToolManifest>& new_manifest,
                     const std::optional<std::string>& new_implementation);

    bool is_tool(const std::string& path) const;
    bool is_category(const std::string& path) const;
    std::vector<ToolId> tools_under(const std::string& category) const;
    std::optional<EnvSpec> environment(const std::string& env_id) const;

    const fs::path& root() const noexcept { return root_; }
    fs::path tool_dir(const ToolId& id) const;
    // Number of tool.json files opened, for laziness checks.
    std::size_t manifest_reads() const noexcept { return manifest_reads_.load(); }

private:
    fs::path resolve(const std::string& path) const;
    std::string summary_of(const fs::path& dir) const;
    json read_manifest_json(const fs::path& dir) const;

    fs::path root_;
    mutable std::atomic<std::size_t> manifest_reads_{0};
    std::mutex write_mu_;
};

struct ToolResult {
    int exit_status = 0;
    std::string output;       // truncated to the limit
    bool truncated = false;
    std::string full_output;  // never offered to the model directly

    json to_json() const;
};

using InvokeOutcome = std::variant<ToolResult, InvocationHandle>;

// Dispatches registry tools into per-environment sandboxes.
class ToolInvoker {
public:
    ToolInvoker(const ToolRegistry& registry, SandboxRuntime& sandboxes, std::size_t truncation_limit);

    InvokeOutcome invoke_tool(const std::set<std::string>& caller_scope, const ToolId& id, const json& args,
                              ExecMode mode);

    static void validate_args(const ToolManifest& manifest, const json& args);
    static ToolResult to_tool_result(const ExecResult& r, std::size_t limit);

    SandboxId sandbox_for(const ToolManifest& manifest);
    std::size_t truncation_limit() const noexcept { return truncation_limit_; }

private:
    const ToolRegistry& registry_;
    SandboxRuntime& sandboxes_;
    std::size_t truncation_limit_;
    std::mutex mu_;
    std::map<std::string, SandboxId> env_sandboxes_;
};

}  // namespace forge
