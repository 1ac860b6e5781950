#pragma once

#include "forge/model_gateway.hpp"
#include "forge/util.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace forge {

enum class InitialMemory { empty, parent_summary };

struct AgentSpec {
    std::string agent_name;
    std::string description;
    std::string instruction;
    std::string model_name = std::string(kInheritModel);
    std::vector<std::string> tools_list;
    InitialMemory initial_memory = InitialMemory::empty;

    // Wire shape: agent_name, description, instruction, model_name, tools_list,
    // initial_memory. Also accepts `tools` and `role` as written by models.
    json to_json() const;
    static AgentSpec from_json(const json& j);

    friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

struct ToolBinding {
    enum class Kind { builtin, registry };
    Kind kind = Kind::builtin;
    std::string registry_path;  // registry tools only
    ToolSummary summary;
};

// Tool name -> binding, frozen when an agent is created.
using ToolScope = std::map<std::string, ToolBinding>;

struct PoolEntry {
    AgentSpec spec;
    ToolScope scope;
    std::string created_by;
    std::int64_t created_at = 0;
    std::size_t invocation_count = 0;
};

// Unified store of runtime-created agents. Lookups are concurrent,
// registration is serialized.
class AgentPool {
public:
    void insert(PoolEntry entry);
    bool contains(const std::string& name) const;
    std::optional<PoolEntry> find(const std::string& name) const;
    // Case-insensitive substring over name and description; empty matches all.
    std::vector<PoolEntry> list(const std::string& filter = {}) const;
    void record_invocation(const std::string& name);
    std::size_t size() const;
    // agent_name -> serialized spec, for isolation checks.
    std::map<std::string, std::string> spec_snapshot() const;

    static json listing(const std::vector<PoolEntry>& entries);

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, PoolEntry> entries_;
};

struct BoardMessage {
    std::uint64_t seq = 0;
    std::string writer;
    std::string text;

    json to_json() const;
    friend bool operator==(const BoardMessage&, const BoardMessage&) = default;
};

// Append-only message board shared by the members of one ensemble. The file
// holds one `{seq, writer, text}` JSON object per line; read offsets live here,
// not in the file.
class MessageBoard {
public:
    MessageBoard(std::string board_id, fs::path file, std::set<std::string> members);

    std::uint64_t post(const std::string& writer, const std::string& text);
    std::vector<BoardMessage> drain(const std::string& reader);
    void close();

    bool closed() const;
    const std::string& id() const noexcept { return id_; }
    const fs::path& file() const noexcept { return file_; }
    const std::set<std::string>& members() const noexcept { return members_; }
    std::vector<BoardMessage> messages() const;

    static std::vector<BoardMessage> read_file(const fs::path& file);

private:
    std::string id_;
    fs::path file_;
    std::set<std::string> members_;
    mutable std::mutex mu_;
    std::vector<BoardMessage> log_;
    std::map<std::string, std::uint64_t> offsets_;
    bool closed_ = false;
};

class BoardHub {
public:
    explicit BoardHub(fs::path dir);

    std::shared_ptr<MessageBoard> open(const std::set<std::string>& members);
    std::shared_ptr<MessageBoard> get(const std::string& board_id) const;
    std::uint64_t post_message(const std::string& board_id, const std::string& writer, const std::string& text);
    std::vector<BoardMessage> drain_messages(const std::string& board_id, const std::string& reader);

private:
    fs::path dir_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<MessageBoard>> boards_;
    std::uint64_t next_ = 1;
};

}  // namespace forge
