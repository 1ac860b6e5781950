#include "forge/agent_topology.hpp"

#include "forge/error.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace forge {

namespace {

std::string_view to_string(InitialMemory m) {
    return m == InitialMemory::parent_summary ? "parent_summary" : "empty";
}

std::vector<std::string> string_list(const json& j, const char* field) {
    if (!j.is_array()) throw Error(ErrorCode::InvalidSpec, std::string(field) + " must be a list of strings");
    std::vector<std::string> out;
    for (const auto& v : j) {
        if (!v.is_string()) throw Error(ErrorCode::InvalidSpec, std::string(field) + " must be a list of strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

json AgentSpec::to_json() const {
    return {{"agent_name", agent_name},   {"description", description}, {"instruction", instruction},
            {"model_name", model_name},   {"tools_list", tools_list},   {"initial_memory", to_string(initial_memory)}};
}

AgentSpec AgentSpec::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidSpec, "agent spec must be a document");
    AgentSpec s;
    auto str = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        if (!j[key].is_string()) throw Error(ErrorCode::InvalidSpec, std::string(key) + " must be a string");
        return j[key].get<std::string>();
    };
    auto name = str("agent_name");
    if (!name) throw Error(ErrorCode::InvalidSpec, "agent_name is required");
    s.agent_name = *name;
    s.instruction = str("instruction").value_or("");
    s.description = str("description").value_or(str("role").value_or(""));
    s.model_name = str("model_name").value_or(std::string(kInheritModel));
    if (j.contains("tools_list")) s.tools_list = string_list(j["tools_list"], "tools_list");
    else if (j.contains("tools")) s.tools_list = string_list(j["tools"], "tools");
    auto mem = str("initial_memory").value_or("empty");
    if (mem == "empty") s.initial_memory = InitialMemory::empty;
    else if (mem == "parent_summary") s.initial_memory = InitialMemory::parent_summary;
    else throw Error(ErrorCode::InvalidSpec, "initial_memory must be \"empty\" or \"parent_summary\"");
    return s;
}

void AgentPool::insert(PoolEntry entry) {
    std::unique_lock lock(mu_);
    const std::string name = entry.spec.agent_name;
    if (!entries_.emplace(name, std::move(entry)).second)
        throw Error(ErrorCode::DuplicateAgentName, "agent '" + name + "' already exists in the pool");
}

bool AgentPool::contains(const std::string& name) const {
    std::shared_lock lock(mu_);
    return entries_.contains(name);
}

std::optional<PoolEntry> AgentPool::find(const std::string& name) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(name);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::vector<PoolEntry> AgentPool::list(const std::string& filter) const {
    std::shared_lock lock(mu_);
    std::vector<PoolEntry> out;
    for (const auto& [name, e] : entries_)
        if (contains_ci(name, filter) || contains_ci(e.spec.description, filter)) out.push_back(e);
    return out;
}

void AgentPool::record_invocation(const std::string& name) {
    std::unique_lock lock(mu_);
    auto it = entries_.find(name);
    if (it != entries_.end()) ++it->second.invocation_count;
}

std::size_t AgentPool::size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
}

std::map<std::string, std::string> AgentPool::spec_snapshot() const {
    std::shared_lock lock(mu_);
    std::map<std::string, std::string> out;
    for (const auto& [name, e] : entries_) out[name] = e.spec.to_json().dump();
    return out;
}

json AgentPool::listing(const std::vector<PoolEntry>& entries) {
    json agents = json::array();
    for (const auto& e : entries)
        agents.push_back({{"agent_name", e.spec.agent_name},
                          {"description", e.spec.description},
                          {"model_name", e.spec.model_name},
                          {"invocation_count", e.invocation_count}});
    std::string message = "Found " + std::to_string(entries.size()) + " total agents.";
    if (entries.empty()) message += " If no suitable agents exist, create a dynamic sub-agent.";
    return {{"summary", {{"total_active_agents", entries.size()}}}, {"message", message}, {"agents", agents}};
}

json BoardMessage::to_json() const {
    return {{"seq", seq}, {"writer", writer}, {"text", text}};
}

MessageBoard::MessageBoard(std::string board_id, fs::path file, std::set<std::string> members)
    : id_(std::move(board_id)), file_(std::move(file)), members_(std::move(members)) {
    fs::create_directories(file_.parent_path());
    std::ofstream touch(file_, std::ios::app);
}

std::uint64_t MessageBoard::post(const std::string& writer, const std::string& text) {
    std::lock_guard lock(mu_);
    if (closed_) throw Error(ErrorCode::BoardClosed, "board '" + id_ + "' is closed");
    if (!members_.contains(writer))
        throw Error(ErrorCode::NotBoardMember, "'" + writer + "' is not a member of board '" + id_ + "'");
    BoardMessage m{log_.size() + 1, writer, text};
    std::string line = dump_lossy(m.to_json()) + "\n";

    int fd = ::open(file_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::Io, "cannot open board file " + file_.string() + ": " + std::strerror(errno));
    // The advisory lock also excludes writers outside this process.
    ::flock(fd, LOCK_EX);
    std::size_t written = 0;
    while (written < line.size()) {
        ssize_t n = ::write(fd, line.data() + written, line.size() - written);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        written += static_cast<std::size_t>(n);
    }
    ::flock(fd, LOCK_UN);
    ::close(fd);
    if (written != line.size()) throw Error(ErrorCode::Io, "short write on board file " + file_.string());
    log_.push_back(std::move(m));
    return log_.back().seq;
}

std::vector<BoardMessage> MessageBoard::drain(const std::string& reader) {
    std::lock_guard lock(mu_);
    if (!members_.contains(reader))
        throw Error(ErrorCode::NotBoardMember, "'" + reader + "' is not a member of board '" + id_ + "'");
    std::uint64_t& offset = offsets_[reader];
    std::vector<BoardMessage> out;
    for (std::uint64_t seq = offset + 1; seq <= log_.size(); ++seq)
        if (log_[seq - 1].writer != reader) out.push_back(log_[seq - 1]);
    offset = log_.size();
    return out;
}

void MessageBoard::close() {
    std::lock_guard lock(mu_);
    closed_ = true;
}

bool MessageBoard::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

std::vector<BoardMessage> MessageBoard::messages() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::vector<BoardMessage> MessageBoard::read_file(const fs::path& file) {
    std::istringstream in(forge::read_file(file));
    std::vector<BoardMessage> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            out.push_back(BoardMessage{j.at("seq"), j.at("writer"), j.at("text")});
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, "board file " + file.string() + ": " + e.what());
        }
    }
    return out;
}

BoardHub::BoardHub(fs::path dir) : dir_(std::move(dir)) {}

std::shared_ptr<MessageBoard> BoardHub::open(const std::set<std::string>& members) {
    std::lock_guard lock(mu_);
    std::string id = "board-" + std::to_string(next_++) + "-" + random_token().substr(0, 8);
    auto board = std::make_shared<MessageBoard>(id, dir_ / (id + ".jsonl"), members);
    boards_[id] = board;
    return board;
}

std::shared_ptr<MessageBoard> BoardHub::get(const std::string& board_id) const {
    std::lock_guard lock(mu_);
    auto it = boards_.find(board_id);
    if (it == boards_.end()) throw Error(ErrorCode::UnknownBoard, "unknown board '" + board_id + "'");
    return it->second;
}

std::uint64_t BoardHub::post_message(const std::string& board_id, const std::string& writer, const std::string& text) {
    return get(board_id)->post(writer, text);
}

std::vector<BoardMessage> BoardHub::drain_messages(const std::string& board_id, const std::string& reader) {
    return get(board_id)->drain(reader);
}

}  // namespace forge
