#pragma once

#include "forge/util.hpp"

#include <sys/types.h>

#include <atomic>
#include <compare>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace forge {

struct EnvSpec {
    std::string env_id;
    std::string base;
    std::vector<std::string> setup_commands;
    std::string workspace_mount = "/workspace";

    json to_json() const;
    static EnvSpec from_json(const json& j);
};

struct SandboxId {
    std::string value;
    auto operator<=>(const SandboxId&) const = default;
};

struct SnapshotKey {
    std::string value;
    auto operator<=>(const SnapshotKey&) const = default;
};

struct InvocationHandle {
    std::string handle_id;
    auto operator<=>(const InvocationHandle&) const = default;
};

enum class HandleState { pending, running, done, failed, terminated };
enum class ExecMode { sync, background };

std::string_view to_string(HandleState state) noexcept;
inline bool is_terminal(HandleState s) noexcept {
    return s == HandleState::done || s == HandleState::failed || s == HandleState::terminated;
}

struct ExecResult {
    int exit_status = 0;
    std::string stdout_text;
    std::string stderr_text;

    json to_json() const;
    friend bool operator==(const ExecResult&, const ExecResult&) = default;
};

struct ExecLimits {
    double timeout_seconds = 0.0;  // <= 0 waits indefinitely
};

using ExecOutcome = std::variant<ExecResult, InvocationHandle>;

// Lets another thread kill a running child process group.
class ProcessControl {
public:
    void attach(pid_t pid);
    void detach();
    void kill();
    bool cancelled() const noexcept { return cancelled_.load(); }

private:
    std::mutex mu_;
    pid_t pid_ = 0;
    std::atomic<bool> cancelled_{false};
};

// Runs `/bin/sh -c command` in |cwd| with extra environment entries.
ExecResult run_shell(const std::string& command, const fs::path& cwd,
                     const std::vector<std::pair<std::string, std::string>>& env, ProcessControl* control);

// Minimal contract every sandbox backend implements.
class SandboxDriver {
public:
    virtual ~SandboxDriver() = default;
    virtual bool available() const { return true; }
    virtual void create(const std::string& sandbox_id, const EnvSpec& spec, const fs::path& workspace) = 0;
    virtual ExecResult exec(const std::string& sandbox_id, const std::string& command, ProcessControl* control) = 0;
    virtual void snapshot(const std::string& sandbox_id, const std::string& key) = 0;
    virtual bool has_snapshot(const std::string& key) const = 0;
    virtual void restore(const std::string& sandbox_id, const std::string& key) = 0;
    virtual void destroy(const std::string& sandbox_id) = 0;
};

// One host directory per sandbox; the shared workspace is symlinked in at the
// EnvSpec's mount path and snapshots are directory copies.
class LocalDirectoryDriver final : public SandboxDriver {
public:
    explicit LocalDirectoryDriver(fs::path root);

    void create(const std::string& sandbox_id, const EnvSpec& spec, const fs::path& workspace) override;
    ExecResult exec(const std::string& sandbox_id, const std::string& command, ProcessControl* control) override;
    void snapshot(const std::string& sandbox_id, const std::string& key) override;
    bool has_snapshot(const std::string& key) const override;
    void restore(const std::string& sandbox_id, const std::string& key) override;
    void destroy(const std::string& sandbox_id) override;

    fs::path sandbox_dir(const std::string& sandbox_id) const;
    std::size_t exec_count() const noexcept { return exec_count_.load(); }

private:
    struct Mount {
        fs::path relative;
        fs::path target;
    };
    static void copy_tree(const fs::path& from, const fs::path& to, const fs::path& skip);

    fs::path root_;
    mutable std::mutex mu_;
    std::map<std::string, Mount> mounts_;
    std::atomic<std::size_t> exec_count_{0};
};

struct HandleInfo {
    HandleState state = HandleState::pending;
    SandboxId sandbox;
    std::string command;
    std::int64_t started_at = 0;
    std::optional<std::int64_t> finished_at;
};

// Provisioning with snapshot reuse, serialized per-sandbox execution, and a
// table of pollable invocation handles.
class SandboxRuntime {
public:
    SandboxRuntime(std::shared_ptr<SandboxDriver> driver, fs::path workspace);
    ~SandboxRuntime();
    SandboxRuntime(const SandboxRuntime&) = delete;
    SandboxRuntime& operator=(const SandboxRuntime&) = delete;

    SandboxId provision(const EnvSpec& spec, const std::optional<SnapshotKey>& from = std::nullopt);
    ExecOutcome exec(const SandboxId& sandbox, const std::string& command, ExecLimits limits, ExecMode mode);
    HandleState poll(const InvocationHandle& handle) const;
    ExecResult fetch_result(const InvocationHandle& handle) const;
    void terminate(const InvocationHandle& handle);
    SnapshotKey commit_snapshot(const SandboxId& sandbox);
    void destroy(const SandboxId& sandbox);

    HandleInfo info(const InvocationHandle& handle) const;
    std::size_t setup_executions() const noexcept { return setup_executions_.load(); }
    const fs::path& workspace() const noexcept { return workspace_; }
    SandboxDriver& driver() noexcept { return *driver_; }

    static SnapshotKey setup_key(const EnvSpec& spec);

private:
    struct Sandbox;
    struct Job;

    std::shared_ptr<Job> job(const InvocationHandle& handle) const;
    void run_job(std::shared_ptr<Sandbox> sandbox, std::shared_ptr<Job> job);

    std::shared_ptr<SandboxDriver> driver_;
    fs::path workspace_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Sandbox>> sandboxes_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::map<std::string, std::vector<std::string>> snapshot_history_;
    std::atomic<std::size_t> setup_executions_{0};
    std::size_t outstanding_ = 0;
    std::condition_variable drained_;
};

}  // namespace forge
