#include "forge/sandbox.hpp"

#include "forge/error.hpp"

#include <thread>

namespace forge {

std::string_view to_string(HandleState state) noexcept {
    switch (state) {
        case HandleState::pending: return "pending";
        case HandleState::running: return "running";
        case HandleState::done: return "done";
        case HandleState::failed: return "failed";
        case HandleState::terminated: return "terminated";
    }
    return "";
}

json EnvSpec::to_json() const {
    return {{"env_id", env_id}, {"base", base}, {"setup_commands", setup_commands}, {"workspace_mount", workspace_mount}};
}

EnvSpec EnvSpec::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "EnvSpec must be a document");
    EnvSpec s;
    try {
        s.env_id = j.at("env_id").get<std::string>();
        s.base = j.value("base", std::string());
        s.setup_commands = j.value("setup_commands", std::vector<std::string>{});
        s.workspace_mount = j.value("workspace_mount", std::string("/workspace"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("EnvSpec: ") + e.what());
    }
    if (!is_identifier(s.env_id)) throw Error(ErrorCode::ParseError, "EnvSpec env_id '" + s.env_id + "' is not an identifier");
    return s;
}

json ExecResult::to_json() const {
    return {{"exit_status", exit_status}, {"stdout", stdout_text}, {"stderr", stderr_text}};
}

LocalDirectoryDriver::LocalDirectoryDriver(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "sandboxes");
    fs::create_directories(root_ / "snapshots");
}

fs::path LocalDirectoryDriver::sandbox_dir(const std::string& sandbox_id) const {
    return root_ / "sandboxes" / sandbox_id;
}

void LocalDirectoryDriver::create(const std::string& sandbox_id, const EnvSpec& spec, const fs::path& workspace) {
    fs::path dir = sandbox_dir(sandbox_id);
    fs::create_directories(dir);
    fs::path rel = fs::path(spec.workspace_mount).relative_path();
    if (rel.empty()) rel = "workspace";
    fs::path link = dir / rel;
    fs::create_directories(link.parent_path());
    fs::create_directory_symlink(fs::absolute(workspace), link);
    std::lock_guard lock(mu_);
    mounts_[sandbox_id] = Mount{rel, fs::absolute(workspace)};
}

ExecResult LocalDirectoryDriver::exec(const std::string& sandbox_id, const std::string& command, ProcessControl* control) {
    fs::path dir = sandbox_dir(sandbox_id);
    fs::path mount;
    {
        std::lock_guard lock(mu_);
        auto it = mounts_.find(sandbox_id);
        if (it == mounts_.end()) throw Error(ErrorCode::SandboxDead, "sandbox '" + sandbox_id + "' does not exist");
        mount = dir / it->second.relative;
    }
    ++exec_count_;
    return run_shell(command, dir, {{"HOME", dir.string()}, {"SANDBOX_ROOT", dir.string()}, {"WORKSPACE", mount.string()}},
                     control);
}

void LocalDirectoryDriver::copy_tree(const fs::path& from, const fs::path& to, const fs::path& skip) {
    fs::create_directories(to);
    for (auto it = fs::recursive_directory_iterator(from); it != fs::recursive_directory_iterator(); ++it) {
        fs::path rel = it->path().lexically_relative(from);
        if (!skip.empty() && rel == skip) {
            it.disable_recursion_pending();
            continue;
        }
        fs::path dest = to / rel;
        if (it->is_symlink()) {
            fs::copy_symlink(it->path(), dest);
        } else if (it->is_directory()) {
            fs::create_directories(dest);
        } else {
            fs::copy_file(it->path(), dest, fs::copy_options::overwrite_existing);
        }
    }
}

void LocalDirectoryDriver::snapshot(const std::string& sandbox_id, const std::string& key) {
    fs::path rel;
    {
        std::lock_guard lock(mu_);
        auto it = mounts_.find(sandbox_id);
        if (it == mounts_.end()) throw Error(ErrorCode::SandboxDead, "sandbox '" + sandbox_id + "' does not exist");
        rel = it->second.relative;
    }
    fs::path staging = root_ / "snapshots" / (key + ".tmp-" + random_token().substr(0, 8));
    copy_tree(sandbox_dir(sandbox_id), staging, rel);
    fs::path dest = root_ / "snapshots" / key;
    std::error_code ec;
    fs::remove_all(dest, ec);
    fs::rename(staging, dest);
}

bool LocalDirectoryDriver::has_snapshot(const std::string& key) const {
    return fs::is_directory(root_ / "snapshots" / key);
}

void LocalDirectoryDriver::restore(const std::string& sandbox_id, const std::string& key) {
    fs::path src = root_ / "snapshots" / key;
    if (!fs::is_directory(src)) throw Error(ErrorCode::UnknownSnapshot, "no snapshot '" + key + "'");
    copy_tree(src, sandbox_dir(sandbox_id), {});
}

void LocalDirectoryDriver::destroy(const std::string& sandbox_id) {
    {
        std::lock_guard lock(mu_);
        mounts_.erase(sandbox_id);
    }
    std::error_code ec;
    fs::remove_all(sandbox_dir(sandbox_id), ec);
}

struct SandboxRuntime::Sandbox {
    SandboxId id;
    EnvSpec spec;
    std::vector<std::string> history;  // guarded by the runtime mutex
    std::size_t active_jobs = 0;       // guarded by the runtime mutex
    bool alive = true;
    std::mutex run_mu;  // at most one invocation executes at a time
};

struct SandboxRuntime::Job {
    InvocationHandle handle;
    SandboxId sandbox;
    std::string command;
    mutable std::mutex mu;
    std::condition_variable cv;
    HandleState state = HandleState::pending;
    std::optional<ExecResult> result;
    std::int64_t started_at = 0;
    std::optional<std::int64_t> finished_at;
    ProcessControl control;
};

SandboxRuntime::SandboxRuntime(std::shared_ptr<SandboxDriver> driver, fs::path workspace)
    : driver_(std::move(driver)), workspace_(std::move(workspace)) {
    fs::create_directories(workspace_);
}

SandboxRuntime::~SandboxRuntime() {
    std::unique_lock lock(mu_);
    for (auto& [_, j] : jobs_) {
        std::lock_guard jl(j->mu);
        if (!is_terminal(j->state)) {
            j->state = HandleState::terminated;
            j->finished_at = monotonic_ms();
        }
        j->control.kill();
    }
    drained_.wait(lock, [this] { return outstanding_ == 0; });
    for (auto& [id, sb] : sandboxes_)
        if (sb->alive) driver_->destroy(id);
}

SnapshotKey SandboxRuntime::setup_key(const EnvSpec& spec) {
    std::string material = spec.env_id;
    for (const auto& c : spec.setup_commands) material += '\0' + c;
    return SnapshotKey{spec.env_id + "-" + sha256_hex(material).substr(0, 32)};
}

SandboxId SandboxRuntime::provision(const EnvSpec& spec, const std::optional<SnapshotKey>& from) {
    if (!driver_->available()) throw Error(ErrorCode::DriverUnavailable, "sandbox driver is not available");
    if (!is_identifier(spec.env_id)) throw Error(ErrorCode::ParseError, "invalid env_id '" + spec.env_id + "'");
    auto sb = std::make_shared<Sandbox>();
    sb->id = SandboxId{"sbx-" + random_token().substr(0, 16)};
    sb->spec = spec;
    const std::string& id = sb->id.value;

    SnapshotKey key = from ? *from : setup_key(spec);
    if (from && !driver_->has_snapshot(from->value))
        throw Error(ErrorCode::UnknownSnapshot, "no snapshot '" + from->value + "'");

    driver_->create(id, spec, workspace_);
    if (driver_->has_snapshot(key.value)) {
        driver_->restore(id, key.value);
        std::lock_guard lock(mu_);
        auto it = snapshot_history_.find(key.value);
        if (it != snapshot_history_.end()) sb->history = it->second;
        else if (from) sb->history = {"restore " + key.value};
        else sb->history = spec.setup_commands;
    } else {
        for (const auto& cmd : spec.setup_commands) {
            ExecResult r;
            try {
                ++setup_executions_;
                r = driver_->exec(id, cmd, nullptr);
            } catch (...) {
                driver_->destroy(id);
                throw;
            }
            if (r.exit_status != 0) {
                driver_->destroy(id);
                throw Error(ErrorCode::SetupFailed, "setup command `" + cmd + "` exited " +
                                                        std::to_string(r.exit_status) + ": " + r.stdout_text +
                                                        r.stderr_text);
            }
            sb->history.push_back(cmd);
        }
        driver_->snapshot(id, key.value);
        std::lock_guard lock(mu_);
        snapshot_history_[key.value] = sb->history;
    }
    std::lock_guard lock(mu_);
    sandboxes_[id] = sb;
    return sb->id;
}

void SandboxRuntime::run_job(std::shared_ptr<Sandbox> sandbox, std::shared_ptr<Job> job) {
    {
        std::lock_guard run_lock(sandbox->run_mu);
        bool skip = false;
        {
            std::lock_guard jl(job->mu);
            if (job->state == HandleState::terminated) skip = true;
            else job->state = HandleState::running;
        }
        ExecResult r;
        bool launched = true;
        if (!skip) {
            {
                std::lock_guard lock(mu_);
                sandbox->history.push_back(job->command);
            }
            try {
                r = driver_->exec(sandbox->id.value, job->command, &job->control);
            } catch (const std::exception& e) {
                launched = false;
                r.exit_status = -1;
                r.stderr_text = e.what();
            }
        }
        // the sandbox is idle again before anyone can observe the result
        {
            std::lock_guard lock(mu_);
            --sandbox->active_jobs;
        }
        if (!skip) {
            std::lock_guard jl(job->mu);
            if (job->state != HandleState::terminated) {
                job->state = launched && r.exit_status == 0 ? HandleState::done : HandleState::failed;
                job->result = std::move(r);
                job->finished_at = monotonic_ms();
            }
        }
    }
    job->cv.notify_all();
    std::lock_guard lock(mu_);
    if (--outstanding_ == 0) drained_.notify_all();
}

ExecOutcome SandboxRuntime::exec(const SandboxId& sandbox, const std::string& command, ExecLimits limits, ExecMode mode) {
    auto job = std::make_shared<Job>();
    job->handle = InvocationHandle{"inv-" + random_token()};
    job->sandbox = sandbox;
    job->command = command;
    job->started_at = monotonic_ms();
    std::shared_ptr<Sandbox> sb;
    {
        std::lock_guard lock(mu_);
        auto it = sandboxes_.find(sandbox.value);
        if (it == sandboxes_.end() || !it->second->alive)
            throw Error(ErrorCode::SandboxDead, "sandbox '" + sandbox.value + "' is not live");
        sb = it->second;
        ++sb->active_jobs;
        ++outstanding_;
        jobs_[job->handle.handle_id] = job;
    }
    std::thread([this, sb, job] { run_job(sb, job); }).detach();

    if (mode == ExecMode::background) return job->handle;

    std::unique_lock jl(job->mu);
    auto finished = [&] { return is_terminal(job->state); };
    if (limits.timeout_seconds > 0) {
        auto budget = std::chrono::duration<double>(limits.timeout_seconds);
        if (!job->cv.wait_for(jl, budget, finished)) return job->handle;  // offloaded
    } else {
        job->cv.wait(jl, finished);
    }
    ExecResult r = job->result.value_or(ExecResult{});
    jl.unlock();
    std::lock_guard lock(mu_);
    jobs_.erase(job->handle.handle_id);
    return r;
}

std::shared_ptr<SandboxRuntime::Job> SandboxRuntime::job(const InvocationHandle& handle) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(handle.handle_id);
    if (it == jobs_.end()) throw Error(ErrorCode::UnknownHandle, "unknown handle '" + handle.handle_id + "'");
    return it->second;
}

HandleState SandboxRuntime::poll(const InvocationHandle& handle) const {
    auto j = job(handle);
    std::lock_guard jl(j->mu);
    return j->state;
}

HandleInfo SandboxRuntime::info(const InvocationHandle& handle) const {
    auto j = job(handle);
    std::lock_guard jl(j->mu);
    return HandleInfo{j->state, j->sandbox, j->command, j->started_at, j->finished_at};
}

ExecResult SandboxRuntime::fetch_result(const InvocationHandle& handle) const {
    auto j = job(handle);
    std::lock_guard jl(j->mu);
    if (j->state != HandleState::done && j->state != HandleState::failed)
        throw Error(ErrorCode::NotFinished, "invocation '" + handle.handle_id + "' is " + std::string(to_string(j->state)));
    return *j->result;
}

void SandboxRuntime::terminate(const InvocationHandle& handle) {
    auto j = job(handle);
    {
        std::lock_guard jl(j->mu);
        if (is_terminal(j->state)) return;
        j->state = HandleState::terminated;
        j->finished_at = monotonic_ms();
    }
    j->control.kill();
    j->cv.notify_all();
}

SnapshotKey SandboxRuntime::commit_snapshot(const SandboxId& sandbox) {
    std::lock_guard lock(mu_);
    auto it = sandboxes_.find(sandbox.value);
    if (it == sandboxes_.end() || !it->second->alive)
        throw Error(ErrorCode::SandboxDead, "sandbox '" + sandbox.value + "' is not live");
    Sandbox& sb = *it->second;
    if (sb.active_jobs > 0) throw Error(ErrorCode::Busy, "sandbox '" + sandbox.value + "' has a running invocation");
    std::string material = sb.spec.env_id;
    for (const auto& c : sb.history) material += '\0' + c;
    SnapshotKey key{sb.spec.env_id + "-" + sha256_hex(material).substr(0, 32)};
    driver_->snapshot(sandbox.value, key.value);
    snapshot_history_[key.value] = sb.history;
    return key;
}

void SandboxRuntime::destroy(const SandboxId& sandbox) {
    std::lock_guard lock(mu_);
    auto it = sandboxes_.find(sandbox.value);
    if (it == sandboxes_.end() || !it->second->alive)
        throw Error(ErrorCode::SandboxDead, "sandbox '" + sandbox.value + "' is not live");
    if (it->second->active_jobs > 0) throw Error(ErrorCode::Busy, "sandbox '" + sandbox.value + "' has a running invocation");
    it->second->alive = false;
    driver_->destroy(sandbox.value);
}

}  // namespace forge
