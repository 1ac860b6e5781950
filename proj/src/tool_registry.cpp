#include "forge/tool_registry.hpp"

#include "forge/error.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace forge {

namespace {

constexpr const char* kManifestFile = "tool.json";
constexpr const char* kIndexFile = "INDEX.md";
constexpr const char* kEnvironmentsFile = "environments.json";

bool hidden(const fs::path& p) {
    auto name = p.filename().string();
    return !name.empty() && name[0] == '.';
}

std::vector<fs::path> subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && !hidden(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::string rel_path(const fs::path& root, const fs::path& p) {
    return fs::relative(p, root).generic_string();
}

}  // namespace

std::string_view to_string(ParamType t) noexcept {
    switch (t) {
        case ParamType::string: return "string";
        case ParamType::integer: return "integer";
        case ParamType::number: return "number";
        case ParamType::boolean: return "boolean";
        case ParamType::list: return "list";
        case ParamType::document: return "document";
    }
    return "";
}

std::optional<ParamType> parse_param_type(std::string_view s) noexcept {
    for (auto t : {ParamType::string, ParamType::integer, ParamType::number, ParamType::boolean, ParamType::list,
                   ParamType::document})
        if (to_string(t) == s) return t;
    return std::nullopt;
}

json ToolManifest::to_json() const {
    json params = json::array();
    for (const auto& p : interface)
        params.push_back({{"param_name", p.param_name},
                          {"param_type", to_string(p.param_type)},
                          {"required", p.required},
                          {"description", p.description}});
    return {{"name", name},
            {"description", description},
            {"interface", params},
            {"dependencies", dependencies},
            {"environment", environment},
            {"entrypoint", entrypoint},
            {"timeout_seconds", timeout_seconds},
            {"background_default", background_default}};
}

ToolManifest ToolManifest::from_json(const json& j) {
    std::vector<std::string> problems;
    ToolManifest m;
    if (!j.is_object()) throw Error(ErrorCode::InvalidManifest, "manifest: must be a JSON document");

    auto need_string = [&](const char* key, std::string& out) {
        if (!j.contains(key) || !j[key].is_string()) {
            problems.push_back(std::string(key) + ": required string");
            return;
        }
        out = j[key].get<std::string>();
    };
    need_string("name", m.name);
    if (j.contains("name") && j["name"].is_string() && !is_identifier(m.name))
        problems.push_back("name: '" + m.name + "' is not an identifier");
    need_string("description", m.description);
    need_string("entrypoint", m.entrypoint);
    if (j.contains("entrypoint") && j["entrypoint"].is_string()) {
        const fs::path ep(m.entrypoint);
        if (m.entrypoint.empty() || ep.has_parent_path() || ep.is_absolute() || m.entrypoint == "." ||
            m.entrypoint == ".." || m.entrypoint == kManifestFile || m.entrypoint == kIndexFile)
            problems.push_back("entrypoint: '" + m.entrypoint + "' must be a plain file name beside the manifest");
    }

    if (!j.contains("interface") || !j["interface"].is_array()) {
        problems.push_back("interface: required list");
    } else {
        std::set<std::string> seen;
        for (const auto& p : j["interface"]) {
            ParamSpec spec;
            if (!p.is_object() || !p.contains("param_name") || !p["param_name"].is_string()) {
                problems.push_back("interface: every parameter needs a string param_name");
                continue;
            }
            spec.param_name = p["param_name"].get<std::string>();
            if (!is_identifier(spec.param_name))
                problems.push_back("interface." + spec.param_name + ": param_name is not an identifier");
            if (!seen.insert(spec.param_name).second)
                problems.push_back("interface." + spec.param_name + ": duplicate param name '" + spec.param_name + "'");
            auto type = p.contains("param_type") && p["param_type"].is_string()
                            ? parse_param_type(p["param_type"].get<std::string>())
                            : std::nullopt;
            if (!type) problems.push_back("interface." + spec.param_name + ": param_type must be one of string, integer, number, boolean, list, document");
            else spec.param_type = *type;
            if (p.contains("required") && !p["required"].is_boolean())
                problems.push_back("interface." + spec.param_name + ": required must be a boolean");
            spec.required = p.value("required", false) == true;
            if (p.contains("description") && !p["description"].is_string())
                problems.push_back("interface." + spec.param_name + ": description must be a string");
            else spec.description = p.value("description", std::string());
            m.interface.push_back(std::move(spec));
        }
    }

    if (j.contains("dependencies")) {
        if (!j["dependencies"].is_array()) problems.push_back("dependencies: must be a list of strings");
        else
            for (const auto& d : j["dependencies"]) {
                if (!d.is_string()) problems.push_back("dependencies: must be a list of strings");
                else m.dependencies.push_back(d.get<std::string>());
            }
    }

    if (j.contains("environment")) {
        const json& env = j["environment"];
        if (env.is_string()) {
            if (!is_identifier(env.get<std::string>())) problems.push_back("environment: not an env_id");
        } else if (env.is_object()) {
            try {
                EnvSpec::from_json(env);
            } catch (const Error& e) {
                problems.push_back(std::string("environment: ") + e.what());
            }
        } else if (!env.is_null()) {
            problems.push_back("environment: must be null, an env_id, or an EnvSpec document");
        }
        m.environment = env;
    }

    if (!j.contains("timeout_seconds") || !j["timeout_seconds"].is_number()) {
        problems.push_back("timeout_seconds: required positive number");
    } else {
        m.timeout_seconds = j["timeout_seconds"].get<double>();
        if (!(m.timeout_seconds > 0)) problems.push_back("timeout_seconds: must be > 0");
    }
    if (j.contains("background_default")) {
        if (!j["background_default"].is_boolean()) problems.push_back("background_default: must be a boolean");
        else m.background_default = j["background_default"].get<bool>();
    }

    if (!problems.empty()) throw Error(ErrorCode::InvalidManifest, join(problems, "; "));
    return m;
}

json ToolManifest::parameter_schema() const {
    json props = json::object();
    json required = json::array();
    for (const auto& p : interface) {
        props[p.param_name] = {{"type", to_string(p.param_type)}, {"description", p.description}};
        if (p.required) required.push_back(p.param_name);
    }
    return {{"type", "document"}, {"properties", props}, {"required", required}};
}

json CategoryIndex::to_json() const {
    json j = {{"path", path}, {"summary", summary}};
    if (!child_categories.empty()) j["child_categories"] = child_categories;
    if (!tool_names.empty()) j["tool_names"] = tool_names;
    return j;
}

json ToolBrief::to_json() const {
    return {{"tool_id", id.path}, {"name", name}, {"description", description}};
}

json CategoryExpansion::to_json() const {
    json children = json::array();
    for (const auto& c : child_categories) children.push_back(c.to_json());
    json tools_json = json::array();
    for (const auto& t : tools) tools_json.push_back(t.to_json());
    return {{"path", category.path}, {"summary", category.summary}, {"child_categories", children}, {"tools", tools_json}};
}

ToolRegistry::ToolRegistry(fs::path root) : root_(std::move(root)) {}

fs::path ToolRegistry::resolve(const std::string& path) const {
    fs::path rel = fs::path(path).lexically_normal();
    if (rel.is_absolute()) throw Error(ErrorCode::UnknownCategory, "registry path '" + path + "' must be relative");
    for (const auto& part : rel)
        if (part == "..") throw Error(ErrorCode::UnknownCategory, "registry path '" + path + "' escapes the root");
    if (rel == ".") return root_;
    return root_ / rel;
}

std::string ToolRegistry::summary_of(const fs::path& dir) const {
    std::ifstream in(dir / kIndexFile);
    if (!in) throw Error(ErrorCode::MalformedRegistry, "directory '" + rel_path(root_, dir) + "' has no " + kIndexFile);
    std::string line;
    std::getline(in, line);
    auto start = line.find_first_not_of("# \t");
    line = start == std::string::npos ? std::string() : line.substr(start);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    return line;
}

json ToolRegistry::read_manifest_json(const fs::path& dir) const {
    ++manifest_reads_;
    try {
        return json::parse(read_file(dir / kManifestFile));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidManifest, "manifest: " + rel_path(root_, dir) + "/tool.json is not JSON: " + e.what());
    }
}

std::vector<CategoryIndex> ToolRegistry::load_root_index() const {
    if (!fs::is_directory(root_)) throw Error(ErrorCode::MalformedRegistry, "registry root '" + root_.string() + "' is not a directory");
    std::vector<CategoryIndex> out;
    for (const auto& dir : subdirs(root_)) {
        if (fs::exists(dir / kManifestFile)) continue;
        out.push_back(CategoryIndex{rel_path(root_, dir), summary_of(dir), {}, {}});
    }
    return out;
}

std::string ToolRegistry::render_root_index() const {
    json arr = json::array();
    for (const auto& c : load_root_index()) arr.push_back(c.to_json());
    return arr.dump();
}

bool ToolRegistry::is_tool(const std::string& path) const {
    try {
        return !path.empty() && fs::is_regular_file(resolve(path) / kManifestFile);
    } catch (const Error&) {
        return false;
    }
}

bool ToolRegistry::is_category(const std::string& path) const {
    try {
        fs::path dir = resolve(path);
        if (dir == root_) return fs::is_directory(root_);
        return fs::is_directory(dir) && !hidden(dir) && !fs::exists(dir / kManifestFile) && fs::exists(dir / kIndexFile);
    } catch (const Error&) {
        return false;
    }
}

CategoryExpansion ToolRegistry::expand_category(const std::string& path) const {
    if (!is_category(path)) throw Error(ErrorCode::UnknownCategory, "unknown category '" + path + "'");
    fs::path dir = resolve(path);
    CategoryExpansion ex;
    ex.category.path = dir == root_ ? "" : rel_path(root_, dir);
    ex.category.summary = dir == root_ ? (fs::exists(dir / kIndexFile) ? summary_of(dir) : "") : summary_of(dir);
    for (const auto& sub : subdirs(dir)) {
        if (fs::exists(sub / kManifestFile)) {
            json m = read_manifest_json(sub);
            ToolBrief b{ToolId{rel_path(root_, sub)}, m.value("name", sub.filename().string()),
                        m.value("description", std::string())};
            ex.category.tool_names.push_back(b.name);
            ex.tools.push_back(std::move(b));
        } else {
            CategoryIndex c{rel_path(root_, sub), summary_of(sub), {}, {}};
            ex.category.child_categories.push_back(sub.filename().string());
            ex.child_categories.push_back(std::move(c));
        }
    }
    return ex;
}

std::vector<ToolBrief> ToolRegistry::search_tools(const std::string& keyword) const {
    std::vector<ToolBrief> out;
    // Depth-first walk carrying whether an ancestor summary already matched.
    std::vector<std::pair<fs::path, bool>> stack;
    for (const auto& dir : subdirs(root_)) stack.emplace_back(dir, false);
    while (!stack.empty()) {
        auto [dir, inherited] = stack.back();
        stack.pop_back();
        if (fs::exists(dir / kManifestFile)) {
            json m = read_manifest_json(dir);
            std::string name = m.value("name", dir.filename().string());
            std::string desc = m.value("description", std::string());
            if (inherited || contains_ci(name, keyword) || contains_ci(desc, keyword))
                out.push_back(ToolBrief{ToolId{rel_path(root_, dir)}, name, desc});
            continue;
        }
        bool matched = inherited || contains_ci(summary_of(dir), keyword);
        for (const auto& sub : subdirs(dir)) stack.emplace_back(sub, matched);
    }
    std::sort(out.begin(), out.end(), [](const ToolBrief& a, const ToolBrief& b) { return a.id < b.id; });
    return out;
}

ToolManifest ToolRegistry::describe_tool(const ToolId& id) const {
    if (!is_tool(id.path)) throw Error(ErrorCode::UnknownTool, "unknown tool '" + id.path + "'");
    fs::path dir = resolve(id.path);
    ToolManifest m = ToolManifest::from_json(read_manifest_json(dir));
    std::vector<std::string> problems;
    if (m.name != dir.filename().string())
        problems.push_back("name: '" + m.name + "' does not match directory '" + dir.filename().string() + "'");
    if (!fs::is_regular_file(dir / m.entrypoint))
        problems.push_back("entrypoint: file '" + m.entrypoint + "' not found beside the manifest");
    if (!problems.empty()) throw Error(ErrorCode::InvalidManifest, join(problems, "; "));
    return m;
}

fs::path ToolRegistry::tool_dir(const ToolId& id) const { return resolve(id.path); }

std::vector<ToolId> ToolRegistry::tools_under(const std::string& category) const {
    if (!is_category(category)) throw Error(ErrorCode::UnknownCategory, "unknown category '" + category + "'");
    std::vector<ToolId> out;
    std::vector<fs::path> stack{resolve(category)};
    while (!stack.empty()) {
        fs::path dir = stack.back();
        stack.pop_back();
        for (const auto& sub : subdirs(dir)) {
            if (fs::exists(sub / kManifestFile)) out.push_back(ToolId{rel_path(root_, sub)});
            else stack.push_back(sub);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<EnvSpec> ToolRegistry::environment(const std::string& env_id) const {
    fs::path file = root_ / kEnvironmentsFile;
    if (!fs::exists(file)) return std::nullopt;
    json envs;
    try {
        envs = json::parse(read_file(file));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedRegistry, std::string("environments.json: ") + e.what());
    }
    if (!envs.is_array()) throw Error(ErrorCode::MalformedRegistry, "environments.json must be a list of EnvSpecs");
    for (const auto& e : envs)
        if (e.is_object() && e.value("env_id", std::string()) == env_id) return EnvSpec::from_json(e);
    return std::nullopt;
}

ToolId ToolRegistry::create_tool(const std::string& author, const std::string& target_category,
                                 const ToolManifest& manifest, const std::string& implementation) {
    // Round-trip through JSON so hand-built manifests get the same checks as files.
    ToolManifest m = ToolManifest::from_json(manifest.to_json());
    std::lock_guard lock(write_mu_);
    if (!is_category(target_category)) throw Error(ErrorCode::UnknownCategory, "unknown category '" + target_category + "'");
    fs::path category = resolve(target_category);
    fs::path dest = category / m.name;
    if (fs::exists(dest)) throw Error(ErrorCode::DuplicateTool, "tool '" + m.name + "' already exists in '" + target_category + "'");

    fs::path staging = category / ("." + m.name + ".tmp-" + random_token().substr(0, 8));
    try {
        fs::create_directory(staging);
        write_file_atomic(staging / kManifestFile, m.to_json().dump(2) + "\n");
        write_file_atomic(staging / m.entrypoint, implementation);
        fs::permissions(staging / m.entrypoint, fs::perms::owner_exec | fs::perms::group_exec, fs::perm_options::add);
        fs::rename(staging, dest);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
    std::string index;
    if (fs::exists(category / kIndexFile)) index = read_file(category / kIndexFile);
    if (!index.empty() && index.back() != '\n') index.push_back('\n');
    index += "- " + m.name + ": " + m.description + " (added by " + author + ")\n";
    write_file_atomic(category / kIndexFile, index);
    return ToolId{rel_path(root_, dest)};
}

void ToolRegistry::modify_tool(const std::string& /*author*/, const ToolId& id,
                               const std::optional<ToolManifest>& new_manifest,
                               const std::optional<std::string>& new_implementation) {
    if (!new_manifest && !new_implementation)
        throw Error(ErrorCode::InvalidManifest, "modify_tool needs a new manifest or implementation");
    std::lock_guard lock(write_mu_);
    ToolManifest current = describe_tool(id);
    fs::path dir = resolve(id.path);
    ToolManifest next = new_manifest ? ToolManifest::from_json(new_manifest->to_json()) : current;
    if (next.name != current.name)
        throw Error(ErrorCode::InvalidManifest, "name: cannot rename '" + current.name + "' in place");
    if (!new_implementation && !fs::is_regular_file(dir / next.entrypoint))
        throw Error(ErrorCode::InvalidManifest, "entrypoint: file '" + next.entrypoint + "' not found beside the manifest");

    int n = 1;
    while (fs::exists(dir / ("tool.json.bak." + std::to_string(n)))) ++n;
    const std::string suffix = ".bak." + std::to_string(n);
    fs::copy_file(dir / kManifestFile, dir / (std::string(kManifestFile) + suffix));
    fs::copy_file(dir / current.entrypoint, dir / (current.entrypoint + suffix));

    if (new_implementation) {
        write_file_atomic(dir / next.entrypoint, *new_implementation);
        fs::permissions(dir / next.entrypoint, fs::perms::owner_exec | fs::perms::group_exec, fs::perm_options::add);
    }
    if (new_manifest) write_file_atomic(dir / kManifestFile, next.to_json().dump(2) + "\n");
}

json ToolResult::to_json() const {
    return {{"exit_status", exit_status}, {"output", output}, {"truncated", truncated}};
}

ToolInvoker::ToolInvoker(const ToolRegistry& registry, SandboxRuntime& sandboxes, std::size_t truncation_limit)
    : registry_(registry), sandboxes_(sandboxes), truncation_limit_(truncation_limit) {}

void ToolInvoker::validate_args(const ToolManifest& manifest, const json& args) {
    if (!args.is_object()) throw Error(ErrorCode::ArgValidation, "args: must be a document");
    std::vector<std::string> problems;
    for (const auto& p : manifest.interface) {
        if (!args.contains(p.param_name)) {
            if (p.required) problems.push_back(p.param_name + ": required parameter missing");
            continue;
        }
        const json& v = args[p.param_name];
        bool ok = false;
        switch (p.param_type) {
            case ParamType::string: ok = v.is_string(); break;
            case ParamType::integer: ok = v.is_number_integer(); break;
            case ParamType::number: ok = v.is_number(); break;
            case ParamType::boolean: ok = v.is_boolean(); break;
            case ParamType::list: ok = v.is_array(); break;
            case ParamType::document: ok = v.is_object(); break;
        }
        if (!ok) problems.push_back(p.param_name + ": expected " + std::string(to_string(p.param_type)));
    }
    if (!problems.empty()) throw Error(ErrorCode::ArgValidation, join(problems, "; "));
}

ToolResult ToolInvoker::to_tool_result(const ExecResult& r, std::size_t limit) {
    ToolResult t;
    t.exit_status = r.exit_status;
    t.full_output = r.stdout_text + r.stderr_text;
    t.truncated = t.full_output.size() > limit;
    t.output = t.truncated ? utf8_prefix(t.full_output, limit) : t.full_output;
    return t;
}

SandboxId ToolInvoker::sandbox_for(const ToolManifest& manifest) {
    EnvSpec spec;
    if (manifest.environment.is_null()) {
        spec.env_id = "default";
    } else if (manifest.environment.is_string()) {
        auto found = registry_.environment(manifest.environment.get<std::string>());
        if (!found) throw Error(ErrorCode::UnknownEnvironment, "environment '" + manifest.environment.get<std::string>() + "' is not declared");
        spec = *found;
    } else {
        spec = EnvSpec::from_json(manifest.environment);
    }
    std::lock_guard lock(mu_);
    auto it = env_sandboxes_.find(spec.env_id);
    if (it != env_sandboxes_.end()) return it->second;
    SandboxId id = sandboxes_.provision(spec);
    env_sandboxes_.emplace(spec.env_id, id);
    return id;
}

InvokeOutcome ToolInvoker::invoke_tool(const std::set<std::string>& caller_scope, const ToolId& id, const json& args,
                                       ExecMode mode) {
    if (!caller_scope.contains(id.path))
        throw Error(ErrorCode::OutOfScope, "tool '" + id.path + "' is not in the caller's tool scope");
    ToolManifest m = registry_.describe_tool(id);
    validate_args(m, args);
    fs::path entry = fs::absolute(registry_.tool_dir(id) / m.entrypoint);
    std::string ext = entry.extension().string();
    std::string interpreter = ext == ".py" ? "python3 " : ext == ".sh" ? "sh " : "";
    std::string command = interpreter + shell_quote(entry.string()) + " " + shell_quote(args.dump());
    if (m.background_default) mode = ExecMode::background;
    ExecOutcome out = sandboxes_.exec(sandbox_for(m), command, ExecLimits{m.timeout_seconds}, mode);
    if (auto* handle = std::get_if<InvocationHandle>(&out)) return *handle;
    return to_tool_result(std::get<ExecResult>(out), truncation_limit_);
}

}  // namespace forge
