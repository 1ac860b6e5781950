#include "forge/cli.hpp"

#include "forge/error.hpp"
#include "forge/memory_agent.hpp"

#include <CLI11.hpp>

#include <sstream>
#include <system_error>

namespace forge {

Cli::~Cli() {
    kernel_.reset();
    for (const auto& dir : scratch_dirs_) {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
}

Kernel& Cli::ensure_kernel(const Globals& g) {
    if (kernel_) return *kernel_;
    KernelConfig config;
    bool have_registry = false, have_workspace = false;
    if (!g.config.empty()) {
        config = load_config(g.config);
        have_registry = have_workspace = true;
    }
    auto scratch = [this](const char* what) {
        fs::path dir = fs::temp_directory_path() / ("forge-cli-" + std::string(what) + "-" + random_token().substr(0, 12));
        fs::create_directories(dir);
        scratch_dirs_.push_back(dir);
        return dir;
    };
    if (!g.registry.empty()) config.registry_root = g.registry, have_registry = true;
    if (!g.workspace.empty()) config.workspace = g.workspace, have_workspace = true;
    if (!g.ltm.empty()) config.ltm_path = fs::path(g.ltm);
    if (!g.sandbox_root.empty()) config.sandbox_root = fs::path(g.sandbox_root);
    if (!have_registry) config.registry_root = scratch("registry");
    if (!have_workspace) config.workspace = scratch("workspace");
    config.validate(true);
    kernel_ = std::make_unique<Kernel>(std::move(config));
    return *kernel_;
}

std::string Cli::register_transcript(const std::string& file, const std::string& preferred_id) {
    ModelGateway& gw = kernel_->gateway();
    std::string id = preferred_id;
    if (id.empty() || id == kInheritModel || gw.has_backend(id)) {
        do {
            id = "transcript-" + std::to_string(++transcript_counter_);
        } while (gw.has_backend(id));
    }
    gw.register_backend(id, std::make_shared<ScriptedBackend>(ScriptedTranscript::load(file)));
    return id;
}

CliOutcome Cli::dispatch(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    CLI::App app{"Agent kernel operator console", "forge"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "kernel config file (JSON)");
    app.add_option("--registry", g.registry, "tool registry root");
    app.add_option("--workspace", g.workspace, "shared workspace directory");
    app.add_option("--ltm", g.ltm, "long-term memory file");
    app.add_option("--sandbox-root", g.sandbox_root, "directory for sandbox state");

    std::string spec_file, task, transcript;
    std::size_t max_steps = 0;
    auto* run = app.add_subcommand("run", "run a root agent on a task");
    run->add_option("--spec", spec_file, "agent spec file (JSON)")->required();
    run->add_option("--task", task, "task text")->required();
    run->add_option("--transcript", transcript, "scripted model transcript");
    run->add_option("--max-steps", max_steps, "step limit")->check(CLI::PositiveNumber);

    auto* agents = app.add_subcommand("agents", "inspect the agent pool");
    agents->require_subcommand(1);
    std::string filter;
    auto* agents_list = agents->add_subcommand("list", "list pooled agents");
    agents_list->add_option("--filter", filter, "name or description substring");

    auto* tools = app.add_subcommand("tools", "inspect the tool registry");
    tools->require_subcommand(1);
    std::string keyword, tool_path;
    auto* tools_search = tools->add_subcommand("search", "search tools by keyword");
    tools_search->add_option("keyword", keyword, "keyword")->required();
    auto* tools_show = tools->add_subcommand("show", "show a tool manifest");
    tools_show->add_option("path", tool_path, "tool path")->required();

    auto* mem = app.add_subcommand("mem", "query and export memory");
    mem->require_subcommand(1);
    std::string query, backend, file;
    std::uint64_t run_id = 0;
    auto* mem_query = mem->add_subcommand("query", "ask the memory agent");
    mem_query->add_option("text", query, "query text")->required();
    mem_query->add_option("--transcript", transcript, "scripted model transcript");
    mem_query->add_option("--backend", backend, "registered backend id");
    auto* mem_stm = mem->add_subcommand("export-stm", "export a run's execution graph as JSON lines");
    mem_stm->add_option("run", run_id, "AgentRun node id")->required();
    mem_stm->add_option("file", file, "output file")->required();
    auto* mem_ltm = mem->add_subcommand("export-ltm", "export long-term memory as JSON lines");
    mem_ltm->add_option("file", file, "output file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return CliOutcome{code == 0 ? 0 : 2, out.str(), err.str()};
    } catch (const std::exception& e) {
        return CliOutcome{2, "", std::string("usage error: ") + e.what() + "\n"};
    }

    try {
        if (run->parsed()) {
            Kernel& k = ensure_kernel(g);
            json spec_json;
            try {
                spec_json = json::parse(read_file(spec_file));
            } catch (const json::parse_error& e) {
                throw Error(ErrorCode::ParseError, spec_file + ": " + e.what());
            }
            AgentSpec spec = AgentSpec::from_json(spec_json);
            if (!transcript.empty()) spec.model_name = register_transcript(transcript, spec.model_name);
            RunResult r = k.run_root(spec, task, RunLimits{max_steps ? max_steps : k.config().max_steps});
            out << r.final_text << "\n" << "run: " << r.run << "\n";
        } else if (agents_list->parsed()) {
            Kernel& k = ensure_kernel(g);
            auto entries = k.pool().list(filter);
            for (const auto& e : entries) out << e.spec.agent_name << "\t" << e.spec.description << "\n";
            out << "total: " << entries.size() << "\n";
        } else if (tools_search->parsed()) {
            Kernel& k = ensure_kernel(g);
            auto found = k.registry().search_tools(keyword);
            for (const auto& t : found) out << t.id.path << "\t" << t.description << "\n";
            out << "total: " << found.size() << "\n";
        } else if (tools_show->parsed()) {
            Kernel& k = ensure_kernel(g);
            out << k.registry().describe_tool(ToolId{tool_path}).to_json().dump(2) << "\n";
        } else if (mem_query->parsed()) {
            Kernel& k = ensure_kernel(g);
            std::string caller = backend;
            if (!transcript.empty()) caller = register_transcript(transcript, "");
            MemoryAnswer a = k.memory().handle_query(MemoryQuery{"cli", query}, caller);
            out << dump_lossy(a.to_json(), 2) << "\n";
        } else if (mem_stm->parsed()) {
            Kernel& k = ensure_kernel(g);
            std::string text = k.stm().export_run(run_id);
            write_file_atomic(file, text);
            out << "wrote " << file << "\n";
        } else if (mem_ltm->parsed()) {
            Kernel& k = ensure_kernel(g);
            write_file_atomic(file, k.ltm().export_jsonl());
            out << "wrote " << file << "\n";
        }
    } catch (const Error& e) {
        err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        return CliOutcome{1, out.str(), err.str()};
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return CliOutcome{1, out.str(), err.str()};
    }
    return CliOutcome{0, out.str(), err.str()};
}

}  // namespace forge
