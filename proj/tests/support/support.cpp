#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <system_error>

namespace forge::test {

fs::path fixture_dir() {
    return fs::path(FORGE_FIXTURE_DIR);
}

TempDir::TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("forge-test-" + tag + "-" + random_token().substr(0, 12));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

ScriptedStep text_step(const std::string& text, std::optional<std::string> match) {
    return ScriptedStep{std::move(match), ModelResponse::make_text(text)};
}

ScriptedStep call_step(const std::string& tool, json args, std::optional<std::string> match) {
    return ScriptedStep{std::move(match), ModelResponse::make_call(tool, std::move(args))};
}

std::shared_ptr<ScriptedBackend> scripted(std::vector<ScriptedStep> steps) {
    return std::make_shared<ScriptedBackend>(ScriptedTranscript{std::move(steps)});
}

KernelConfig make_config(const fs::path& registry, const fs::path& base) {
    KernelConfig c;
    c.registry_root = registry;
    c.workspace = base / "workspace";
    c.sandbox_root = base / "sandboxes";
    fs::create_directories(c.workspace);
    return c;
}

void write_index(const fs::path& dir, const std::string& summary) {
    fs::create_directories(dir);
    std::ofstream(dir / "INDEX.md") << "# " << summary << "\n";
}

void write_tool(const fs::path& category_dir, const std::string& name, const std::string& description,
                const std::string& script, json interface, double timeout_seconds) {
    fs::path dir = category_dir / name;
    fs::create_directories(dir);
    json m = {{"name", name},         {"description", description},         {"interface", interface},
              {"dependencies", json::array()}, {"environment", nullptr},    {"entrypoint", "run.sh"},
              {"timeout_seconds", timeout_seconds}, {"background_default", false}};
    std::ofstream(dir / "tool.json") << m.dump(2) << "\n";
    std::ofstream(dir / "run.sh") << "#!/bin/sh\n" << script << "\n";
}

void copy_tree(const fs::path& from, const fs::path& to) {
    fs::create_directories(to);
    fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

std::string tree_fingerprint(const fs::path& dir) {
    std::vector<std::string> lines;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        std::string rel = e.path().lexically_relative(dir).string();
        if (e.is_regular_file()) lines.push_back(rel + " " + sha256_hex(read_file(e.path())));
        else lines.push_back(rel + "/");
    }
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::string random_word(Rng& rng, std::size_t min_len, std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(min_len, max_len);
    std::uniform_int_distribution<int> ch('a', 'z');
    std::string s(len(rng), 'a');
    for (auto& c : s) c = static_cast<char>(ch(rng));
    return s;
}

std::vector<double> ProjectionEmbedder::embed(const std::string& text) const {
    std::uint64_t h = 0;
    for (unsigned char c : text) h = h * 131 + c;
    std::uint64_t bucket = h % buckets_;
    Rng rng(bucket * 7919 + 17);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dimension_);
    for (auto& x : v) x = normal(rng) * static_cast<double>(1 + bucket % 5);
    return v;
}

std::vector<RankedNode> brute_force_top_k(const std::vector<LtmNode>& nodes, const EmbeddingProvider& embedder,
                                          const std::string& node_type, const std::string& query, std::size_t k) {
    auto unit = [](std::vector<double> v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        return v;
    };
    const auto q = unit(embedder.embed(query));
    struct Row {
        double score;
        std::string label;
        LtmNodeId id;
    };
    std::vector<Row> rows;
    for (const auto& n : nodes) {
        if (n.node_type != node_type) continue;
        const auto v = unit(embedder.embed(n.label));
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * q[i];
        rows.push_back(Row{dot, n.label, n.node_id});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.label != b.label) return a.label < b.label;
        return a.id < b.id;
    });
    std::vector<RankedNode> out;
    for (std::size_t i = 0; i < rows.size() && i < k; ++i) out.push_back(RankedNode{rows[i].id, rows[i].score});
    return out;
}

}  // namespace forge::test
