#pragma once

#include "forge/kernel.hpp"
#include "forge/long_term_memory.hpp"
#include "forge/model_gateway.hpp"
#include "forge/util.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace forge::test {

fs::path fixture_dir();

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

ScriptedStep text_step(const std::string& text, std::optional<std::string> match = std::nullopt);
ScriptedStep call_step(const std::string& tool, json args = json::object(),
                       std::optional<std::string> match = std::nullopt);
std::shared_ptr<ScriptedBackend> scripted(std::vector<ScriptedStep> steps);

// Workspace and sandbox root live under |base|.
KernelConfig make_config(const fs::path& registry, const fs::path& base);

void write_index(const fs::path& dir, const std::string& summary);
void write_tool(const fs::path& category_dir, const std::string& name, const std::string& description,
                const std::string& script, json interface = json::array(), double timeout_seconds = 30.0);
void copy_tree(const fs::path& from, const fs::path& to);

// Relative path plus content hash of every entry, sorted.
std::string tree_fingerprint(const fs::path& dir);

// Answers every request with the same text; safe under concurrent use.
class FixedTextBackend final : public ModelBackend {
public:
    explicit FixedTextBackend(std::string text = "ok") : text_(std::move(text)) {}
    ModelResponse complete(const ModelRequest&) override {
        ++calls_;
        return ModelResponse::make_text(text_);
    }
    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::string text_;
    std::atomic<std::size_t> calls_{0};
};

// Forwards to an inner backend and runs a check before each completion.
class CheckingBackend final : public ModelBackend {
public:
    CheckingBackend(std::shared_ptr<ModelBackend> inner, std::function<void(const ModelRequest&)> check)
        : inner_(std::move(inner)), check_(std::move(check)) {}
    ModelResponse complete(const ModelRequest& r) override {
        check_(r);
        return inner_->complete(r);
    }

private:
    std::shared_ptr<ModelBackend> inner_;
    std::function<void(const ModelRequest&)> check_;
};

// Issues |call| |repeat| times, then answers "done". Summarization requests
// get a short fixed summary.
class LoopBackend final : public ModelBackend {
public:
    LoopBackend(ToolCall call, std::size_t repeat) : call_(std::move(call)), repeat_(repeat) {}
    ModelResponse complete(const ModelRequest& r) override {
        std::lock_guard lock(mu_);
        if (r.task == "Summarize the history so far.") {
            ++summaries_;
            return ModelResponse::make_text("summary of " + std::to_string(r.history.size()) + " events");
        }
        if (issued_ < repeat_) {
            ++issued_;
            return ModelResponse::make_call(call_.tool_name, call_.args);
        }
        return ModelResponse::make_text("done");
    }
    std::size_t summaries() const {
        std::lock_guard lock(mu_);
        return summaries_;
    }

private:
    ToolCall call_;
    std::size_t repeat_;
    mutable std::mutex mu_;
    std::size_t issued_ = 0;
    std::size_t summaries_ = 0;
};

using Rng = std::mt19937_64;

// Maps each label to one of |buckets| pseudo-random directions with a
// non-unit length, so distinct labels can tie exactly.
class ProjectionEmbedder final : public EmbeddingProvider {
public:
    ProjectionEmbedder(std::size_t dimension, std::uint64_t buckets) : dimension_(dimension), buckets_(buckets) {}
    std::size_t dimension() const override { return dimension_; }
    std::vector<double> embed(const std::string& text) const override;

private:
    std::size_t dimension_;
    std::uint64_t buckets_;
};

struct RankedNode {
    LtmNodeId node_id = 0;
    double score = 0.0;
};

// Scores every node of |node_type| from its label, sorts by score desc, label
// asc, id asc and keeps |k|.
std::vector<RankedNode> brute_force_top_k(const std::vector<LtmNode>& nodes, const EmbeddingProvider& embedder,
                                          const std::string& node_type, const std::string& query, std::size_t k);

std::string random_word(Rng& rng, std::size_t min_len = 3, std::size_t max_len = 8);

}  // namespace forge::test
