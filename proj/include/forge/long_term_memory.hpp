#pragma once

#include "forge/util.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace forge {

using LtmNodeId = std::uint64_t;
using LtmEdgeId = std::uint64_t;

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<double> embed(const std::string& text) const = 0;
};

// Hashes lower-cased alphanumeric word tokens into |dimension| buckets and
// L2-normalizes the count vector. Deterministic and offline.
class HashingEmbedder final : public EmbeddingProvider {
public:
    explicit HashingEmbedder(std::size_t dimension = 64) : dimension_(dimension) {}
    std::size_t dimension() const override { return dimension_; }
    std::vector<double> embed(const std::string& text) const override;

    static std::vector<std::string> tokenize(const std::string& text);
    static std::uint64_t fnv1a(std::string_view s) noexcept;

private:
    std::size_t dimension_;
};

struct LtmNode {
    LtmNodeId node_id = 0;
    std::string node_type;
    std::string label;
    std::string content;
    std::vector<double> embedding;

    json to_json(bool with_embedding = false) const;
};

struct LtmEdge {
    LtmEdgeId edge_id = 0;
    LtmNodeId src = 0;
    LtmNodeId dst = 0;
    std::string edge_type;

    json to_json() const;
};

struct SchemaCatalog {
    std::set<std::string> node_types;
    std::set<std::string> edge_types;

    static SchemaCatalog seeded();
    json to_json() const;
};

struct RetrievalQuery {
    std::string node_type;
    std::string query_label;
    std::size_t top_n = 5;
};

struct OneHop {
    std::vector<LtmNode> neighbors;
    std::vector<LtmEdge> edges;
};

struct SearchHit {
    LtmNode node;
    OneHop one_hop;
    double score = 0.0;

    json to_json() const;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// Target-level knowledge graph. Reads are concurrent; writes are serialized
// store-wide.
class LtmStore {
public:
    explicit LtmStore(std::shared_ptr<const EmbeddingProvider> provider);

    LtmNodeId create_node(const std::string& node_type, const std::string& label, const std::string& content);
    LtmEdgeId create_edge(LtmNodeId src, LtmNodeId dst, const std::string& edge_type);
    SchemaCatalog list_schema() const;
    std::vector<SearchHit> search_nodes(const RetrievalQuery& query) const;
    std::vector<LtmNode> grep_nodes(const std::string& pattern) const;
    void update_node(LtmNodeId id, const std::optional<std::string>& new_label,
                     const std::optional<std::string>& new_content);
    void delete_node(LtmNodeId id);
    void delete_edge(LtmEdgeId id);

    std::optional<LtmNode> node(LtmNodeId id) const;
    std::vector<LtmNode> nodes() const;
    std::vector<LtmEdge> edges() const;
    std::size_t node_count() const;
    std::size_t edge_count() const;
    const EmbeddingProvider& provider() const { return *provider_; }

    // JSON-lines: nodes, then edges, then one catalog record.
    std::string export_jsonl() const;
    void import_jsonl(const std::string& text);
    void save(const fs::path& file) const;
    void load(const fs::path& file);

private:
    std::vector<double> embed_normalized(const std::string& label) const;
    OneHop one_hop_locked(LtmNodeId id) const;

    std::shared_ptr<const EmbeddingProvider> provider_;
    mutable std::shared_mutex mu_;
    std::map<LtmNodeId, LtmNode> nodes_;
    std::map<LtmEdgeId, LtmEdge> edges_;
    SchemaCatalog catalog_;
    LtmNodeId next_node_ = 1;
    LtmEdgeId next_edge_ = 1;
};

}  // namespace forge
