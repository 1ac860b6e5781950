#include "forge/long_term_memory.hpp"

#include "forge/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <mutex>
#include <regex>
#include <sstream>

namespace forge {

std::uint64_t HashingEmbedder::fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<std::string> HashingEmbedder::tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

std::vector<double> HashingEmbedder::embed(const std::string& text) const {
    std::vector<double> v(dimension_, 0.0);
    auto tokens = tokenize(text);
    // Labels made only of punctuation still need a direction.
    if (tokens.empty()) tokens.push_back(text);
    for (const auto& t : tokens) v[fnv1a(t) % dimension_] += 1.0;
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

json LtmNode::to_json(bool with_embedding) const {
    json j = {{"node_id", node_id}, {"node_type", node_type}, {"label", label}, {"content", content}};
    if (with_embedding) j["embedding"] = embedding;
    return j;
}

json LtmEdge::to_json() const {
    return {{"edge_id", edge_id}, {"src", src}, {"dst", dst}, {"edge_type", edge_type}};
}

SchemaCatalog SchemaCatalog::seeded() {
    SchemaCatalog c;
    c.node_types = {"file",         "function",      "class", "module", "code_understanding",
                    "search_result", "error",        "query_answer", "concept"};
    c.edge_types = {"contains", "calls", "imports", "relates_to", "answers", "caused_by"};
    return c;
}

json SchemaCatalog::to_json() const {
    return {{"node_types", node_types}, {"edge_types", edge_types}};
}

json SearchHit::to_json() const {
    json neighbors = json::array();
    for (const auto& n : one_hop.neighbors) neighbors.push_back(n.to_json());
    json edges = json::array();
    for (const auto& e : one_hop.edges) edges.push_back(e.to_json());
    return {{"node", node.to_json()}, {"one_hop", {{"neighbors", neighbors}, {"edges", edges}}}, {"score", score}};
}

LtmStore::LtmStore(std::shared_ptr<const EmbeddingProvider> provider)
    : provider_(std::move(provider)), catalog_(SchemaCatalog::seeded()) {}

std::vector<double> LtmStore::embed_normalized(const std::string& label) const {
    std::vector<double> v;
    try {
        v = provider_->embed(label);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ProviderFailure, std::string("embedding provider failed: ") + e.what());
    }
    if (v.size() != provider_->dimension())
        throw Error(ErrorCode::ProviderFailure, "embedding has dimension " + std::to_string(v.size()) +
                                                    ", provider declares " + std::to_string(provider_->dimension()));
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw Error(ErrorCode::ProviderFailure, "embedding has no direction");
    for (double& x : v) x /= norm;
    return v;
}

LtmNodeId LtmStore::create_node(const std::string& node_type, const std::string& label, const std::string& content) {
    if (label.empty()) throw Error(ErrorCode::EmptyLabel, "node label must be nonempty");
    if (!is_identifier(node_type)) throw Error(ErrorCode::InvalidQuery, "invalid node type '" + node_type + "'");
    auto embedding = embed_normalized(label);
    std::unique_lock lock(mu_);
    LtmNodeId id = next_node_++;
    nodes_.emplace(id, LtmNode{id, node_type, label, content, std::move(embedding)});
    catalog_.node_types.insert(node_type);
    return id;
}

LtmEdgeId LtmStore::create_edge(LtmNodeId src, LtmNodeId dst, const std::string& edge_type) {
    if (!is_identifier(edge_type)) throw Error(ErrorCode::InvalidQuery, "invalid edge type '" + edge_type + "'");
    std::unique_lock lock(mu_);
    if (!nodes_.contains(src)) throw Error(ErrorCode::UnknownNode, "unknown node " + std::to_string(src));
    if (!nodes_.contains(dst)) throw Error(ErrorCode::UnknownNode, "unknown node " + std::to_string(dst));
    for (const auto& [_, e] : edges_)
        if (e.src == src && e.dst == dst && e.edge_type == edge_type)
            throw Error(ErrorCode::DuplicateEdge, "edge " + std::to_string(src) + " -" + edge_type + "-> " +
                                                      std::to_string(dst) + " already exists");
    LtmEdgeId id = next_edge_++;
    edges_.emplace(id, LtmEdge{id, src, dst, edge_type});
    catalog_.edge_types.insert(edge_type);
    return id;
}

SchemaCatalog LtmStore::list_schema() const {
    std::shared_lock lock(mu_);
    return catalog_;
}

OneHop LtmStore::one_hop_locked(LtmNodeId id) const {
    OneHop hop;
    std::set<LtmNodeId> seen;
    for (const auto& [_, e] : edges_) {
        if (e.src != id && e.dst != id) continue;
        hop.edges.push_back(e);
        LtmNodeId other = e.src == id ? e.dst : e.src;
        if (other != id && seen.insert(other).second) hop.neighbors.push_back(nodes_.at(other));
    }
    std::sort(hop.neighbors.begin(), hop.neighbors.end(),
              [](const LtmNode& a, const LtmNode& b) { return a.node_id < b.node_id; });
    return hop;
}

std::vector<SearchHit> LtmStore::search_nodes(const RetrievalQuery& query) const {
    if (query.top_n < 1) throw Error(ErrorCode::InvalidQuery, "top_n must be at least 1");
    {
        std::shared_lock lock(mu_);
        if (!catalog_.node_types.contains(query.node_type))
            throw Error(ErrorCode::UnknownNodeType, "node type '" + query.node_type + "' is not in the catalog");
    }
    auto q = embed_normalized(query.query_label);
    std::shared_lock lock(mu_);
    std::vector<SearchHit> hits;
    for (const auto& [_, n] : nodes_)
        if (n.node_type == query.node_type) hits.push_back(SearchHit{n, {}, cosine(q, n.embedding)});
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.node.label != b.node.label) return a.node.label < b.node.label;
        return a.node.node_id < b.node.node_id;
    });
    if (hits.size() > query.top_n) hits.resize(query.top_n);
    for (auto& h : hits) h.one_hop = one_hop_locked(h.node.node_id);
    return hits;
}

std::vector<LtmNode> LtmStore::grep_nodes(const std::string& pattern) const {
    std::regex re;
    try {
        re = std::regex(pattern, std::regex::egrep);
    } catch (const std::regex_error& e) {
        throw Error(ErrorCode::MalformedPattern, "bad pattern '" + pattern + "': " + e.what());
    }
    std::shared_lock lock(mu_);
    std::vector<LtmNode> out;
    for (const auto& [_, n] : nodes_)
        if (std::regex_search(n.label, re)) out.push_back(n);
    return out;
}

void LtmStore::update_node(LtmNodeId id, const std::optional<std::string>& new_label,
                           const std::optional<std::string>& new_content) {
    if (!new_label && !new_content) throw Error(ErrorCode::InvalidQuery, "update needs a new label or content");
    if (new_label && new_label->empty()) throw Error(ErrorCode::EmptyLabel, "node label must be nonempty");
    std::optional<std::vector<double>> embedding;
    if (new_label) embedding = embed_normalized(*new_label);
    std::unique_lock lock(mu_);
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(ErrorCode::UnknownNode, "unknown node " + std::to_string(id));
    if (new_label) {
        it->second.label = *new_label;
        it->second.embedding = std::move(*embedding);
    }
    if (new_content) it->second.content = *new_content;
}

void LtmStore::delete_node(LtmNodeId id) {
    std::unique_lock lock(mu_);
    if (!nodes_.erase(id)) throw Error(ErrorCode::UnknownNode, "unknown node " + std::to_string(id));
    std::erase_if(edges_, [id](const auto& kv) { return kv.second.src == id || kv.second.dst == id; });
}

void LtmStore::delete_edge(LtmEdgeId id) {
    std::unique_lock lock(mu_);
    if (!edges_.erase(id)) throw Error(ErrorCode::UnknownNode, "unknown edge " + std::to_string(id));
}

std::optional<LtmNode> LtmStore::node(LtmNodeId id) const {
    std::shared_lock lock(mu_);
    auto it = nodes_.find(id);
    if (it == nodes_.end()) return std::nullopt;
    return it->second;
}

std::vector<LtmNode> LtmStore::nodes() const {
    std::shared_lock lock(mu_);
    std::vector<LtmNode> out;
    for (const auto& [_, n] : nodes_) out.push_back(n);
    return out;
}

std::vector<LtmEdge> LtmStore::edges() const {
    std::shared_lock lock(mu_);
    std::vector<LtmEdge> out;
    for (const auto& [_, e] : edges_) out.push_back(e);
    return out;
}

std::size_t LtmStore::node_count() const {
    std::shared_lock lock(mu_);
    return nodes_.size();
}

std::size_t LtmStore::edge_count() const {
    std::shared_lock lock(mu_);
    return edges_.size();
}

std::string LtmStore::export_jsonl() const {
    std::shared_lock lock(mu_);
    std::string out;
    for (const auto& [_, n] : nodes_) {
        json j = n.to_json(true);
        j["record"] = "node";
        out += dump_lossy(j) + '\n';
    }
    for (const auto& [_, e] : edges_) {
        json j = e.to_json();
        j["record"] = "edge";
        out += dump_lossy(j) + '\n';
    }
    json cat = catalog_.to_json();
    cat["record"] = "catalog";
    out += cat.dump() + '\n';
    return out;
}

void LtmStore::import_jsonl(const std::string& text) {
    std::map<LtmNodeId, LtmNode> nodes;
    std::map<LtmEdgeId, LtmEdge> edges;
    SchemaCatalog catalog = SchemaCatalog::seeded();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    try {
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j = json::parse(line);
            const std::string record = j.at("record");
            if (record == "node") {
                LtmNode n{j.at("node_id"), j.at("node_type"), j.at("label"), j.at("content"),
                          j.at("embedding").get<std::vector<double>>()};
                if (n.embedding.size() != provider_->dimension())
                    throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": embedding dimension mismatch");
                catalog.node_types.insert(n.node_type);
                nodes.emplace(n.node_id, std::move(n));
            } else if (record == "edge") {
                LtmEdge e{j.at("edge_id"), j.at("src"), j.at("dst"), j.at("edge_type")};
                if (!nodes.contains(e.src) || !nodes.contains(e.dst))
                    throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": edge references a missing node");
                catalog.edge_types.insert(e.edge_type);
                edges.emplace(e.edge_id, std::move(e));
            } else if (record == "catalog") {
                for (const auto& t : j.at("node_types")) catalog.node_types.insert(t.get<std::string>());
                for (const auto& t : j.at("edge_types")) catalog.edge_types.insert(t.get<std::string>());
            } else {
                throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": unknown record '" + record + "'");
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    }
    std::unique_lock lock(mu_);
    nodes_ = std::move(nodes);
    edges_ = std::move(edges);
    catalog_ = std::move(catalog);
    next_node_ = nodes_.empty() ? 1 : nodes_.rbegin()->first + 1;
    next_edge_ = edges_.empty() ? 1 : edges_.rbegin()->first + 1;
}

void LtmStore::save(const fs::path& file) const {
    write_file_atomic(file, export_jsonl());
}

void LtmStore::load(const fs::path& file) {
    import_jsonl(read_file(file));
}

}  // namespace forge
