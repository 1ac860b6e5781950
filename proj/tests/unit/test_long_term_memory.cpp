#include "forge/error.hpp"
#include "forge/long_term_memory.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

using namespace forge;
using namespace forge::test;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected forge::Error");
    return ErrorCode::Io;
}

double norm(const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    return std::sqrt(n);
}

}  // namespace

TEST_CASE("hashing embedder is deterministic and unit length") {
    HashingEmbedder e;
    CHECK(e.embed("Missing PyYAML dependency") == e.embed("missing pyyaml DEPENDENCY"));
    CHECK(std::abs(norm(e.embed("collection validation")) - 1.0) < 1e-12);
    CHECK(std::abs(norm(e.embed("!!!")) - 1.0) < 1e-12);
    CHECK(HashingEmbedder::tokenize("Search for 'validate|keyword'") ==
          std::vector<std::string>{"search", "for", "validate", "keyword"});
    CHECK(HashingEmbedder::fnv1a("") == 14695981039346656037ULL);
    CHECK(HashingEmbedder::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("create, update and delete nodes with their edges") {
    LtmStore store(std::make_shared<HashingEmbedder>());
    auto a = store.create_node("file", "/app/lib/ansible/galaxy/collection.py", "validate_collection_name");
    auto b = store.create_node("function", "validate_collection_name", "checks namespace.collection");
    auto e = store.create_edge(a, b, "contains");
    CHECK(store.edge_count() == 1);
    CHECK(code_of([&] { store.create_edge(a, b, "contains"); }) == ErrorCode::DuplicateEdge);
    CHECK(code_of([&] { store.create_edge(a, 99, "contains"); }) == ErrorCode::UnknownNode);
    CHECK(code_of([&] { store.create_node("file", "", "x"); }) == ErrorCode::EmptyLabel);
    CHECK(code_of([&] { store.update_node(a, std::string(""), std::nullopt); }) == ErrorCode::EmptyLabel);
    CHECK(code_of([&] { store.update_node(a, std::nullopt, std::nullopt); }) == ErrorCode::InvalidQuery);

    store.update_node(b, std::string("validate_collection_name keyword check"), std::string("rejects keywords"));
    CHECK(store.node(b)->content == "rejects keywords");
    auto expected = HashingEmbedder().embed("validate_collection_name keyword check");
    auto stored = store.node(b)->embedding;
    REQUIRE(stored.size() == expected.size());
    for (std::size_t i = 0; i < stored.size(); ++i) CHECK(std::abs(stored[i] - expected[i]) < 1e-12);

    auto hits = store.search_nodes({"file", "galaxy collection", 5});
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].one_hop.neighbors.size() == 1);
    CHECK(hits[0].one_hop.edges.at(0).edge_id == e);

    store.delete_node(b);
    CHECK(store.edge_count() == 0);
    CHECK(store.search_nodes({"file", "galaxy collection", 5})[0].one_hop.edges.empty());
    CHECK(code_of([&] { store.delete_node(b); }) == ErrorCode::UnknownNode);
}

TEST_CASE("catalog is seeded and only grows") {
    LtmStore store(std::make_shared<HashingEmbedder>());
    auto before = store.list_schema();
    CHECK(before.node_types.contains("code_understanding"));
    CHECK(before.node_types.contains("search_result"));
    CHECK(before.node_types.contains("error"));
    auto id = store.create_node("exploit_note", "heap layout", "");
    store.delete_node(id);
    auto after = store.list_schema();
    CHECK(after.node_types.contains("exploit_note"));
    for (const auto& t : before.node_types) CHECK(after.node_types.contains(t));
    CHECK(code_of([&] { store.search_nodes({"never_seen", "x", 3}); }) == ErrorCode::UnknownNodeType);
    CHECK(code_of([&] { store.search_nodes({"file", "x", 0}); }) == ErrorCode::InvalidQuery);
}

TEST_CASE("grep uses extended regular expressions over labels") {
    LtmStore store(std::make_shared<HashingEmbedder>());
    store.create_node("search_result", "Search for 'validate|keyword'", "");
    store.create_node("error", "Missing PyYAML dependency for Ansible collection validation", "");
    store.create_node("file", "/app/lib/ansible/galaxy/data/collections_galaxy_meta.yml", "");
    CHECK(store.grep_nodes("PyYAML|galaxy").size() == 2);
    CHECK(store.grep_nodes("^Search").size() == 1);
    CHECK(store.grep_nodes("nothing here").empty());
    CHECK(code_of([&] { store.grep_nodes("(unclosed"); }) == ErrorCode::MalformedPattern);
}

TEST_CASE("search ranks by score then label then id") {
    auto embedder = std::make_shared<ProjectionEmbedder>(8, 3);
    LtmStore store(embedder);
    std::vector<std::string> labels = {"b", "a", "c", "d", "e", "f", "a"};
    for (const auto& l : labels) store.create_node("concept", l, "");
    for (const std::string q : {"a", "b", "zz", "q"}) {
        auto got = store.search_nodes({"concept", q, 10});
        auto want = brute_force_top_k(store.nodes(), *embedder, "concept", q, 10);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].node.node_id == want[i].node_id);
    }
}

TEST_CASE("export and import reproduce the store") {
    TempDir dir("ltm");
    LtmStore store(std::make_shared<HashingEmbedder>());
    auto a = store.create_node("error", "Missing PyYAML dependency", "ModuleNotFoundError: No module named 'yaml'");
    auto b = store.create_node("file", "collection.py", "");
    store.create_edge(a, b, "caused_by");
    store.create_node("custom_kind", "x", "y");
    store.save(dir / "ltm.jsonl");

    LtmStore copy(std::make_shared<HashingEmbedder>());
    copy.load(dir / "ltm.jsonl");
    CHECK(copy.export_jsonl() == store.export_jsonl());
    CHECK(copy.list_schema().node_types.contains("custom_kind"));
    auto c = copy.create_node("file", "next", "");
    CHECK(c == 4);
    CHECK(code_of([&] { copy.import_jsonl("{\"record\":\"edge\",\"edge_id\":1,\"src\":1,\"dst\":9,\"edge_type\":\"x\"}\n"); }) ==
          ErrorCode::ParseError);
    CHECK(code_of([&] { copy.import_jsonl("not json\n"); }) == ErrorCode::ParseError);
    CHECK(copy.node_count() == 4);
}

TEST_CASE("provider failures are reported") {
    class Broken final : public EmbeddingProvider {
    public:
        std::size_t dimension() const override { return 4; }
        std::vector<double> embed(const std::string&) const override { return {0, 0, 0, 0}; }
    };
    LtmStore store(std::make_shared<Broken>());
    CHECK(code_of([&] { store.create_node("file", "x", ""); }) == ErrorCode::ProviderFailure);
}

TEST_CASE("random stores agree with the brute-force ranking") {
    auto embedder = std::make_shared<ProjectionEmbedder>(16, 40);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        LtmStore store(embedder);
        const std::vector<std::string> types = {"file", "function", "error"};
        std::size_t n = 20 + rng() % 60;
        for (std::size_t i = 0; i < n; ++i) store.create_node(types[rng() % 3], random_word(rng, 1, 3), "");
        for (int q = 0; q < 20; ++q) {
            std::string type = types[rng() % 3];
            std::string query = random_word(rng, 1, 3);
            for (std::size_t k : {1, 3, 10}) {
                auto got = store.search_nodes({type, query, k});
                auto want = brute_force_top_k(store.nodes(), *embedder, type, query, k);
                REQUIRE(got.size() == want.size());
                for (std::size_t i = 0; i < got.size(); ++i) {
                    CHECK(got[i].node.node_id == want[i].node_id);
                    CHECK(std::abs(got[i].score - want[i].score) < 1e-9);
                }
            }
        }
        for (const auto& node : store.nodes()) CHECK(std::abs(norm(node.embedding) - 1.0) < 1e-9);
    }
}
