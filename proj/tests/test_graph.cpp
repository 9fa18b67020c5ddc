#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "mllmrec/corpus.hpp"
#include "mllmrec/errors.hpp"
#include "mllmrec/graph.hpp"
#include "mllmrec/reference.hpp"
#include "mllmrec/rng.hpp"

using namespace mllmrec;

namespace {

// exact nonzero-pattern match, weights within tol
void check_matches_dense(const graph::SparseGraph& g, const std::vector<double>& dense,
                         double tol) {
    std::vector<double> got = ref::graph_to_dense(g);
    REQUIRE(got.size() == dense.size());
    for (size_t i = 0; i < dense.size(); ++i) {
        CHECK((got[i] != 0.0) == (dense[i] != 0.0));
        CHECK(std::fabs(got[i] - dense[i]) <= tol);
    }
}

corpus::InteractionMatrix matrix_of(const std::vector<std::pair<std::string, std::string>>& pairs) {
    corpus::RawInteractions raw;
    for (const auto& [u, i] : pairs) raw.records.push_back({u, i, std::nullopt});
    return corpus::index(raw);
}

embed::EmbeddingMatrix rows_of(const std::vector<std::vector<double>>& rows) {
    embed::EmbeddingMatrix m(rows.size(), rows[0].size());
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows[0].size(); ++c) m.at(r, c) = rows[r][c];
    return m;
}

embed::EmbeddingMatrix maybe_duplicated_rows(size_t n, size_t dim, uint64_t seed) {
    auto m = fixtures::random_embeddings(n, dim, seed);
    Rng rng(mix64(seed, 1));
    for (size_t r = 1; r < n; ++r) {
        if (rng.uniform01() < 0.25) {  // duplicate an earlier row to exercise ties
            size_t src = rng.uniform_below(r);
            for (size_t c = 0; c < dim; ++c) m.at(r, c) = m.at(src, c);
        }
    }
    return m;
}

}  // namespace

TEST_CASE("semantic_graph connects all pairs of identical rows") {
    auto m = rows_of({{1, 2, 0}, {1, 2, 0}, {1, 2, 0}});
    auto g = graph::semantic_graph(m, 2, 0.5);
    CHECK(g.edges.size() == 6);  // every ordered pair
    for (const auto& e : g.edges) CHECK(e.weight == 1.0);
}

TEST_CASE("semantic_graph drops orthogonal rows below the threshold") {
    auto m = rows_of({{1, 0}, {0, 1}});
    auto g = graph::semantic_graph(m, 1, 0.5);
    CHECK(g.edges.empty());
}

TEST_CASE("semantic_graph matches the dense oracle on random rows") {
    auto m = fixtures::random_embeddings(20, 8, 1234);
    auto g = graph::semantic_graph(m, 3, 0.4);
    check_matches_dense(g, ref::semantic_dense(m, 3, 0.4), 0.0);
}

TEST_CASE("semantic_graph rejects a zero-norm row") {
    auto m = rows_of({{1, 0}, {0, 0}, {0, 1}});
    CHECK_THROWS_AS(graph::semantic_graph(m, 1, 0.0), ZeroNormRow);
}

TEST_CASE("every semantic edge clears the threshold when recomputed") {
    auto m = maybe_duplicated_rows(40, 6, 7);
    const double alpha = 0.3;
    auto g = graph::semantic_graph(m, 4, alpha);
    std::vector<double> sim = ref::dense_cosine(m);
    for (const auto& e : g.edges) CHECK(sim[e.src * m.rows + e.dst] >= alpha);
}

TEST_CASE("semantic out-degree never exceeds K and alpha only shrinks the edge set") {
    auto m = maybe_duplicated_rows(35, 5, 21);
    auto low = graph::semantic_graph(m, 4, 0.1);
    auto high = graph::semantic_graph(m, 4, 0.6);
    for (uint32_t a = 0; a < m.rows; ++a) CHECK(low.out_degree(a) <= 4);
    // every high-threshold edge is also a low-threshold edge
    auto dense_low = ref::graph_to_dense(low);
    for (const auto& e : high.edges) CHECK(dense_low[e.src * m.rows + e.dst] != 0.0);
    CHECK(high.edges.size() <= low.edges.size());
}

TEST_CASE("cooccur: three-of-four overlapping users give Jaccard 0.5") {
    // U_a = {u1,u2,u3}, U_b = {u2,u3,u4}
    auto m = matrix_of({{"u1", "a"}, {"u2", "a"}, {"u3", "a"}, {"u2", "b"}, {"u3", "b"}, {"u4", "b"}});
    auto g = graph::cooccur_graph(m, 3);
    REQUIRE(g.edges.size() == 2);
    CHECK(g.edges[0].weight == 0.5);
    CHECK(g.edges[1].weight == 0.5);
}

TEST_CASE("cooccur: identical audiences give Jaccard 1") {
    auto m = matrix_of({{"u1", "a"}, {"u2", "a"}, {"u1", "b"}, {"u2", "b"}});
    auto g = graph::cooccur_graph(m, 2);
    REQUIRE(g.edges.size() == 2);
    CHECK(g.edges[0].weight == 1.0);
}

TEST_CASE("cooccur: disjoint audiences never become edges") {
    auto m = matrix_of({{"u1", "a"}, {"u2", "b"}});
    auto g = graph::cooccur_graph(m, 5);
    CHECK(g.edges.empty());
}

TEST_CASE("cooccur matches the dense oracle and keeps Jaccard symmetric") {
    auto m = fixtures::random_interactions(25, 18, 7, 3);
    auto g = graph::cooccur_graph(m, 4);
    check_matches_dense(g, ref::cooccur_dense(m, 4), 0.0);

    // values are symmetric even where the retained edge sets differ
    std::vector<double> jac(m.n_items * m.n_items, 0.0);
    for (const auto& e : g.edges) jac[e.src * m.n_items + e.dst] = e.weight;
    for (const auto& e : g.edges) {
        double mirror = jac[e.dst * m.n_items + e.src];
        if (mirror != 0.0) CHECK(mirror == e.weight);
    }
    for (uint32_t a = 0; a < m.n_items; ++a) CHECK(g.out_degree(a) <= 4);
}

TEST_CASE("merge sums the two adjacencies") {
    graph::SparseGraph s{3, graph::Stage::semantic, {{0, 1, 1.0}, {1, 2, 1.0}}};
    graph::SparseGraph c{3, graph::Stage::cooccur, {{0, 1, 0.5}, {2, 0, 0.25}}};
    auto m = graph::merge(s, c);
    CHECK(m.stage == graph::Stage::merged);
    REQUIRE(m.edges.size() == 3);
    CHECK(m.edges[0].weight == 1.5);   // in both
    CHECK(m.edges[1].weight == 1.0);   // semantic only
    CHECK(m.edges[2].weight == 0.25);  // cooccur only
}

TEST_CASE("merge with an empty cooccur graph is the semantic graph") {
    graph::SparseGraph s{2, graph::Stage::semantic, {{0, 1, 1.0}}};
    graph::SparseGraph c{2, graph::Stage::cooccur, {}};
    auto m = graph::merge(s, c);
    REQUIRE(m.edges.size() == 1);
    CHECK(m.edges[0].weight == 1.0);
}

TEST_CASE("merge rejects mismatched sizes and stages") {
    graph::SparseGraph s{2, graph::Stage::semantic, {}};
    graph::SparseGraph c{3, graph::Stage::cooccur, {}};
    CHECK_THROWS_AS(graph::merge(s, c), DimMismatch);
    graph::SparseGraph wrong{2, graph::Stage::merged, {}};
    graph::SparseGraph c2{2, graph::Stage::cooccur, {}};
    CHECK_THROWS_AS(graph::merge(wrong, c2), std::invalid_argument);
}

TEST_CASE("normalize: a reciprocal unit edge pair keeps weight 1") {
    graph::SparseGraph m{2, graph::Stage::merged, {{0, 1, 1.0}, {1, 0, 1.0}}};
    auto [norm, deg] = graph::normalize(m);
    REQUIRE(norm.edges.size() == 2);
    CHECK(norm.edges[0].weight == 1.0);
    CHECK(norm.edges[1].weight == 1.0);
    CHECK(deg.values == std::vector<double>{1.0, 1.0});
}

TEST_CASE("normalize: row sums 4 and 1 give weight 0.5 on the crossing edge") {
    graph::SparseGraph m{5,
                         graph::Stage::merged,
                         {{0, 1, 1.0}, {0, 2, 1.0}, {0, 3, 1.0}, {0, 4, 1.0}, {1, 0, 1.0}}};
    auto [norm, deg] = graph::normalize(m);
    CHECK(deg.values[0] == 4.0);
    CHECK(deg.values[1] == 1.0);
    // (0,1): 1/(sqrt(4)*sqrt(1)) = 0.5 ; (1,0): same by symmetry of the formula
    REQUIRE(norm.edges.size() == 2);  // edges into degree-0 items vanish
    CHECK(norm.edges[0].src == 0);
    CHECK(norm.edges[0].dst == 1);
    CHECK(norm.edges[0].weight == 0.5);
    CHECK(norm.edges[1].weight == 0.5);
}

TEST_CASE("normalize leaves an isolated item with zero degree and no incident weight") {
    graph::SparseGraph m{3, graph::Stage::merged, {{0, 1, 1.0}, {1, 0, 1.0}}};
    auto [norm, deg] = graph::normalize(m);
    CHECK(deg.values[2] == 0.0);
    for (const auto& e : norm.edges) {
        CHECK(e.src != 2);
        CHECK(e.dst != 2);
    }
}

TEST_CASE("normalized weights recompute from stored degrees to 1e-12") {
    auto items = maybe_duplicated_rows(30, 6, 11);
    auto train = fixtures::random_interactions(20, 30, 6, 13);
    auto merged = graph::merge(graph::semantic_graph(items, 3, 0.2), graph::cooccur_graph(train, 3));
    auto [norm, deg] = graph::normalize(merged);
    std::vector<double> dense_merged = ref::graph_to_dense(merged);
    for (const auto& e : norm.edges) {
        double expect = dense_merged[e.src * merged.n + e.dst] /
                        (std::sqrt(deg.values[e.src]) * std::sqrt(deg.values[e.dst]));
        CHECK(std::fabs(expect - e.weight) <= 1e-12);
    }
}

TEST_CASE("propagate with zero layers is the identity") {
    graph::SparseGraph norm{3, graph::Stage::normalized, {{0, 1, 0.5}}};
    auto e0 = fixtures::random_embeddings(3, 4, 5);
    auto out = graph::propagate(norm, e0, 0);
    CHECK(out.data == e0.data);
}

TEST_CASE("an isolated item keeps its own features at any depth") {
    graph::SparseGraph norm{3, graph::Stage::normalized, {{0, 1, 0.5}, {1, 0, 0.5}}};
    auto e0 = fixtures::random_embeddings(3, 4, 6);
    auto out = graph::propagate(norm, e0, 3);
    for (size_t j = 0; j < e0.dim; ++j) CHECK(out.at(2, j) == e0.at(2, j));
}

TEST_CASE("propagate matches the dense matrix-power oracle") {
    auto items = fixtures::random_embeddings(5, 3, 9);
    auto train = fixtures::random_interactions(8, 5, 3, 10);
    auto merged = graph::merge(graph::semantic_graph(items, 2, 0.0), graph::cooccur_graph(train, 2));
    auto [norm, deg] = graph::normalize(merged);
    auto out = graph::propagate(norm, items, 2);
    auto expect = ref::propagate_dense(ref::graph_to_dense(norm), items, 2);
    REQUIRE(out.data.size() == expect.data.size());
    for (size_t i = 0; i < out.data.size(); ++i)
        CHECK(std::fabs(out.data[i] - expect.data[i]) <= 1e-10);
}

TEST_CASE("each propagation layer adds exactly one more multiplication") {
    auto items = maybe_duplicated_rows(12, 4, 31);
    auto train = fixtures::random_interactions(10, 12, 4, 32);
    auto merged = graph::merge(graph::semantic_graph(items, 2, 0.1), graph::cooccur_graph(train, 2));
    auto [norm, deg] = graph::normalize(merged);

    // iterated sparse multiply, written out longhand
    auto spmv = [&](const embed::EmbeddingMatrix& x) {
        embed::EmbeddingMatrix y(x.rows, x.dim);
        for (const auto& e : norm.edges)
            for (size_t j = 0; j < x.dim; ++j) y.at(e.src, j) += e.weight * x.at(e.dst, j);
        return y;
    };
    embed::EmbeddingMatrix power = items;
    for (int layers = 1; layers <= 3; ++layers) {
        power = spmv(power);  // A^layers * e0
        auto with = graph::propagate(norm, items, layers);
        auto without = graph::propagate(norm, items, layers - 1);
        for (size_t i = 0; i < with.data.size(); ++i)
            CHECK(std::fabs((with.data[i] - without.data[i]) - power.data[i]) <= 1e-12);
    }
}

TEST_CASE("propagate validates stage and shape") {
    graph::SparseGraph merged{2, graph::Stage::merged, {{0, 1, 1.0}}};
    auto e0 = fixtures::random_embeddings(2, 3, 1);
    CHECK_THROWS_AS(graph::propagate(merged, e0, 1), std::invalid_argument);
    graph::SparseGraph norm{2, graph::Stage::normalized, {{0, 1, 1.0}}};
    auto bad = fixtures::random_embeddings(3, 3, 1);
    CHECK_THROWS_AS(graph::propagate(norm, bad, 1), DimMismatch);
}

TEST_CASE("histogram of identical rows lands in the top bin") {
    auto m = rows_of({{2, 1}, {2, 1}, {2, 1}});
    auto h = graph::edge_similarity_histogram(m, 2, 10);
    CHECK(h.total == 6);
    CHECK(h.counts.back() == 6);
    for (size_t b = 0; b + 1 < h.counts.size(); ++b) CHECK(h.counts[b] == 0);
}

TEST_CASE("histogram conserves the edge count") {
    auto m = fixtures::random_embeddings(20, 6, 77);
    auto h = graph::edge_similarity_histogram(m, 3, 16);
    size_t sum = 0;
    for (size_t c : h.counts) sum += c;
    CHECK(sum == h.total);
    CHECK(h.total == 20 * 3);
}

TEST_CASE("histogram low-similarity mass equals the oracle's cross-cluster edges") {
    // 15-item clusters with K=20 force 6 cross-cluster picks per row
    auto m = fixtures::two_cluster_embeddings(30, 8, 0.05, 5);
    auto h = graph::edge_similarity_histogram(m, 20, 20);
    const size_t low_mass = h.mass_below(0.5);

    std::vector<double> dense = ref::semantic_dense(m, 20, -1.0);
    size_t cross = 0;
    for (size_t a = 0; a < 30; ++a)
        for (size_t b = 0; b < 30; ++b)
            if (dense[a * 30 + b] != 0.0 && (a < 15) != (b < 15)) ++cross;
    CHECK(cross > 0);
    CHECK(low_mass == cross);
}

TEST_CASE("symmetrize mirrors every edge keeping the larger weight") {
    graph::SparseGraph g{3, graph::Stage::merged, {{0, 1, 1.5}, {1, 0, 0.5}, {2, 0, 0.25}}};
    auto s = graph::symmetrize(g);
    REQUIRE(s.edges.size() == 4);  // (0,1),(1,0),(0,2),(2,0)
    std::vector<double> dense = ref::graph_to_dense(s);
    CHECK(dense[0 * 3 + 1] == 1.5);
    CHECK(dense[1 * 3 + 0] == 1.5);
    CHECK(dense[0 * 3 + 2] == 0.25);
    CHECK(dense[2 * 3 + 0] == 0.25);
    for (const auto& e : s.edges) CHECK(dense[e.dst * 3 + e.src] == e.weight);
}

TEST_CASE("graph export/import round-trips exactly") {
    auto dir = fixtures::fresh_dir("graph");
    auto items = fixtures::random_embeddings(10, 4, 3);
    auto train = fixtures::random_interactions(8, 10, 4, 4);
    auto merged = graph::merge(graph::semantic_graph(items, 3, 0.2), graph::cooccur_graph(train, 3));
    graph::export_graph(merged, dir / "g.tsv");
    auto back = graph::import_graph(dir / "g.tsv");
    CHECK(back.n == merged.n);
    CHECK(back.stage == merged.stage);
    REQUIRE(back.edges.size() == merged.edges.size());
    for (size_t i = 0; i < back.edges.size(); ++i) CHECK(back.edges[i] == merged.edges[i]);
}

TEST_CASE("import rejects an out-of-range index with the line number") {
    auto dir = fixtures::fresh_dir("graph");
    std::ofstream(dir / "bad.tsv") << "n=2 stage=merged\n0\t5\t1.0\n";
    CHECK_THROWS_AS(graph::import_graph(dir / "bad.tsv"), ParseError);
    try {
        graph::import_graph(dir / "bad.tsv");
    } catch (const ParseError& e) {
        CHECK(e.line_no == 2);
    }
}

TEST_CASE("an empty edge list is a valid graph") {
    auto dir = fixtures::fresh_dir("graph");
    std::ofstream(dir / "empty.tsv") << "n=4 stage=semantic\n";
    auto g = graph::import_graph(dir / "empty.tsv");
    CHECK(g.n == 4);
    CHECK(g.edges.empty());
}

TEST_CASE("full pipeline chain matches the dense oracle on random instances") {
    Rng meta(20240801);
    for (int instance = 0; instance < 15; ++instance) {
        const size_t n_items = 5 + meta.uniform_below(46);   // <= 50
        const size_t n_users = 5 + meta.uniform_below(26);   // <= 30
        const int ks = 1 + static_cast<int>(meta.uniform_below(5));
        const int kc = 1 + static_cast<int>(meta.uniform_below(5));
        const double alpha = meta.uniform01() * 0.9;
        const int layers = static_cast<int>(meta.uniform_below(4));

        auto items = maybe_duplicated_rows(n_items, 4 + meta.uniform_below(10), meta.next_u64());
        auto train = fixtures::random_interactions(n_users, n_items, 6, meta.next_u64());

        auto semantic = graph::semantic_graph(items, ks, alpha);
        auto dense_sem = ref::semantic_dense(items, ks, alpha);
        check_matches_dense(semantic, dense_sem, 0.0);

        auto cooc = graph::cooccur_graph(train, kc);
        auto dense_cooc = ref::cooccur_dense(train, kc);
        check_matches_dense(cooc, dense_cooc, 0.0);

        auto merged = graph::merge(semantic, cooc);
        auto dense_merged = ref::merge_dense(dense_sem, dense_cooc, n_items);
        check_matches_dense(merged, dense_merged, 0.0);

        auto [norm, deg] = graph::normalize(merged);
        auto dense_norm = ref::normalize_dense(dense_merged, n_items);
        check_matches_dense(norm, dense_norm, 1e-10);

        auto prop = graph::propagate(norm, items, layers);
        auto dense_prop = ref::propagate_dense(dense_norm, items, layers);
        for (size_t i = 0; i < prop.data.size(); ++i)
            CHECK(std::fabs(prop.data[i] - dense_prop.data[i]) <= 1e-10);
    }
}
