#include <doctest.h>

#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "mllmrec/corpus.hpp"
#include "mllmrec/errors.hpp"

using namespace mllmrec;
using corpus::RawInteractions;

namespace {

RawInteractions from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
    RawInteractions raw;
    for (const auto& [u, i] : pairs) raw.records.push_back({u, i, std::nullopt});
    return raw;
}

// complete bipartite block: users u0..u{nu-1} x items i0..i{ni-1}
RawInteractions complete_block(size_t nu, size_t ni) {
    RawInteractions raw;
    for (size_t u = 0; u < nu; ++u)
        for (size_t i = 0; i < ni; ++i)
            raw.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), std::nullopt});
    return raw;
}

std::filesystem::path write_lines(const std::vector<std::string>& lines) {
    auto dir = fixtures::fresh_dir("corpus");
    auto path = dir / "interactions.tsv";
    std::ofstream out(path);
    for (const auto& l : lines) out << l << '\n';
    return path;
}

}  // namespace

TEST_CASE("load_interactions deduplicates identical pairs") {
    auto path = write_lines({"u1\ti1", "u1\ti1"});
    auto raw = corpus::load_interactions(path);
    CHECK(raw.records.size() == 1);
}

TEST_CASE("load_interactions parses users, items and timestamps") {
    auto path = write_lines({"u1\ti1\t100", "u2\ti1\t90"});
    auto raw = corpus::load_interactions(path);
    REQUIRE(raw.records.size() == 2);
    CHECK(raw.records[0].timestamp == 100);
    CHECK(raw.records[1].timestamp == 90);
    std::set<std::string> users, items;
    for (const auto& r : raw.records) {
        users.insert(r.user_key);
        items.insert(r.item_key);
    }
    CHECK(users.size() == 2);
    CHECK(items.size() == 1);
}

TEST_CASE("load_interactions keeps the first-seen timestamp for duplicates") {
    auto path = write_lines({"u1\ti1\t100", "u1\ti1\t50"});
    auto raw = corpus::load_interactions(path);
    REQUIRE(raw.records.size() == 1);
    CHECK(raw.records[0].timestamp == 100);
}

TEST_CASE("load_interactions rejects a field-count violation with the line number") {
    auto path = write_lines({"u1\ti1", "u1"});
    CHECK_THROWS_AS(corpus::load_interactions(path), MalformedLine);
    try {
        corpus::load_interactions(path);
    } catch (const MalformedLine& e) {
        CHECK(e.line_no == 2);
    }
}

TEST_CASE("load_interactions reports a missing file as Io") {
    CHECK_THROWS_AS(corpus::load_interactions("/nonexistent/file.tsv"), IoError);
}

TEST_CASE("kcore keeps an already-5-core block") {
    auto raw = complete_block(6, 6);
    auto filtered = corpus::kcore_filter(raw, 5);
    CHECK(filtered.records.size() == 36);
}

TEST_CASE("kcore removes a single-interaction user without disturbing the core") {
    auto raw = complete_block(6, 6);
    raw.records.push_back({"u6", "i0", std::nullopt});
    auto filtered = corpus::kcore_filter(raw, 5);
    CHECK(filtered.records.size() == 36);
    for (const auto& r : filtered.records) CHECK(r.user_key != "u6");
}

TEST_CASE("kcore cascade: removing a weak item drags its only user along") {
    // u6 holds 5 interactions, but one of them is the 1-user item i6;
    // pruning i6 drops u6 to degree 4 which prunes u6 too.
    auto raw = complete_block(6, 6);
    for (const char* item : {"i0", "i1", "i2", "i3", "i6"})
        raw.records.push_back({"u6", item, std::nullopt});
    auto filtered = corpus::kcore_filter(raw, 5);
    CHECK(filtered.records.size() == 36);
    for (const auto& r : filtered.records) {
        CHECK(r.user_key != "u6");
        CHECK(r.item_key != "i6");
    }
}

TEST_CASE("kcore with k=1 is the identity on nonempty data") {
    auto raw = from_pairs({{"a", "x"}, {"b", "y"}});
    auto filtered = corpus::kcore_filter(raw, 1);
    CHECK(filtered.records.size() == raw.records.size());
}

TEST_CASE("kcore throws EmptyAfterFilter when nothing survives") {
    auto raw = from_pairs({{"a", "x"}, {"b", "y"}});
    CHECK_THROWS_AS(corpus::kcore_filter(raw, 3), EmptyAfterFilter);
}

TEST_CASE("kcore is idempotent and enforces the degree bound") {
    // a solid 5-core with extra weak users and items layered on top
    RawInteractions raw = fixtures::two_cluster_interactions(20, 15);
    Rng rng(99);
    for (int w = 0; w < 12; ++w) {
        const size_t deg = 1 + rng.uniform_below(4);
        for (size_t j = 0; j < deg; ++j)
            raw.records.push_back({"weak" + std::to_string(w),
                                   "i" + std::to_string(rng.uniform_below(30)), std::nullopt});
    }
    for (int w = 0; w < 4; ++w)
        raw.records.push_back({"u" + std::to_string(w), "rare" + std::to_string(w), std::nullopt});

    auto once = corpus::kcore_filter(raw, 5);
    auto twice = corpus::kcore_filter(once, 5);
    REQUIRE(once.records.size() == twice.records.size());
    for (size_t r = 0; r < once.records.size(); ++r) {
        CHECK(once.records[r].user_key == twice.records[r].user_key);
        CHECK(once.records[r].item_key == twice.records[r].item_key);
    }

    auto filtered = corpus::index(once);
    for (uint32_t u = 0; u < filtered.n_users; ++u) CHECK(filtered.user_degree(u) >= 5);
    for (uint32_t i = 0; i < filtered.n_items; ++i) CHECK(filtered.item_degree(i) >= 5);
}

TEST_CASE("index assigns ids by first appearance and builds both orientations") {
    auto m = corpus::index(from_pairs({{"u1", "i1"}, {"u2", "i1"}}));
    CHECK(m.n_users == 2);
    CHECK(m.n_items == 1);
    CHECK(m.by_item[0] == std::vector<uint32_t>{0, 1});

    auto m2 = corpus::index(from_pairs({{"a", "x"}, {"a", "y"}}));
    CHECK(m2.by_user[0] == std::vector<uint32_t>{0, 1});
}

TEST_CASE("index rejects empty input") {
    CHECK_THROWS_AS(corpus::index(RawInteractions{}), std::invalid_argument);
}

TEST_CASE("by_user and by_item are transposes") {
    auto m = fixtures::random_interactions(30, 20, 6, 5);
    for (uint32_t u = 0; u < m.n_users; ++u)
        for (uint32_t i : m.by_user[u])
            CHECK(std::binary_search(m.by_item[i].begin(), m.by_item[i].end(), u));
    for (uint32_t i = 0; i < m.n_items; ++i)
        for (uint32_t u : m.by_item[i]) CHECK(m.has(u, i));
}

TEST_CASE("split: a 10-item user gets 8/1/1") {
    auto m = corpus::index(complete_block(12, 10));
    auto sp = corpus::split(m, {0.8, 0.1, 0.1}, 7);
    for (uint32_t u = 0; u < m.n_users; ++u) {
        CHECK(sp.train.by_user[u].size() == 8);
        CHECK(sp.valid[u].size() == 1);
        CHECK(sp.test[u].size() == 1);
    }
}

TEST_CASE("split: a 5-item user gets 4 train and a single held-out item") {
    auto m = corpus::index(complete_block(6, 5));
    auto sp = corpus::split(m, {0.8, 0.1, 0.1}, 11);
    for (uint32_t u = 0; u < m.n_users; ++u) {
        CHECK(sp.train.by_user[u].size() == 4);
        CHECK(sp.valid[u].size() + sp.test[u].size() == 1);
        CHECK(!sp.train.by_user[u].empty());
    }
}

TEST_CASE("split is deterministic in the seed") {
    auto m = fixtures::random_interactions(25, 18, 9, 3);
    auto a = corpus::split(m, {0.8, 0.1, 0.1}, 1234);
    auto b = corpus::split(m, {0.8, 0.1, 0.1}, 1234);
    auto c = corpus::split(m, {0.8, 0.1, 0.1}, 1235);
    CHECK(a.train.by_user == b.train.by_user);
    CHECK(a.valid == b.valid);
    CHECK(a.test == b.test);
    bool any_diff = !(a.train.by_user == c.train.by_user);
    CHECK(any_diff);
}

TEST_CASE("split partitions every user's items exactly") {
    auto m = fixtures::random_interactions(40, 30, 10, 17);
    auto sp = corpus::split(m, {0.8, 0.1, 0.1}, 99);
    for (uint32_t u = 0; u < m.n_users; ++u) {
        std::vector<uint32_t> merged = sp.train.by_user[u];
        merged.insert(merged.end(), sp.valid[u].begin(), sp.valid[u].end());
        merged.insert(merged.end(), sp.test[u].begin(), sp.test[u].end());
        std::sort(merged.begin(), merged.end());
        CHECK(merged == m.by_user[u]);

        std::set<uint32_t> tr(sp.train.by_user[u].begin(), sp.train.by_user[u].end());
        for (uint32_t i : sp.valid[u]) CHECK(tr.count(i) == 0);
        for (uint32_t i : sp.test[u]) CHECK(tr.count(i) == 0);
        CHECK(!sp.train.by_user[u].empty());
    }
}

TEST_CASE("split rejects ratios that do not sum to one") {
    auto m = corpus::index(complete_block(3, 6));
    CHECK_THROWS_AS(corpus::split(m, {0.8, 0.1, 0.2}, 1), BadRatios);
}

TEST_CASE("split keeps the train matrix transpose-consistent with timestamps") {
    auto raw = fixtures::two_cluster_interactions(10, 50);
    auto m = corpus::index(raw);
    auto sp = corpus::split(m, {0.8, 0.1, 0.1}, 5);
    REQUIRE(sp.train.has_timestamps);
    for (uint32_t u = 0; u < m.n_users; ++u) {
        REQUIRE(sp.train.ts_by_user[u].size() == sp.train.by_user[u].size());
        for (uint32_t i : sp.train.by_user[u])
            CHECK(std::binary_search(sp.train.by_item[i].begin(), sp.train.by_item[i].end(), u));
    }
}
