#include <doctest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "mllmrec/corpus.hpp"
#include "mllmrec/eval.hpp"
#include "mllmrec/model.hpp"
#include "mllmrec/reference.hpp"

using namespace mllmrec;

namespace {

// identity-like params so scores reduce to e_u . e_i for nonnegative inputs
model::ModelParams passthrough_params(size_t d) {
    model::ModelParams p;
    p.user_mlp = model::MlpParams(d, d, d);
    p.item_mlp = model::MlpParams(d, d, d);
    for (size_t i = 0; i < d; ++i) {
        p.user_mlp.w1[i * d + i] = 1.0;
        p.user_mlp.w2[i * d + i] = 1.0;
        p.item_mlp.w1[i * d + i] = 1.0;
        p.item_mlp.w2[i * d + i] = 1.0;
    }
    return p;
}

corpus::InteractionMatrix empty_train(size_t n_users, size_t n_items) {
    corpus::InteractionMatrix m;
    m.n_users = n_users;
    m.n_items = n_items;
    m.by_user.resize(n_users);
    m.by_item.resize(n_items);
    return m;
}

eval::RankingResult single_user_ranking(std::vector<uint32_t> topn) {
    eval::RankingResult r;
    r.users = {0};
    r.topn = {std::move(topn)};
    return r;
}

}  // namespace

TEST_CASE("top_items orders by score descending") {
    std::vector<double> scores{0.3, 0.9, 0.1};
    CHECK(eval::top_items(scores, {}, 3) == std::vector<uint32_t>{1, 0, 2});
}

TEST_CASE("top_items skips masked entries") {
    std::vector<double> scores{0.3, 0.9, 0.1};
    std::vector<char> masked{0, 1, 0};
    CHECK(eval::top_items(scores, masked, 3) == std::vector<uint32_t>{0, 2});
}

TEST_CASE("top_items breaks ties toward the lower index") {
    std::vector<double> scores{0.5, 0.5, 0.5, 0.7};
    CHECK(eval::top_items(scores, {}, 4) == std::vector<uint32_t>{3, 0, 1, 2});
}

TEST_CASE("rankings are invariant to a per-user score shift") {
    Rng rng(99);
    std::vector<double> scores(50);
    for (double& s : scores) s = rng.normal();
    auto base = eval::top_items(scores, {}, 20);
    for (double& s : scores) s += 3.25;
    CHECK(eval::top_items(scores, {}, 20) == base);
}

TEST_CASE("rank_all masks the user's train items and reuses item projections") {
    const size_t d = 4;
    auto params = passthrough_params(d);
    embed::EmbeddingMatrix users(1, d), items(3, d);
    users.at(0, 0) = 1.0;
    items.at(0, 0) = 0.3;
    items.at(1, 0) = 0.9;
    items.at(2, 0) = 0.1;

    auto no_mask = eval::rank_all(params, users, items, empty_train(1, 3), {0}, 3, 0.01);
    CHECK(no_mask.topn[0] == std::vector<uint32_t>{1, 0, 2});

    auto train = empty_train(1, 3);
    train.by_user[0] = {1};
    train.by_item[1] = {0};
    auto masked = eval::rank_all(params, users, items, train, {0}, 3, 0.01);
    CHECK(masked.topn[0] == std::vector<uint32_t>{0, 2});
}

TEST_CASE("recall@k counts the hit fraction of the truth set") {
    std::vector<std::vector<uint32_t>> truth{{2, 7}};
    auto r = single_user_ranking({2, 0, 1, 3, 4, 5, 6, 8, 9, 10});
    CHECK(eval::recall_at_k(r, truth, 10) == 0.5);

    auto full = single_user_ranking({2, 7, 1});
    CHECK(eval::recall_at_k(full, truth, 10) == 1.0);

    auto miss = single_user_ranking({0, 1, 3});
    CHECK(eval::recall_at_k(miss, truth, 10) == 0.0);
}

TEST_CASE("ndcg@k follows the binary-relevance formula") {
    std::vector<std::vector<uint32_t>> truth{{5}};
    CHECK(eval::ndcg_at_k(single_user_ranking({5, 1, 2}), truth, 10) == 1.0);

    double at2 = eval::ndcg_at_k(single_user_ranking({1, 5, 2}), truth, 10);
    CHECK(at2 == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
    CHECK(at2 == doctest::Approx(0.6309297535714574).epsilon(1e-12));

    CHECK(eval::ndcg_at_k(single_user_ranking({1, 2, 3}), truth, 10) == 0.0);
}

TEST_CASE("users with empty truth are excluded from the averages") {
    eval::RankingResult r;
    r.users = {0, 1};
    r.topn = {{3}, {4}};
    std::vector<std::vector<uint32_t>> truth{{3}, {}};
    CHECK(eval::recall_at_k(r, truth, 5) == 1.0);
}

TEST_CASE("a perfect scorer reaches recall and ndcg 1 at every k") {
    const size_t n = 8;
    auto params = passthrough_params(n);
    embed::EmbeddingMatrix users(n, n), items(n, n);
    for (size_t u = 0; u < n; ++u) users.at(u, u) = 1.0;
    for (size_t i = 0; i < n; ++i) items.at(i, i) = 1.0;

    corpus::DatasetSplit split;
    split.train = empty_train(n, n);
    split.valid.resize(n);
    split.test.resize(n);
    for (uint32_t u = 0; u < n; ++u) split.test[u] = {u};

    auto report = eval::evaluate(params, split, users, items, {1, 4}, true, 0.01);
    CHECK(report.n_users_evaluated == n);
    CHECK(report.recall.at(1) == 1.0);
    CHECK(report.recall.at(4) == 1.0);
    CHECK(report.ndcg.at(1) == 1.0);
    CHECK(report.ndcg.at(4) == 1.0);
}

TEST_CASE("random rankings hit a single truth item at rate k/n") {
    const size_t n = 20, k = 5, trials = 4000;
    Rng rng(31337);
    double total = 0.0;
    for (size_t t = 0; t < trials; ++t) {
        std::vector<uint32_t> perm(n);
        for (uint32_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<std::vector<uint32_t>> truth{{static_cast<uint32_t>(rng.uniform_below(n))}};
        eval::RankingResult r;
        r.users = {0};
        r.topn = {std::vector<uint32_t>(perm.begin(), perm.begin() + k)};
        total += eval::recall_at_k(r, truth, k);
    }
    CHECK(total / trials == doctest::Approx(static_cast<double>(k) / n).epsilon(0.12));
}

TEST_CASE("metrics agree exactly with the serial enumeration oracle") {
    const size_t n_users = 10, n_items = 20, d_t = 6;
    auto params = model::xavier_init(d_t, 4, 3, 5);
    auto users = fixtures::random_embeddings(n_users, d_t, 6);
    auto items = fixtures::random_embeddings(n_items, d_t, 7);
    auto train = fixtures::random_interactions(n_users, n_items, 5, 8);

    std::vector<std::vector<uint32_t>> truth(n_users);
    Rng rng(9);
    for (auto& t : truth) {
        size_t cnt = 1 + rng.uniform_below(3);
        std::set<uint32_t> s;
        while (s.size() < cnt) {
            uint32_t i = static_cast<uint32_t>(rng.uniform_below(n_items));
            if (!train.has(0, i)) s.insert(i);  // just any non-degenerate truth
        }
        t.assign(s.begin(), s.end());
    }

    std::vector<uint32_t> eval_users;
    for (uint32_t u = 0; u < n_users; ++u) eval_users.push_back(u);

    for (size_t k : {10ul, 20ul}) {
        auto ranked = eval::rank_all(params, users, items, train, eval_users, 20, 0.01);
        double got_r = eval::recall_at_k(ranked, truth, k);
        double got_n = eval::ndcg_at_k(ranked, truth, k);

        double want_r = 0.0, want_n = 0.0;
        for (uint32_t u = 0; u < n_users; ++u) {
            auto order = ref::rank_user_serial(params, users, items, u, train.by_user[u], 0.01);
            auto m = ref::metrics_serial(order, truth[u], k);
            want_r += m.recall;
            want_n += m.ndcg;
        }
        want_r /= n_users;
        want_n /= n_users;
        CHECK(std::fabs(got_r - want_r) <= 1e-12);
        CHECK(std::fabs(got_n - want_n) <= 1e-12);
    }
}

TEST_CASE("metrics grow with k and rankings never leak train items") {
    auto raw = fixtures::two_cluster_interactions(20, 15);
    auto split = corpus::split(corpus::index(raw), {0.8, 0.1, 0.1}, 4);
    auto users = fixtures::random_embeddings(split.train.n_users, 8, 1);
    auto items = fixtures::random_embeddings(split.train.n_items, 8, 2);
    auto params = model::xavier_init(8, 6, 4, 3);

    auto report = eval::evaluate(params, split, users, items, {10, 20}, true, 0.01);
    CHECK(report.recall.at(20) >= report.recall.at(10));
    CHECK(report.ndcg.at(20) >= report.ndcg.at(10));

    std::vector<uint32_t> all_users;
    for (uint32_t u = 0; u < split.train.n_users; ++u) all_users.push_back(u);
    auto ranked = eval::rank_all(params, users, items, split.train, all_users, 20, 0.01);
    for (size_t idx = 0; idx < ranked.users.size(); ++idx)
        for (uint32_t i : ranked.topn[idx]) CHECK(!split.train.has(ranked.users[idx], i));
}
