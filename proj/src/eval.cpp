#include "mllmrec/eval.hpp"

#include <algorithm>
#include <cmath>

#include "mllmrec/errors.hpp"

namespace mllmrec::eval {

std::vector<uint32_t> top_items(const std::vector<double>& scores, const std::vector<char>& masked,
                                size_t n_top) {
    std::vector<uint32_t> candidates;
    candidates.reserve(scores.size());
    for (uint32_t i = 0; i < scores.size(); ++i)
        if (masked.empty() || !masked[i]) candidates.push_back(i);

    auto better = [&](uint32_t a, uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    const size_t take = std::min(n_top, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(take),
                      candidates.end(), better);
    candidates.resize(take);
    return candidates;
}

RankingResult rank_all(const model::ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                       const embed::EmbeddingMatrix& item_feats,
                       const corpus::InteractionMatrix& train_mask,
                       const std::vector<uint32_t>& users, size_t n_top, double leaky_slope) {
    if (item_feats.rows != train_mask.n_items)
        throw ShapeMismatch("rank_all: item feature rows != item count");

    // item-side projections computed once, reused across users
    const embed::EmbeddingMatrix h_items = model::project_all(params.item_mlp, item_feats, leaky_slope);
    const size_t d = params.user_mlp.d_out;
    const size_t n_items = item_feats.rows;

    RankingResult result;
    result.users = users;
    result.topn.resize(users.size());

#pragma omp parallel
    {
        std::vector<double> h_user(d);
        std::vector<double> scores(n_items);
        std::vector<char> masked(n_items);
#pragma omp for schedule(dynamic, 8)
        for (long long idx = 0; idx < static_cast<long long>(users.size()); ++idx) {
            const uint32_t u = users[static_cast<size_t>(idx)];
            model::mlp_forward(params.user_mlp, user_embeds.row(u), h_user.data(), leaky_slope);
            for (size_t i = 0; i < n_items; ++i) {
                const double* hi = h_items.row(i);
                double s = 0.0;
                for (size_t o = 0; o < d; ++o) s += h_user[o] * hi[o];
                scores[i] = s;
            }
            std::fill(masked.begin(), masked.end(), 0);
            for (uint32_t i : train_mask.by_user[u]) masked[i] = 1;
            result.topn[static_cast<size_t>(idx)] = top_items(scores, masked, n_top);
        }
    }
    return result;
}

namespace {

template <typename PerUser>
double mean_over_users(const RankingResult& ranked,
                       const std::vector<std::vector<uint32_t>>& truth, PerUser per_user) {
    double sum = 0.0;
    size_t counted = 0;
    for (size_t idx = 0; idx < ranked.users.size(); ++idx) {
        const auto& t = truth[ranked.users[idx]];
        if (t.empty()) continue;
        sum += per_user(ranked.topn[idx], t);
        ++counted;
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

bool contains(const std::vector<uint32_t>& sorted, uint32_t v) {
    return std::binary_search(sorted.begin(), sorted.end(), v);
}

}  // namespace

double recall_at_k(const RankingResult& ranked, const std::vector<std::vector<uint32_t>>& truth,
                   size_t k) {
    return mean_over_users(ranked, truth,
                           [k](const std::vector<uint32_t>& topn, const std::vector<uint32_t>& t) {
                               size_t hits = 0;
                               for (size_t p = 0; p < std::min(k, topn.size()); ++p)
                                   if (contains(t, topn[p])) ++hits;
                               return static_cast<double>(hits) / static_cast<double>(t.size());
                           });
}

double ndcg_at_k(const RankingResult& ranked, const std::vector<std::vector<uint32_t>>& truth,
                 size_t k) {
    return mean_over_users(
        ranked, truth, [k](const std::vector<uint32_t>& topn, const std::vector<uint32_t>& t) {
            double dcg = 0.0;
            for (size_t p = 0; p < std::min(k, topn.size()); ++p)
                if (contains(t, topn[p])) dcg += 1.0 / std::log2(static_cast<double>(p + 2));
            double idcg = 0.0;
            for (size_t p = 0; p < std::min(k, t.size()); ++p)
                idcg += 1.0 / std::log2(static_cast<double>(p + 2));
            return dcg / idcg;
        });
}

MetricsReport evaluate(const model::ModelParams& params, const corpus::DatasetSplit& split,
                       const embed::EmbeddingMatrix& user_embeds,
                       const embed::EmbeddingMatrix& item_feats, const std::vector<size_t>& ks,
                       bool use_test, double leaky_slope) {
    const auto& truth = use_test ? split.test : split.valid;
    std::vector<uint32_t> users;
    for (uint32_t u = 0; u < split.train.n_users; ++u)
        if (!truth[u].empty()) users.push_back(u);

    size_t n_top = 0;
    for (size_t k : ks) n_top = std::max(n_top, k);
    RankingResult ranked = rank_all(params, user_embeds, item_feats, split.train, users, n_top,
                                    leaky_slope);

    MetricsReport report;
    report.n_users_evaluated = users.size();
    for (size_t k : ks) {
        report.recall[k] = recall_at_k(ranked, truth, k);
        report.ndcg[k] = ndcg_at_k(ranked, truth, k);
    }
    return report;
}

}  // namespace mllmrec::eval
