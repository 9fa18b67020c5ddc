#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "mllmrec/corpus.hpp"
#include "mllmrec/embedding.hpp"
#include "mllmrec/model.hpp"

namespace mllmrec::eval {

// Per-user top-N lists by descending score, ties toward the lower index,
// with the user's train items masked out.
struct RankingResult {
    std::vector<uint32_t> users;
    std::vector<std::vector<uint32_t>> topn;  // parallel to users
};

// Top-n selection over a score vector under (score desc, index asc), with
// masked entries skipped.
std::vector<uint32_t> top_items(const std::vector<double>& scores, const std::vector<char>& masked,
                                size_t n_top);

// Full ranking over every non-train item for each user. Item projections
// are computed once and shared; users are ranked in parallel.
RankingResult rank_all(const model::ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                       const embed::EmbeddingMatrix& item_feats,
                       const corpus::InteractionMatrix& train_mask,
                       const std::vector<uint32_t>& users, size_t n_top, double leaky_slope);

// truth is indexed by user id (sorted lists); users with empty truth are
// excluded from the average.
double recall_at_k(const RankingResult& ranked, const std::vector<std::vector<uint32_t>>& truth,
                   size_t k);
double ndcg_at_k(const RankingResult& ranked, const std::vector<std::vector<uint32_t>>& truth,
                 size_t k);

struct MetricsReport {
    std::map<size_t, double> recall;
    std::map<size_t, double> ndcg;
    size_t n_users_evaluated = 0;
};

// Ranks against the validation or test ground truth with train masking and
// reports Recall@k / NDCG@k for each k.
MetricsReport evaluate(const model::ModelParams& params, const corpus::DatasetSplit& split,
                       const embed::EmbeddingMatrix& user_embeds,
                       const embed::EmbeddingMatrix& item_feats, const std::vector<size_t>& ks,
                       bool use_test, double leaky_slope);

}  // namespace mllmrec::eval
