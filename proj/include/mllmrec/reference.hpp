#pragma once

// Serial dense reference implementations, kept for testing and as the
// baseline side of the benchmark. Everything here is written naively and
// independently of the blocked parallel kernels it cross-checks.

#include <vector>

#include "mllmrec/corpus.hpp"
#include "mllmrec/embedding.hpp"
#include "mllmrec/eval.hpp"
#include "mllmrec/graph.hpp"
#include "mllmrec/model.hpp"

namespace mllmrec::ref {

// Dense n x n cosine matrix, row-major.
std::vector<double> dense_cosine(const embed::EmbeddingMatrix& items);

// Dense adjacency (row-major n x n) per pipeline stage.
std::vector<double> semantic_dense(const embed::EmbeddingMatrix& items, int k, double alpha);
std::vector<double> cooccur_dense(const corpus::InteractionMatrix& train, int k);
std::vector<double> merge_dense(const std::vector<double>& semantic,
                                const std::vector<double>& cooccur, size_t n);
std::vector<double> normalize_dense(const std::vector<double>& merged, size_t n);
embed::EmbeddingMatrix propagate_dense(const std::vector<double>& normalized,
                                       const embed::EmbeddingMatrix& e0, int layers);

std::vector<double> graph_to_dense(const graph::SparseGraph& g);

// Serial scoring and ranking from first principles: projects with plain
// loops, sorts the full score list, applies the metric definitions.
struct UserMetrics {
    double recall = 0.0;
    double ndcg = 0.0;
};

std::vector<double> mlp_forward_serial(const model::MlpParams& p, const double* x, double slope);

std::vector<uint32_t> rank_user_serial(const model::ModelParams& params,
                                       const embed::EmbeddingMatrix& user_embeds,
                                       const embed::EmbeddingMatrix& item_feats, uint32_t user,
                                       const std::vector<uint32_t>& train_items, double slope);

UserMetrics metrics_serial(const std::vector<uint32_t>& ranking,
                           const std::vector<uint32_t>& truth_sorted, size_t k);

// Naive serial BPR loss (no gradients); the finite-difference oracle
// differentiates this.
double bpr_loss_serial(const model::ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                       const embed::EmbeddingMatrix& item_embeds, const model::TripletBatch& batch,
                       double leaky_slope, double weight_decay);

// Naive serial gradient accumulation, one triplet at a time.
double bpr_grads_serial(const model::ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                        const embed::EmbeddingMatrix& item_embeds, const model::TripletBatch& batch,
                        double leaky_slope, double weight_decay, model::Gradients& out);

}  // namespace mllmrec::ref
