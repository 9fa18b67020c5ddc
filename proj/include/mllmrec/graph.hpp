#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mllmrec/corpus.hpp"
#include "mllmrec/embedding.hpp"

namespace mllmrec::graph {

enum class Stage : uint8_t { semantic, cooccur, merged, normalized };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct Edge {
    uint32_t src;
    uint32_t dst;
    double weight;

    bool operator==(const Edge&) const = default;
};

// Directed weighted item-item adjacency. Edges are sorted by (src, dst),
// unique, with no self-loops. Immutable after construction.
struct SparseGraph {
    uint32_t n = 0;
    Stage stage = Stage::semantic;
    std::vector<Edge> edges;

    // CSR-style offsets into edges, size n+1.
    std::vector<size_t> row_offsets() const;
    size_t out_degree(uint32_t src) const;
};

struct GraphConfig {
    int k_semantic = 10;
    double alpha = 0.5;
    int k_cooccur = 10;
    int layers = 1;
    bool symmetrize = false;
};

struct DegreeVector {
    std::vector<double> values;  // row sums of the merged adjacency
};

// Cosine KNN with a similarity threshold: edge (a,b) is kept iff b is among
// the top-k most similar items to a AND cos(a,b) >= alpha. Weights are 1.
// Ties at the k-th rank break toward the lower item index. Rows are
// processed in blocks against the full matrix; the dense similarity matrix
// is never materialized. Pass alpha = -1 to disable the threshold.
SparseGraph semantic_graph(const embed::EmbeddingMatrix& items, int k, double alpha);

// Audience co-occurrence KNN: for each item, the top-k items by Jaccard
// similarity of interacted user sets, weighted by the Jaccard value.
// Zero-overlap pairs never become edges.
SparseGraph cooccur_graph(const corpus::InteractionMatrix& train, int k);

// Elementwise sum of the semantic and co-occurrence adjacencies.
SparseGraph merge(const SparseGraph& semantic, const SparseGraph& cooccur);

// Optional max-symmetrization of a merged graph, off by default.
SparseGraph symmetrize(const SparseGraph& g);

// w'(a,b) = w(a,b) / (sqrt(N_a) * sqrt(N_b)) with N the row sums of the
// merged adjacency. Items with zero row sum stay isolated; edges whose
// normalized weight would be zero are dropped.
std::pair<SparseGraph, DegreeVector> normalize(const SparseGraph& merged);

// LightGCN-style propagation: returns sum over layers 0..L of A^l * e0.
embed::EmbeddingMatrix propagate(const SparseGraph& normalized, const embed::EmbeddingMatrix& e0,
                                 int layers);

struct Histogram {
    double lo = -1.0;
    double hi = 1.0;
    std::vector<size_t> counts;
    size_t total = 0;

    double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
    // total count in bins entirely below the given similarity value
    size_t mass_below(double value) const;
};

// Similarity distribution of the pure KNN edge set (threshold disabled),
// the diagnostic motivating the denoising threshold.
Histogram edge_similarity_histogram(const embed::EmbeddingMatrix& items, int k, int bins);

// Text format: header `n=<count> stage=<tag>`, then `src<TAB>dst<TAB>weight`
// per edge with weights at 17 significant digits.
void export_graph(const SparseGraph& g, const std::filesystem::path& path);
SparseGraph import_graph(const std::filesystem::path& path);

}  // namespace mllmrec::graph
