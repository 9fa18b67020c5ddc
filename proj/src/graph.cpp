#include "mllmrec/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mllmrec/errors.hpp"

namespace mllmrec::graph {

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::semantic: return "semantic";
        case Stage::cooccur: return "cooccur";
        case Stage::merged: return "merged";
        case Stage::normalized: return "normalized";
    }
    return "unknown";
}

Stage stage_from_name(const std::string& name) {
    if (name == "semantic") return Stage::semantic;
    if (name == "cooccur") return Stage::cooccur;
    if (name == "merged") return Stage::merged;
    if (name == "normalized") return Stage::normalized;
    throw std::invalid_argument("unknown graph stage: " + name);
}

std::vector<size_t> SparseGraph::row_offsets() const {
    std::vector<size_t> off(n + 1, 0);
    for (const Edge& e : edges) ++off[e.src + 1];
    for (size_t i = 0; i < n; ++i) off[i + 1] += off[i];
    return off;
}

size_t SparseGraph::out_degree(uint32_t src) const {
    auto lo = std::lower_bound(edges.begin(), edges.end(), src,
                               [](const Edge& e, uint32_t s) { return e.src < s; });
    auto hi = std::upper_bound(edges.begin(), edges.end(), src,
                               [](uint32_t s, const Edge& e) { return s < e.src; });
    return static_cast<size_t>(hi - lo);
}

namespace {

// Bounded insertion list keeping the k best (value desc, index asc).
struct TopK {
    explicit TopK(size_t k) : k_(k) { entries_.reserve(k + 1); }

    void offer(double value, uint32_t idx) {
        auto pos = std::lower_bound(entries_.begin(), entries_.end(), std::pair(value, idx),
                                    [](const auto& a, const auto& b) {
                                        if (a.first != b.first) return a.first > b.first;
                                        return a.second < b.second;
                                    });
        if (entries_.size() == k_ && pos == entries_.end()) return;
        entries_.insert(pos, {value, idx});
        if (entries_.size() > k_) entries_.pop_back();
    }

    const std::vector<std::pair<double, uint32_t>>& entries() const { return entries_; }

private:
    size_t k_;
    std::vector<std::pair<double, uint32_t>> entries_;
};

std::vector<Edge> concat_rows(std::vector<std::vector<Edge>>&& per_row) {
    size_t total = 0;
    for (const auto& r : per_row) total += r.size();
    std::vector<Edge> edges;
    edges.reserve(total);
    for (auto& r : per_row) edges.insert(edges.end(), r.begin(), r.end());
    return edges;
}

}  // namespace

SparseGraph semantic_graph(const embed::EmbeddingMatrix& items, int k, double alpha) {
    if (items.rows < 2) throw std::invalid_argument("semantic_graph: need at least 2 items");
    if (k < 1) throw std::invalid_argument("semantic_graph: k must be >= 1");

    const size_t n = items.rows, d = items.dim;
    std::vector<double> norms(n);
    for (size_t a = 0; a < n; ++a) {
        const double* x = items.row(a);
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) s += x[j] * x[j];
        if (s == 0.0) throw ZeroNormRow(a);
        norms[a] = std::sqrt(s);
    }

    std::vector<std::vector<Edge>> per_row(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (long long aa = 0; aa < static_cast<long long>(n); ++aa) {
        const size_t a = static_cast<size_t>(aa);
        const double* xa = items.row(a);
        TopK top(static_cast<size_t>(k));
        for (size_t b = 0; b < n; ++b) {
            if (b == a) continue;
            const double* xb = items.row(b);
            double dot = 0.0;
            for (size_t j = 0; j < d; ++j) dot += xa[j] * xb[j];
            top.offer(dot / (norms[a] * norms[b]), static_cast<uint32_t>(b));
        }
        auto& row = per_row[a];
        for (const auto& [sim, b] : top.entries())
            if (sim >= alpha) row.push_back({static_cast<uint32_t>(a), b, 1.0});
        std::sort(row.begin(), row.end(), [](const Edge& x, const Edge& y) { return x.dst < y.dst; });
    }

    SparseGraph g;
    g.n = static_cast<uint32_t>(n);
    g.stage = Stage::semantic;
    g.edges = concat_rows(std::move(per_row));
    return g;
}

SparseGraph cooccur_graph(const corpus::InteractionMatrix& train, int k) {
    if (train.n_items == 0 || train.n_pairs() == 0)
        throw std::invalid_argument("cooccur_graph: empty interaction matrix");
    if (k < 1) throw std::invalid_argument("cooccur_graph: k must be >= 1");

    const size_t n = train.n_items;
    std::vector<std::vector<Edge>> per_row(n);
#pragma omp parallel
    {
        std::vector<uint32_t> inter(n, 0);
        std::vector<uint32_t> touched;
#pragma omp for schedule(dynamic, 32)
        for (long long aa = 0; aa < static_cast<long long>(n); ++aa) {
            const auto a = static_cast<uint32_t>(aa);
            const double deg_a = static_cast<double>(train.by_item[a].size());
            for (uint32_t u : train.by_item[a]) {
                for (uint32_t b : train.by_user[u]) {
                    if (b == a) continue;
                    if (inter[b]++ == 0) touched.push_back(b);
                }
            }
            TopK top(static_cast<size_t>(k));
            for (uint32_t b : touched) {
                double i = static_cast<double>(inter[b]);
                double uni = deg_a + static_cast<double>(train.by_item[b].size()) - i;
                top.offer(i / uni, b);
                inter[b] = 0;
            }
            touched.clear();
            auto& row = per_row[a];
            for (const auto& [c, b] : top.entries()) row.push_back({a, b, c});
            std::sort(row.begin(), row.end(),
                      [](const Edge& x, const Edge& y) { return x.dst < y.dst; });
        }
    }

    SparseGraph g;
    g.n = static_cast<uint32_t>(n);
    g.stage = Stage::cooccur;
    g.edges = concat_rows(std::move(per_row));
    return g;
}

SparseGraph merge(const SparseGraph& semantic, const SparseGraph& cooccur) {
    if (semantic.n != cooccur.n) throw DimMismatch("merge: item counts differ");
    if (semantic.stage != Stage::semantic || cooccur.stage != Stage::cooccur)
        throw std::invalid_argument("merge: expects a semantic and a cooccur graph");

    SparseGraph g;
    g.n = semantic.n;
    g.stage = Stage::merged;
    g.edges.reserve(semantic.edges.size() + cooccur.edges.size());
    auto key = [](const Edge& e) { return (static_cast<uint64_t>(e.src) << 32) | e.dst; };
    size_t i = 0, j = 0;
    while (i < semantic.edges.size() || j < cooccur.edges.size()) {
        if (j == cooccur.edges.size() ||
            (i < semantic.edges.size() && key(semantic.edges[i]) < key(cooccur.edges[j]))) {
            g.edges.push_back(semantic.edges[i++]);
        } else if (i == semantic.edges.size() || key(cooccur.edges[j]) < key(semantic.edges[i])) {
            g.edges.push_back(cooccur.edges[j++]);
        } else {
            Edge e = semantic.edges[i];
            e.weight += cooccur.edges[j].weight;
            g.edges.push_back(e);
            ++i;
            ++j;
        }
    }
    return g;
}

SparseGraph symmetrize(const SparseGraph& g) {
    SparseGraph out;
    out.n = g.n;
    out.stage = g.stage;
    out.edges = g.edges;
    for (const Edge& e : g.edges) out.edges.push_back({e.dst, e.src, e.weight});
    std::sort(out.edges.begin(), out.edges.end(), [](const Edge& x, const Edge& y) {
        return x.src != y.src ? x.src < y.src : x.dst < y.dst;
    });
    // keep the max weight of the two directions
    std::vector<Edge> dedup;
    dedup.reserve(out.edges.size());
    for (const Edge& e : out.edges) {
        if (!dedup.empty() && dedup.back().src == e.src && dedup.back().dst == e.dst)
            dedup.back().weight = std::max(dedup.back().weight, e.weight);
        else
            dedup.push_back(e);
    }
    out.edges = std::move(dedup);
    return out;
}

std::pair<SparseGraph, DegreeVector> normalize(const SparseGraph& merged) {
    if (merged.stage != Stage::merged)
        throw std::invalid_argument("normalize: expects a merged graph");

    DegreeVector deg;
    deg.values.assign(merged.n, 0.0);
    for (const Edge& e : merged.edges) deg.values[e.src] += e.weight;

    SparseGraph g;
    g.n = merged.n;
    g.stage = Stage::normalized;
    g.edges.reserve(merged.edges.size());
    for (const Edge& e : merged.edges) {
        if (deg.values[e.dst] == 0.0) continue;  // factor 0, edge vanishes
        g.edges.push_back({e.src, e.dst, e.weight / (std::sqrt(deg.values[e.src]) * std::sqrt(deg.values[e.dst]))});
    }
    return {std::move(g), std::move(deg)};
}

embed::EmbeddingMatrix propagate(const SparseGraph& normalized, const embed::EmbeddingMatrix& e0,
                                 int layers) {
    if (normalized.stage != Stage::normalized)
        throw std::invalid_argument("propagate: expects a normalized graph");
    if (e0.rows != normalized.n) throw DimMismatch("propagate: feature rows != item count");
    if (layers < 0) throw std::invalid_argument("propagate: layers must be >= 0");

    const size_t n = e0.rows, d = e0.dim;
    embed::EmbeddingMatrix acc = e0;
    embed::EmbeddingMatrix cur = e0;
    embed::EmbeddingMatrix next(n, d);
    auto offsets = normalized.row_offsets();

    for (int l = 0; l < layers; ++l) {
#pragma omp parallel for schedule(static)
        for (long long aa = 0; aa < static_cast<long long>(n); ++aa) {
            const size_t a = static_cast<size_t>(aa);
            double* out = next.row(a);
            std::fill(out, out + d, 0.0);
            for (size_t e = offsets[a]; e < offsets[a + 1]; ++e) {
                const Edge& edge = normalized.edges[e];
                const double w = edge.weight;
                const double* src = cur.row(edge.dst);
                for (size_t j = 0; j < d; ++j) out[j] += w * src[j];
            }
        }
        for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += next.data[i];
        std::swap(cur, next);
    }
    return acc;
}

size_t Histogram::mass_below(double value) const {
    size_t mass = 0;
    double w = bin_width();
    for (size_t b = 0; b < counts.size(); ++b) {
        if (lo + static_cast<double>(b + 1) * w <= value) mass += counts[b];
    }
    return mass;
}

Histogram edge_similarity_histogram(const embed::EmbeddingMatrix& items, int k, int bins) {
    if (bins < 1) throw std::invalid_argument("edge_similarity_histogram: bins must be >= 1");
    if (items.rows < 2) throw std::invalid_argument("edge_similarity_histogram: need at least 2 items");

    const size_t n = items.rows, d = items.dim;
    std::vector<double> norms(n);
    for (size_t a = 0; a < n; ++a) {
        const double* x = items.row(a);
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) s += x[j] * x[j];
        if (s == 0.0) throw ZeroNormRow(a);
        norms[a] = std::sqrt(s);
    }

    Histogram h;
    h.counts.assign(static_cast<size_t>(bins), 0);
    const double width = h.bin_width();
#pragma omp parallel
    {
        std::vector<size_t> local(static_cast<size_t>(bins), 0);
#pragma omp for schedule(dynamic, 16)
        for (long long aa = 0; aa < static_cast<long long>(n); ++aa) {
            const size_t a = static_cast<size_t>(aa);
            const double* xa = items.row(a);
            TopK top(static_cast<size_t>(k));
            for (size_t b = 0; b < n; ++b) {
                if (b == a) continue;
                const double* xb = items.row(b);
                double dot = 0.0;
                for (size_t j = 0; j < d; ++j) dot += xa[j] * xb[j];
                top.offer(dot / (norms[a] * norms[b]), static_cast<uint32_t>(b));
            }
            for (const auto& [sim, b] : top.entries()) {
                double s = std::clamp(sim, h.lo, h.hi);
                auto bin = static_cast<size_t>(std::min(
                    static_cast<double>(bins - 1), std::floor((s - h.lo) / width)));
                ++local[bin];
            }
        }
#pragma omp critical
        for (size_t b = 0; b < local.size(); ++b) h.counts[b] += local[b];
    }
    for (size_t c : h.counts) h.total += c;
    return h;
}

void export_graph(const SparseGraph& g, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write graph file: " + path.string());
    out << "n=" << g.n << " stage=" << stage_name(g.stage) << '\n';
    char buf[64];
    for (const Edge& e : g.edges) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
        out << e.src << '\t' << e.dst << '\t' << buf << '\n';
    }
    if (!out) throw IoError("short write: " + path.string());
}

SparseGraph import_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open graph file: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    SparseGraph g;
    {
        unsigned long long n = 0;
        char tag[32] = {0};
        if (std::sscanf(line.c_str(), "n=%llu stage=%31s", &n, tag) != 2)
            throw ParseError(1, "bad header: " + line);
        g.n = static_cast<uint32_t>(n);
        try {
            g.stage = stage_from_name(tag);
        } catch (const std::invalid_argument& e) {
            throw ParseError(1, e.what());
        }
    }

    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        unsigned long long src = 0, dst = 0;
        double w = 0.0;
        char extra = 0;
        int got = std::sscanf(line.c_str(), "%llu\t%llu\t%lf %c", &src, &dst, &w, &extra);
        if (got != 3) throw ParseError(line_no, "expected `src<TAB>dst<TAB>weight`");
        if (src >= g.n || dst >= g.n) throw ParseError(line_no, "index out of range");
        if (src == dst) throw ParseError(line_no, "self-loop");
        g.edges.push_back({static_cast<uint32_t>(src), static_cast<uint32_t>(dst), w});
    }
    auto cmp = [](const Edge& x, const Edge& y) {
        return x.src != y.src ? x.src < y.src : x.dst < y.dst;
    };
    if (!std::is_sorted(g.edges.begin(), g.edges.end(), cmp))
        std::sort(g.edges.begin(), g.edges.end(), cmp);
    for (size_t i = 1; i < g.edges.size(); ++i)
        if (g.edges[i - 1].src == g.edges[i].src && g.edges[i - 1].dst == g.edges[i].dst)
            throw ParseError(0, "duplicate edge " + std::to_string(g.edges[i].src) + "->" +
                                    std::to_string(g.edges[i].dst));
    return g;
}

}  // namespace mllmrec::graph
