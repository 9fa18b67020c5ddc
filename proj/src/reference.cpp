#include "mllmrec/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mllmrec/errors.hpp"

namespace mllmrec::ref {

std::vector<double> dense_cosine(const embed::EmbeddingMatrix& items) {
    const size_t n = items.rows, d = items.dim;
    std::vector<double> norms(n);
    for (size_t a = 0; a < n; ++a) {
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) s += items.at(a, j) * items.at(a, j);
        if (s == 0.0) throw ZeroNormRow(a);
        norms[a] = std::sqrt(s);
    }
    std::vector<double> sim(n * n, 0.0);
    for (size_t a = 0; a < n; ++a)
        for (size_t b = 0; b < n; ++b) {
            double dot = 0.0;
            for (size_t j = 0; j < d; ++j) dot += items.at(a, j) * items.at(b, j);
            sim[a * n + b] = dot / (norms[a] * norms[b]);
        }
    return sim;
}

namespace {

// indices of the k best values under (value desc, index asc)
std::vector<uint32_t> top_k_indices(const std::vector<double>& values,
                                    const std::vector<uint32_t>& candidates, size_t k) {
    std::vector<uint32_t> order = candidates;
    std::sort(order.begin(), order.end(), [&](uint32_t x, uint32_t y) {
        if (values[x] != values[y]) return values[x] > values[y];
        return x < y;
    });
    if (order.size() > k) order.resize(k);
    return order;
}

}  // namespace

std::vector<double> semantic_dense(const embed::EmbeddingMatrix& items, int k, double alpha) {
    const size_t n = items.rows;
    std::vector<double> sim = dense_cosine(items);
    std::vector<double> adj(n * n, 0.0);
    for (size_t a = 0; a < n; ++a) {
        std::vector<double> row(sim.begin() + static_cast<long>(a * n),
                                sim.begin() + static_cast<long>((a + 1) * n));
        std::vector<uint32_t> candidates;
        for (uint32_t b = 0; b < n; ++b)
            if (b != a) candidates.push_back(b);
        for (uint32_t b : top_k_indices(row, candidates, static_cast<size_t>(k)))
            if (row[b] >= alpha) adj[a * n + b] = 1.0;
    }
    return adj;
}

std::vector<double> cooccur_dense(const corpus::InteractionMatrix& train, int k) {
    const size_t n = train.n_items;
    std::vector<double> jac(n * n, 0.0);
    for (size_t a = 0; a < n; ++a) {
        for (size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            const auto& ua = train.by_item[a];
            const auto& ub = train.by_item[b];
            std::vector<uint32_t> common;
            std::set_intersection(ua.begin(), ua.end(), ub.begin(), ub.end(),
                                  std::back_inserter(common));
            if (common.empty()) continue;
            double inter = static_cast<double>(common.size());
            double uni = static_cast<double>(ua.size() + ub.size()) - inter;
            jac[a * n + b] = inter / uni;
        }
    }
    std::vector<double> adj(n * n, 0.0);
    for (size_t a = 0; a < n; ++a) {
        std::vector<double> row(jac.begin() + static_cast<long>(a * n),
                                jac.begin() + static_cast<long>((a + 1) * n));
        std::vector<uint32_t> candidates;
        for (uint32_t b = 0; b < n; ++b)
            if (b != a && row[b] > 0.0) candidates.push_back(b);
        for (uint32_t b : top_k_indices(row, candidates, static_cast<size_t>(k)))
            adj[a * n + b] = row[b];
    }
    return adj;
}

std::vector<double> merge_dense(const std::vector<double>& semantic,
                                const std::vector<double>& cooccur, size_t n) {
    std::vector<double> out(n * n, 0.0);
    for (size_t i = 0; i < n * n; ++i) out[i] = semantic[i] + cooccur[i];
    return out;
}

std::vector<double> normalize_dense(const std::vector<double>& merged, size_t n) {
    std::vector<double> rowsum(n, 0.0);
    for (size_t a = 0; a < n; ++a)
        for (size_t b = 0; b < n; ++b) rowsum[a] += merged[a * n + b];
    std::vector<double> out(n * n, 0.0);
    for (size_t a = 0; a < n; ++a)
        for (size_t b = 0; b < n; ++b) {
            double w = merged[a * n + b];
            if (w == 0.0 || rowsum[a] == 0.0 || rowsum[b] == 0.0) continue;
            out[a * n + b] = w / (std::sqrt(rowsum[a]) * std::sqrt(rowsum[b]));
        }
    return out;
}

embed::EmbeddingMatrix propagate_dense(const std::vector<double>& normalized,
                                       const embed::EmbeddingMatrix& e0, int layers) {
    const size_t n = e0.rows, d = e0.dim;
    embed::EmbeddingMatrix acc = e0;
    embed::EmbeddingMatrix cur = e0;
    for (int l = 0; l < layers; ++l) {
        embed::EmbeddingMatrix next(n, d);
        for (size_t a = 0; a < n; ++a)
            for (size_t b = 0; b < n; ++b) {
                double w = normalized[a * n + b];
                if (w == 0.0) continue;
                for (size_t j = 0; j < d; ++j) next.at(a, j) += w * cur.at(b, j);
            }
        for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += next.data[i];
        cur = std::move(next);
    }
    return acc;
}

std::vector<double> graph_to_dense(const graph::SparseGraph& g) {
    std::vector<double> out(static_cast<size_t>(g.n) * g.n, 0.0);
    for (const auto& e : g.edges) out[static_cast<size_t>(e.src) * g.n + e.dst] = e.weight;
    return out;
}

std::vector<double> mlp_forward_serial(const model::MlpParams& p, const double* x, double slope) {
    std::vector<double> z(p.d_hidden, 0.0);
    for (size_t j = 0; j < p.d_hidden; ++j) {
        double s = p.b1[j];
        for (size_t i = 0; i < p.d_in; ++i) s += x[i] * p.w1[i * p.d_hidden + j];
        z[j] = s >= 0.0 ? s : slope * s;
    }
    std::vector<double> h(p.d_out, 0.0);
    for (size_t o = 0; o < p.d_out; ++o) {
        double s = p.b2[o];
        for (size_t j = 0; j < p.d_hidden; ++j) s += z[j] * p.w2[j * p.d_out + o];
        h[o] = s;
    }
    return h;
}

std::vector<uint32_t> rank_user_serial(const model::ModelParams& params,
                                       const embed::EmbeddingMatrix& user_embeds,
                                       const embed::EmbeddingMatrix& item_feats, uint32_t user,
                                       const std::vector<uint32_t>& train_items, double slope) {
    std::vector<double> hu = mlp_forward_serial(params.user_mlp, user_embeds.row(user), slope);
    std::vector<double> scores(item_feats.rows, 0.0);
    for (size_t i = 0; i < item_feats.rows; ++i) {
        std::vector<double> hi = mlp_forward_serial(params.item_mlp, item_feats.row(i), slope);
        double s = 0.0;
        for (size_t o = 0; o < hu.size(); ++o) s += hu[o] * hi[o];
        scores[i] = s;
    }
    std::vector<uint32_t> order;
    for (uint32_t i = 0; i < item_feats.rows; ++i)
        if (!std::binary_search(train_items.begin(), train_items.end(), i)) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return order;
}

UserMetrics metrics_serial(const std::vector<uint32_t>& ranking,
                           const std::vector<uint32_t>& truth_sorted, size_t k) {
    UserMetrics m;
    size_t hits = 0;
    double dcg = 0.0;
    for (size_t pos = 0; pos < std::min(k, ranking.size()); ++pos) {
        if (std::binary_search(truth_sorted.begin(), truth_sorted.end(), ranking[pos])) {
            ++hits;
            dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
        }
    }
    double idcg = 0.0;
    for (size_t pos = 0; pos < std::min(k, truth_sorted.size()); ++pos)
        idcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
    m.recall = static_cast<double>(hits) / static_cast<double>(truth_sorted.size());
    m.ndcg = idcg == 0.0 ? 0.0 : dcg / idcg;
    return m;
}

namespace {

double l2_penalty(const model::MlpParams& p) {
    double s = 0.0;
    for (double v : p.w1) s += v * v;
    for (double v : p.b1) s += v * v;
    for (double v : p.w2) s += v * v;
    for (double v : p.b2) s += v * v;
    return s;
}

}  // namespace

double bpr_loss_serial(const model::ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                       const embed::EmbeddingMatrix& item_embeds, const model::TripletBatch& batch,
                       double leaky_slope, double weight_decay) {
    double loss = 0.0;
    for (const auto& t : batch) {
        std::vector<double> hu = mlp_forward_serial(params.user_mlp, user_embeds.row(t.user), leaky_slope);
        std::vector<double> hp = mlp_forward_serial(params.item_mlp, item_embeds.row(t.pos), leaky_slope);
        std::vector<double> hn = mlp_forward_serial(params.item_mlp, item_embeds.row(t.neg), leaky_slope);
        double diff = 0.0;
        for (size_t o = 0; o < hu.size(); ++o) diff += hu[o] * (hp[o] - hn[o]);
        // -log(sigmoid(diff)), numerically stable
        loss += diff >= 0.0 ? std::log1p(std::exp(-diff)) : -diff + std::log1p(std::exp(diff));
    }
    if (weight_decay != 0.0)
        loss += weight_decay * (l2_penalty(params.user_mlp) + l2_penalty(params.item_mlp));
    return loss;
}

namespace {

// gradient of one MLP for one input/output-gradient pair
void backprop_serial(const model::MlpParams& p, const double* x, const std::vector<double>& dh,
                     double slope, model::MlpParams& grad) {
    std::vector<double> zraw(p.d_hidden, 0.0), act(p.d_hidden, 0.0);
    for (size_t j = 0; j < p.d_hidden; ++j) {
        double s = p.b1[j];
        for (size_t i = 0; i < p.d_in; ++i) s += x[i] * p.w1[i * p.d_hidden + j];
        zraw[j] = s;
        act[j] = s >= 0.0 ? s : slope * s;
    }
    for (size_t j = 0; j < p.d_hidden; ++j)
        for (size_t o = 0; o < p.d_out; ++o) grad.w2[j * p.d_out + o] += act[j] * dh[o];
    for (size_t o = 0; o < p.d_out; ++o) grad.b2[o] += dh[o];
    for (size_t j = 0; j < p.d_hidden; ++j) {
        double da = 0.0;
        for (size_t o = 0; o < p.d_out; ++o) da += p.w2[j * p.d_out + o] * dh[o];
        double dz = da * (zraw[j] >= 0.0 ? 1.0 : slope);
        for (size_t i = 0; i < p.d_in; ++i) grad.w1[i * p.d_hidden + j] += x[i] * dz;
        grad.b1[j] += dz;
    }
}

}  // namespace

double bpr_grads_serial(const model::ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                        const embed::EmbeddingMatrix& item_embeds, const model::TripletBatch& batch,
                        double leaky_slope, double weight_decay, model::Gradients& out) {
    out.user_mlp = model::MlpParams(params.user_mlp.d_in, params.user_mlp.d_hidden, params.user_mlp.d_out);
    out.item_mlp = model::MlpParams(params.item_mlp.d_in, params.item_mlp.d_hidden, params.item_mlp.d_out);
    double loss = 0.0;
    for (const auto& t : batch) {
        std::vector<double> hu = mlp_forward_serial(params.user_mlp, user_embeds.row(t.user), leaky_slope);
        std::vector<double> hp = mlp_forward_serial(params.item_mlp, item_embeds.row(t.pos), leaky_slope);
        std::vector<double> hn = mlp_forward_serial(params.item_mlp, item_embeds.row(t.neg), leaky_slope);
        double diff = 0.0;
        for (size_t o = 0; o < hu.size(); ++o) diff += hu[o] * (hp[o] - hn[o]);
        loss += diff >= 0.0 ? std::log1p(std::exp(-diff)) : -diff + std::log1p(std::exp(diff));
        double gd = -1.0 / (1.0 + std::exp(diff));

        std::vector<double> dh(hu.size());
        for (size_t o = 0; o < hu.size(); ++o) dh[o] = gd * (hp[o] - hn[o]);
        backprop_serial(params.user_mlp, user_embeds.row(t.user), dh, leaky_slope, out.user_mlp);
        for (size_t o = 0; o < hu.size(); ++o) dh[o] = gd * hu[o];
        backprop_serial(params.item_mlp, item_embeds.row(t.pos), dh, leaky_slope, out.item_mlp);
        for (size_t o = 0; o < hu.size(); ++o) dh[o] = -gd * hu[o];
        backprop_serial(params.item_mlp, item_embeds.row(t.neg), dh, leaky_slope, out.item_mlp);
    }
    if (weight_decay != 0.0) {
        auto add = [&](model::MlpParams& g, const model::MlpParams& p) {
            for (size_t i = 0; i < g.w1.size(); ++i) g.w1[i] += 2.0 * weight_decay * p.w1[i];
            for (size_t i = 0; i < g.b1.size(); ++i) g.b1[i] += 2.0 * weight_decay * p.b1[i];
            for (size_t i = 0; i < g.w2.size(); ++i) g.w2[i] += 2.0 * weight_decay * p.w2[i];
            for (size_t i = 0; i < g.b2.size(); ++i) g.b2[i] += 2.0 * weight_decay * p.b2[i];
        };
        add(out.user_mlp, params.user_mlp);
        add(out.item_mlp, params.item_mlp);
        loss += weight_decay * (l2_penalty(params.user_mlp) + l2_penalty(params.item_mlp));
    }
    return loss;
}

}  // namespace mllmrec::ref
