// Benchmark comparing the OpenMP kernels against the serial reference
// implementations on synthetic data.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mllmrec/corpus.hpp"
#include "mllmrec/embedding.hpp"
#include "mllmrec/eval.hpp"
#include "mllmrec/graph.hpp"
#include "mllmrec/model.hpp"
#include "mllmrec/reference.hpp"
#include "mllmrec/rng.hpp"

using namespace mllmrec;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

template <typename F>
double time_ms(F&& fn) {
    double t0 = now_ms();
    fn();
    return now_ms() - t0;
}

embed::EmbeddingMatrix random_embeddings(size_t rows, size_t dim, uint64_t seed) {
    embed::EmbeddingMatrix m(rows, dim);
    Rng rng(seed);
    for (double& v : m.data) v = rng.normal();
    return m;
}

corpus::InteractionMatrix random_interactions(size_t n_users, size_t n_items, size_t deg,
                                              uint64_t seed) {
    corpus::RawInteractions raw;
    Rng rng(seed);
    for (size_t u = 0; u < n_users; ++u) {
        for (size_t j = 0; j < deg; ++j) {
            size_t i = rng.uniform_below(n_items);
            raw.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), std::nullopt});
        }
    }
    return corpus::index(raw);
}

void report(const char* kernel, double serial_ms, double parallel_ms, bool agree) {
    std::printf("%-22s %10.1f ms %10.1f ms %8.2fx   %s\n", kernel, serial_ms, parallel_ms,
                serial_ms / parallel_ms, agree ? "outputs agree" : "OUTPUTS DIFFER");
}

bool dense_equal(const std::vector<double>& dense, const graph::SparseGraph& g, double tol) {
    std::vector<double> got = ref::graph_to_dense(g);
    if (got.size() != dense.size()) return false;
    for (size_t i = 0; i < dense.size(); ++i)
        if (std::fabs(got[i] - dense[i]) > tol) return false;
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    size_t n_items = 800, dim = 64, n_users = 2500;
    if (argc > 1) n_items = std::stoul(argv[1]);
    if (argc > 2) n_users = std::stoul(argv[2]);

#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both columns run serially\n");
#endif
    std::printf("%zu items, dim %zu, %zu users\n\n", n_items, dim, n_users);
    std::printf("%-22s %13s %13s %9s\n", "kernel", "serial ref", "parallel", "speedup");

    embed::EmbeddingMatrix items = random_embeddings(n_items, dim, 7);
    corpus::InteractionMatrix train = random_interactions(n_users, n_items, 25, 11);

    const int k = 10;
    const double alpha = 0.3;

    graph::SparseGraph semantic;
    std::vector<double> semantic_ref;
    double t_ref = time_ms([&] { semantic_ref = ref::semantic_dense(items, k, alpha); });
    double t_par = time_ms([&] { semantic = graph::semantic_graph(items, k, alpha); });
    report("semantic_graph", t_ref, t_par, dense_equal(semantic_ref, semantic, 0.0));

    graph::SparseGraph cooc;
    std::vector<double> cooc_ref;
    t_ref = time_ms([&] { cooc_ref = ref::cooccur_dense(train, k); });
    t_par = time_ms([&] { cooc = graph::cooccur_graph(train, k); });
    report("cooccur_graph", t_ref, t_par, dense_equal(cooc_ref, cooc, 0.0));

    graph::SparseGraph merged = graph::merge(semantic, cooc);
    auto [normalized, degrees] = graph::normalize(merged);
    std::vector<double> merged_ref = ref::merge_dense(semantic_ref, cooc_ref, n_items);
    std::vector<double> norm_ref = ref::normalize_dense(merged_ref, n_items);

    embed::EmbeddingMatrix prop;
    embed::EmbeddingMatrix prop_ref;
    t_ref = time_ms([&] { prop_ref = ref::propagate_dense(norm_ref, items, 2); });
    t_par = time_ms([&] { prop = graph::propagate(normalized, items, 2); });
    bool agree = prop.data.size() == prop_ref.data.size();
    for (size_t i = 0; agree && i < prop.data.size(); ++i)
        agree = std::fabs(prop.data[i] - prop_ref.data[i]) <= 1e-9;
    report("propagate(L=2)", t_ref, t_par, agree);

    // training kernel: blocked parallel gradients vs naive serial accumulation
    model::TrainConfig tcfg;
    tcfg.d1 = 256;
    tcfg.d = 64;
    model::ModelParams params = model::xavier_init(dim, tcfg.d1, tcfg.d, 3);
    Rng rng(5);
    model::TripletBatch batch = model::sample_triplets(train, 4096, rng);
    embed::EmbeddingMatrix users_emb = random_embeddings(train.n_users, dim, 13);

    model::Gradients g_par, g_ser;
    double loss_par = 0, loss_ser = 0;
    t_ref = time_ms([&] {
        loss_ser = ref::bpr_grads_serial(params, users_emb, prop, batch, 0.01, 0.0, g_ser);
    });
    t_par = time_ms([&] {
        loss_par = model::bpr_loss_and_grads(params, users_emb, prop, batch, 0.01, 0.0, g_par);
    });
    agree = std::fabs(loss_par - loss_ser) <= 1e-7 * std::fabs(loss_ser);
    for (size_t i = 0; agree && i < g_par.user_mlp.n_params(); ++i)
        agree = std::fabs(g_par.user_mlp.flat(i) - g_ser.user_mlp.flat(i)) <=
                1e-7 * (1.0 + std::fabs(g_ser.user_mlp.flat(i)));
    report("bpr_loss_and_grads", t_ref, t_par, agree);

    // ranking kernel
    std::vector<uint32_t> eval_users;
    for (uint32_t u = 0; u < std::min<size_t>(train.n_users, 256); ++u) eval_users.push_back(u);
    eval::RankingResult ranked;
    std::vector<std::vector<uint32_t>> ranked_ref(eval_users.size());
    t_ref = time_ms([&] {
        for (size_t idx = 0; idx < eval_users.size(); ++idx)
            ranked_ref[idx] = ref::rank_user_serial(params, users_emb, prop, eval_users[idx],
                                                    train.by_user[eval_users[idx]], 0.01);
    });
    t_par = time_ms([&] {
        ranked = eval::rank_all(params, users_emb, prop, train, eval_users, 20, 0.01);
    });
    agree = true;
    for (size_t idx = 0; agree && idx < eval_users.size(); ++idx)
        for (size_t p = 0; agree && p < ranked.topn[idx].size(); ++p)
            agree = ranked.topn[idx][p] == ranked_ref[idx][p];
    report("rank_all(top-20)", t_ref, t_par, agree);

    return 0;
}
