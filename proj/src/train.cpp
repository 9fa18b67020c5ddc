#include <algorithm>
#include <cmath>

#include "mllmrec/errors.hpp"
#include "mllmrec/eval.hpp"
#include "mllmrec/model.hpp"

namespace mllmrec::model {

TrainResult train(const corpus::DatasetSplit& split, const embed::EmbeddingMatrix& user_embeds,
                  const embed::EmbeddingMatrix& item_embeds_propagated, const TrainConfig& cfg) {
    if (user_embeds.dim != item_embeds_propagated.dim)
        throw ShapeMismatch("train: user and item embedding dims differ");
    if (user_embeds.rows != split.train.n_users || item_embeds_propagated.rows != split.train.n_items)
        throw ShapeMismatch("train: embedding rows do not match the split");

    const size_t d_t = user_embeds.dim;
    const size_t n_pairs = split.train.n_pairs();
    const size_t batch = std::min(cfg.batch_size, n_pairs);
    const size_t steps = (n_pairs + batch - 1) / batch;

    ModelParams params = xavier_init(d_t, cfg.d1, cfg.d, cfg.seed);
    AdamState state;
    Rng sampler(mix64(cfg.seed, 0xba7c4e5ULL));

    std::vector<uint32_t> valid_users;
    for (uint32_t u = 0; u < split.train.n_users; ++u)
        if (!split.valid[u].empty()) valid_users.push_back(u);

    TrainResult result;
    EarlyStopper stopper(cfg.patience);
    Gradients grads;
    size_t t = 0;

    for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double total_loss = 0.0;
        size_t total_triplets = 0;
        for (size_t s = 0; s < steps; ++s) {
            TripletBatch b = sample_triplets(split.train, batch, sampler);
            total_loss += bpr_loss_and_grads(params, user_embeds, item_embeds_propagated, b,
                                             cfg.leaky_slope, cfg.weight_decay, grads);
            total_triplets += b.size();
            adam_step(params, grads, state, cfg.learning_rate, ++t);
        }

        double r20 = 0.0;
        if (!valid_users.empty()) {
            eval::RankingResult ranked = eval::rank_all(params, user_embeds, item_embeds_propagated,
                                                        split.train, valid_users, 20, cfg.leaky_slope);
            r20 = eval::recall_at_k(ranked, split.valid, 20);
        }

        result.history.push_back({epoch, total_loss / static_cast<double>(total_triplets), r20});
        if (stopper.record(r20)) {
            result.best_params = params;
            result.best_epoch = epoch;
        }
        if (stopper.should_stop()) break;
    }
    if (result.best_epoch == 0) {  // no validation users at all
        result.best_params = params;
        result.best_epoch = result.history.size();
    }
    result.state = std::move(state);
    return result;
}

}  // namespace mllmrec::model
