#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mllmrec/corpus.hpp"
#include "mllmrec/embedding.hpp"
#include "mllmrec/rng.hpp"

namespace mllmrec::model {

// Two-layer projection h = LeakyReLU(x W1 + b1) W2 + b2.
// W1 is d_in x d_hidden row-major, W2 is d_hidden x d_out.
struct MlpParams {
    size_t d_in = 0, d_hidden = 0, d_out = 0;
    std::vector<double> w1, b1, w2, b2;

    MlpParams() = default;
    MlpParams(size_t din, size_t dh, size_t dout)
        : d_in(din), d_hidden(dh), d_out(dout),
          w1(din * dh, 0.0), b1(dh, 0.0), w2(dh * dout, 0.0), b2(dout, 0.0) {}

    void fill(double v);
    bool all_finite() const;
    size_t n_params() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
    double& flat(size_t i);
    double flat(size_t i) const;
};

struct ModelParams {
    MlpParams user_mlp;
    MlpParams item_mlp;

    bool all_finite() const { return user_mlp.all_finite() && item_mlp.all_finite(); }
    uint64_t checksum() const;
};

struct TrainConfig {
    size_t batch_size = 2048;
    double learning_rate = 1e-3;
    size_t d = 64;
    size_t d1 = 256;
    size_t max_epochs = 1000;
    size_t patience = 20;  // epochs without validation R@20 improvement
    uint64_t seed = 42;
    double leaky_slope = 0.01;
    double weight_decay = 0.0;
};

struct Triplet {
    uint32_t user;
    uint32_t pos;
    uint32_t neg;
};

using TripletBatch = std::vector<Triplet>;

// Same layout as ModelParams, used for gradient accumulation.
struct Gradients {
    MlpParams user_mlp;
    MlpParams item_mlp;
};

struct AdamState {
    MlpParams m_user, v_user, m_item, v_item;
    size_t t = 0;  // completed steps
};

ModelParams xavier_init(size_t d_t, size_t d1, size_t d, uint64_t seed);

void mlp_forward(const MlpParams& p, const double* x, double* h, double leaky_slope);
std::vector<double> mlp_forward(const MlpParams& p, const std::vector<double>& x, double leaky_slope);

double score(const std::vector<double>& h_user, const std::vector<double>& h_item);

// Projects every row of a matrix through the MLP, in parallel.
embed::EmbeddingMatrix project_all(const MlpParams& p, const embed::EmbeddingMatrix& inputs,
                                   double leaky_slope);

// BPR loss over the batch with hand-derived backprop through both MLPs.
// Input embeddings are frozen. Returns the loss and fills `out`.
// Accumulation runs over fixed-size triplet blocks reduced in block order,
// so the result does not depend on the number of threads.
double bpr_loss_and_grads(const ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                          const embed::EmbeddingMatrix& item_embeds, const TripletBatch& batch,
                          double leaky_slope, double weight_decay, Gradients& out);

// One Adam update, beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected.
// t is the 1-based step number.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr, size_t t);

// Uniform over observed (u, i) train pairs; negatives drawn uniformly over
// items with rejection of the user's train items.
TripletBatch sample_triplets(const corpus::InteractionMatrix& train, size_t batch_size, Rng& rng);

struct EpochStat {
    size_t epoch = 0;  // 1-based
    double loss = 0.0;
    double recall20 = 0.0;
};

struct TrainResult {
    ModelParams best_params;
    std::vector<EpochStat> history;
    size_t best_epoch = 0;
    AdamState state;  // optimizer state after the last completed epoch
};

// Epoch loop with per-epoch validation R@20, best-parameter tracking and
// early stopping once `patience` consecutive epochs fail to improve.
TrainResult train(const corpus::DatasetSplit& split, const embed::EmbeddingMatrix& user_embeds,
                  const embed::EmbeddingMatrix& item_embeds_propagated, const TrainConfig& cfg);

std::string history_csv(const std::vector<EpochStat>& history);

// Tracks the best validation metric and the stop condition.
class EarlyStopper {
public:
    explicit EarlyStopper(size_t patience) : patience_(patience) {}

    // Returns true if this epoch's value is a strict improvement.
    bool record(double value) {
        ++epoch_;
        if (epoch_ == 1 || value > best_) {
            best_ = value;
            best_epoch_ = epoch_;
            since_best_ = 0;
            return true;
        }
        ++since_best_;
        return false;
    }

    bool should_stop() const { return since_best_ >= patience_; }
    size_t best_epoch() const { return best_epoch_; }
    double best_value() const { return best_; }

private:
    size_t patience_;
    size_t epoch_ = 0;
    size_t best_epoch_ = 0;
    size_t since_best_ = 0;
    double best_ = 0.0;
};

// Checkpoint container: magic "CKP1", a section table, and one embedding-
// store blob per section plus a raw metadata section.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const AdamState& state, size_t epoch);

struct Checkpoint {
    ModelParams params;
    AdamState state;
    size_t epoch = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mllmrec::model
