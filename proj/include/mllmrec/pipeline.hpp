#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mllmrec/corpus.hpp"
#include "mllmrec/descriptor.hpp"
#include "mllmrec/embedding.hpp"
#include "mllmrec/eval.hpp"
#include "mllmrec/graph.hpp"
#include "mllmrec/model.hpp"

namespace mllmrec::pipeline {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitPartial = 2;
constexpr int kExitStageMissing = 3;
constexpr int kExitConfig = 4;

struct PipelineConfig {
    std::string dataset = "dataset";
    std::filesystem::path interactions;
    std::filesystem::path item_meta;
    std::filesystem::path workdir = "work";
    int kcore = 5;
    uint64_t seed = 42;
    std::array<double, 3> ratios{0.8, 0.1, 0.1};

    desc::MllmClientConfig mllm;
    size_t behavior_cap = 50;

    std::string encoder = "stub";  // "stub" or "file"
    size_t encoder_dim = 32;
    std::filesystem::path encoder_items_file;
    std::filesystem::path encoder_users_file;

    graph::GraphConfig graph;
    model::TrainConfig train;

    std::vector<size_t> eval_ks{10, 20};
    bool topn_dump = false;
};

PipelineConfig parse_config_text(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
void validate_config(const PipelineConfig& cfg);
void apply_env_overrides(PipelineConfig& cfg);
std::string config_hash_hex(const PipelineConfig& cfg);
std::string config_help();

struct StageOptions {
    bool force = false;
    bool stub = false;
    bool grid = false;
    bool histogram = false;
    std::optional<uint64_t> seed;
};

int cmd_prepare(const PipelineConfig& cfg, const StageOptions& opts);
int cmd_describe(const PipelineConfig& cfg, const StageOptions& opts);
int cmd_encode(const PipelineConfig& cfg, const StageOptions& opts);
int cmd_build_graph(const PipelineConfig& cfg, const StageOptions& opts);
int cmd_train(const PipelineConfig& cfg, const StageOptions& opts);
int cmd_evaluate(const PipelineConfig& cfg, const StageOptions& opts);
int cmd_export_graph(const PipelineConfig& cfg, const StageOptions& opts,
                     const std::filesystem::path& out);
int cmd_ablate(const PipelineConfig& cfg, const StageOptions& opts,
               const std::vector<std::string>& variants);

// Builds the variant item-item graph and propagated features.
//   full:    thresholded semantic KNN + co-occurrence, L-layer propagation
//   no_gd:   similarity threshold disabled (pure KNN)
//   no_te:   co-occurrence graph omitted
//   no_gcn:  propagation skipped, raw encoder features
struct GraphBuild {
    graph::SparseGraph merged;
    embed::EmbeddingMatrix features;
};
GraphBuild build_variant_graph(const corpus::InteractionMatrix& train,
                               const embed::EmbeddingMatrix& items, graph::GraphConfig gcfg,
                               const std::string& variant);

// Trains and evaluates each variant off the encode-stage artifacts.
std::map<std::string, eval::MetricsReport> run_ablation(const PipelineConfig& cfg,
                                                        const std::vector<std::string>& variants,
                                                        uint64_t seed);

// Loads the persisted split with the persisted id maps.
corpus::DatasetSplit load_split(const PipelineConfig& cfg);

}  // namespace mllmrec::pipeline
