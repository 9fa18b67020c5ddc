#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mllmrec/errors.hpp"
#include "mllmrec/pipeline.hpp"

namespace {

using namespace mllmrec;

int run_guarded(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const StageMissing& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pipeline::kExitStageMissing;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pipeline::kExitConfig;
    } catch (const ChainMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pipeline::kExitConfig;
    } catch (const BadRatios& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pipeline::kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pipeline::kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pipeline::kExitError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MLLM-driven multimodal recommender pipeline"};
    app.footer(pipeline::config_help());

    std::string config_path;
    pipeline::StageOptions opts;
    long long seed_flag = -1;
    app.add_option("--config", config_path, "pipeline config file")->required();
    app.add_option("--seed", seed_flag, "override the config seed");
    app.add_flag("--stub", opts.stub, "use the deterministic offline MLLM provider");
    app.add_flag("--force", opts.force, "redo the stage even if artifacts exist");
    app.add_flag("--grid", opts.grid, "grid-search alpha and K_c (train only)");
    app.require_subcommand(1);

    auto* prepare = app.add_subcommand("prepare", "load, k-core filter, index and split");
    auto* describe = app.add_subcommand("describe", "generate item and user descriptions");
    auto* encode = app.add_subcommand("encode", "embed descriptions and preferences");
    auto* build_graph = app.add_subcommand("build-graph", "build the refined item-item graph");
    build_graph->add_flag("--histogram", opts.histogram, "also write the edge similarity histogram");
    auto* train = app.add_subcommand("train", "train the dual-MLP BPR model");
    auto* evaluate = app.add_subcommand("evaluate", "rank the test set and report metrics");
    auto* export_graph = app.add_subcommand("export-graph", "export the refined graph for reuse");
    std::string export_out;
    export_graph->add_option("--out", export_out, "destination path (default workdir/export/graph.tsv)");
    auto* ablate = app.add_subcommand("ablate", "train and evaluate model variants");
    std::vector<std::string> variants;
    ablate->add_option("--variants", variants, "subset of full,no_gd,no_te,no_gcn")->delimiter(',');

    CLI11_PARSE(app, argc, argv);
    if (seed_flag >= 0) opts.seed = static_cast<uint64_t>(seed_flag);

    return run_guarded([&]() -> int {
        pipeline::PipelineConfig cfg = pipeline::load_config(config_path);
        if (prepare->parsed()) return pipeline::cmd_prepare(cfg, opts);
        if (describe->parsed()) return pipeline::cmd_describe(cfg, opts);
        if (encode->parsed()) return pipeline::cmd_encode(cfg, opts);
        if (build_graph->parsed()) return pipeline::cmd_build_graph(cfg, opts);
        if (train->parsed()) return pipeline::cmd_train(cfg, opts);
        if (evaluate->parsed()) return pipeline::cmd_evaluate(cfg, opts);
        if (export_graph->parsed()) return pipeline::cmd_export_graph(cfg, opts, export_out);
        if (ablate->parsed()) return pipeline::cmd_ablate(cfg, opts, variants);
        return pipeline::kExitConfig;
    });
}
