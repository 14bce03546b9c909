// goodat — test-time graph out-of-distribution detection.
//
// Subcommands: synth, pretrain, detect, sweep, gradcheck. Configuration is
// resolved in layers: built-in defaults, then the GOODAT_OUT environment
// variable (output directory only), then --config FILE (flat dotted keys),
// then command-line flags. Exit status is 0 only when the command ran to
// completion with every contract intact.

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "goodat/pipeline.hpp"

namespace {

using goodat::pipeline::RunConfig;

// Flag values are collected here and folded onto the config after the
// config file loads, so flags always win.
struct FlagSet {
    std::optional<std::string> config_path, id_dir, ood_dir, checkpoint, out_dir;
    std::optional<std::string> alphas, betas;
    std::optional<double> alpha, beta, lr, eta_quantile, eta_fixed;
    std::optional<long long> epochs, seed_data, seed_pretrain, seed_detect;
    std::optional<long long> id_count, ood_count, min_nodes, max_nodes;
    bool disable_ls = false, disable_lm = false, disable_ld = false;
    bool dump_embeddings = false;
};

void add_common_flags(CLI::App& cmd, FlagSet& f) {
    cmd.add_option("--config", f.config_path, "configuration file with flat dotted keys");
    cmd.add_option("--id-data", f.id_dir, "in-distribution dataset directory");
    cmd.add_option("--ood-data", f.ood_dir, "out-of-distribution dataset directory");
    cmd.add_option("--checkpoint", f.checkpoint, "classifier checkpoint path");
    cmd.add_option("--out", f.out_dir, "output directory");
    cmd.add_option("--alpha", f.alpha, "weight of the compression term in the subgraph loss");
    cmd.add_option("--beta", f.beta, "weight of the compression term in the leftover loss");
    cmd.add_option("--epochs", f.epochs, "training epochs for this command's stage");
    cmd.add_option("--lr", f.lr, "learning rate for this command's stage");
    auto* q = cmd.add_option("--eta-quantile", f.eta_quantile,
                             "derive the decision threshold from this score quantile");
    auto* fx = cmd.add_option("--eta-fixed", f.eta_fixed, "use this fixed decision threshold");
    q->excludes(fx);
    fx->excludes(q);
    cmd.add_flag("--disable-ls", f.disable_ls, "drop the subgraph term from the objective");
    cmd.add_flag("--disable-lm", f.disable_lm, "drop the leftover term from the objective");
    cmd.add_flag("--disable-ld", f.disable_ld, "drop the separation term from the objective");
    cmd.add_option("--seed-data", f.seed_data, "seed for dataset generation and splits");
    cmd.add_option("--seed-pretrain", f.seed_pretrain, "seed for classifier training");
    cmd.add_option("--seed-detect", f.seed_detect, "seed for mask training");
    cmd.add_flag("--dump-embeddings", f.dump_embeddings,
                 "also write kept/leftover embeddings to embeddings.csv");
}

// stage_epochs: which stage --epochs/--lr steer for this subcommand.
enum class Stage { pretrain, detect };

RunConfig resolve(const FlagSet& f, Stage stage) {
    RunConfig cfg = goodat::pipeline::default_config();
    if (f.config_path) goodat::pipeline::load_config_file(*f.config_path, cfg);
    if (f.id_dir) cfg.id_dir = *f.id_dir;
    if (f.ood_dir) cfg.ood_dir = *f.ood_dir;
    if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
    if (f.out_dir) cfg.out_dir = *f.out_dir;
    if (f.alpha) cfg.det.loss.alpha = *f.alpha;
    if (f.beta) cfg.det.loss.beta = *f.beta;
    if (f.epochs) {
        if (stage == Stage::pretrain) cfg.gin.epochs = static_cast<int>(*f.epochs);
        else cfg.det.epochs = static_cast<int>(*f.epochs);
    }
    if (f.lr) {
        if (stage == Stage::pretrain) cfg.gin.learning_rate = *f.lr;
        else cfg.det.learning_rate = *f.lr;
    }
    if (f.eta_quantile) cfg.det.eta = goodat::detector::EtaMode::quantile(*f.eta_quantile);
    if (f.eta_fixed) cfg.det.eta = goodat::detector::EtaMode::fixed(*f.eta_fixed);
    if (f.disable_ls) cfg.det.loss.enable_ls = false;
    if (f.disable_lm) cfg.det.loss.enable_lm = false;
    if (f.disable_ld) cfg.det.loss.enable_ld = false;
    if (f.seed_data) cfg.seed_data = static_cast<std::uint64_t>(*f.seed_data);
    if (f.seed_pretrain) cfg.seed_pretrain = static_cast<std::uint64_t>(*f.seed_pretrain);
    if (f.seed_detect) cfg.seed_detect = static_cast<std::uint64_t>(*f.seed_detect);
    if (f.dump_embeddings) cfg.dump_embeddings = true;
    if (f.id_count) cfg.synth_id_count = static_cast<std::size_t>(*f.id_count);
    if (f.ood_count) cfg.synth_ood_count = static_cast<std::size_t>(*f.ood_count);
    if (f.min_nodes) cfg.synth_min_nodes = static_cast<std::size_t>(*f.min_nodes);
    if (f.max_nodes) cfg.synth_max_nodes = static_cast<std::size_t>(*f.max_nodes);
    if (f.alphas) cfg.alpha_grid = goodat::pipeline::parse_real_list(*f.alphas, "--alphas");
    if (f.betas) cfg.beta_grid = goodat::pipeline::parse_real_list(*f.betas, "--betas");
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"goodat: test-time graph out-of-distribution detection"};
    app.require_subcommand(1);

    FlagSet synth_flags, pretrain_flags, detect_flags, sweep_flags;

    auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark datasets");
    add_common_flags(*synth, synth_flags);
    synth->add_option("--id-count", synth_flags.id_count, "in-distribution graphs to generate");
    synth->add_option("--ood-count", synth_flags.ood_count,
                      "out-of-distribution graphs to generate");
    synth->add_option("--min-nodes", synth_flags.min_nodes, "smallest graph size");
    synth->add_option("--max-nodes", synth_flags.max_nodes, "largest graph size");

    auto* pretrain =
        app.add_subcommand("pretrain", "train the frozen classifier on in-distribution data");
    add_common_flags(*pretrain, pretrain_flags);

    auto* detect = app.add_subcommand("detect", "train per-graph masks and score the test set");
    add_common_flags(*detect, detect_flags);

    auto* sweep = app.add_subcommand("sweep", "grid-search the two loss multipliers");
    add_common_flags(*sweep, sweep_flags);
    sweep->add_option("--alphas", sweep_flags.alphas, "comma-separated alpha grid");
    sweep->add_option("--betas", sweep_flags.betas, "comma-separated beta grid");

    auto* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every gradient path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            goodat::pipeline::cmd_synth(resolve(synth_flags, Stage::detect), std::cout);
        } else if (pretrain->parsed()) {
            goodat::pipeline::cmd_pretrain(resolve(pretrain_flags, Stage::pretrain), std::cout);
        } else if (detect->parsed()) {
            goodat::pipeline::cmd_detect(resolve(detect_flags, Stage::detect), std::cout);
        } else if (sweep->parsed()) {
            goodat::pipeline::cmd_sweep(resolve(sweep_flags, Stage::detect), std::cout);
        } else if (gradcheck->parsed()) {
            if (!goodat::pipeline::cmd_gradcheck(std::cout)) return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "goodat: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
