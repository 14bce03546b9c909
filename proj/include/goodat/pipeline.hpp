#pragma once

// The command pipeline behind the CLI: synthesize datasets, pretrain the
// frozen classifier, run test-time detection, sweep the loss multipliers,
// and self-check gradients. Every command takes one fully-resolved RunConfig
// (defaults, then GOODAT_OUT, then the config file, then flags) and echoes
// the effective configuration into its output artifacts. All randomness is
// funneled through the three stage seeds: data, pretrain, detect.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "goodat/detector.hpp"
#include "goodat/errors.hpp"
#include "goodat/gin.hpp"
#include "goodat/gradcheck.hpp"
#include "goodat/graph.hpp"
#include "goodat/losses.hpp"
#include "goodat/synth.hpp"
#include "goodat/tu_format.hpp"

namespace goodat::pipeline {

struct RunConfig {
    // locations
    std::string id_dir, ood_dir;
    std::string checkpoint = "checkpoint.json";
    std::string out_dir = "goodat_out";
    // synthetic benchmark shape; the narrow size band keeps the classes
    // separated by structure rather than by accidental size overlap
    std::size_t synth_id_count = 200, synth_ood_count = 100;
    std::size_t synth_min_nodes = 14, synth_max_nodes = 18;
    // stages
    gnn::GinConfig gin;
    detector::DetectorConfig det;
    bool dump_embeddings = false;
    // sweep grids
    std::vector<double> alpha_grid{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> beta_grid{0.01, 0.03, 0.05, 0.07, 0.09};
    // stage seeds
    std::uint64_t seed_data = 1, seed_pretrain = 2, seed_detect = 3;
};

inline RunConfig default_config() {
    RunConfig cfg;
    if (const char* env = std::getenv("GOODAT_OUT"); env && *env) cfg.out_dir = env;
    return cfg;
}

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_real(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ParseError(what + ": '" + s + "' is not a number");
    return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw ParseError(what + ": '" + s + "' is not an integer");
    return v;
}

inline bool parse_bool(const std::string& s, const std::string& what) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ParseError(what + ": '" + s + "' is not a boolean (use true/false)");
}

}  // namespace detail

// Comma-separated list of reals, e.g. "0.1,0.3,0.5".
inline std::vector<double> parse_real_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = s.find(',', start);
        const std::string item =
            s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        out.push_back(detail::parse_real(item, what));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw ParseError(what + ": empty list");
    return out;
}

// One flat dotted key, shared by the config-file parser and flag handling.
inline void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_int;
    using detail::parse_real;
    const std::string what = "config key " + key;
    if (key == "data.id_dir") cfg.id_dir = value;
    else if (key == "data.ood_dir") cfg.ood_dir = value;
    else if (key == "data.checkpoint") cfg.checkpoint = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "synth.id_count") cfg.synth_id_count = static_cast<std::size_t>(parse_int(value, what));
    else if (key == "synth.ood_count") cfg.synth_ood_count = static_cast<std::size_t>(parse_int(value, what));
    else if (key == "synth.min_nodes") cfg.synth_min_nodes = static_cast<std::size_t>(parse_int(value, what));
    else if (key == "synth.max_nodes") cfg.synth_max_nodes = static_cast<std::size_t>(parse_int(value, what));
    else if (key == "gin.num_layers") cfg.gin.num_layers = static_cast<int>(parse_int(value, what));
    else if (key == "gin.hidden_dim") cfg.gin.hidden_dim = static_cast<int>(parse_int(value, what));
    else if (key == "gin.epochs") cfg.gin.epochs = static_cast<int>(parse_int(value, what));
    else if (key == "gin.learning_rate") cfg.gin.learning_rate = parse_real(value, what);
    else if (key == "gin.train_eps") cfg.gin.train_eps = parse_bool(value, what);
    else if (key == "detector.epochs") cfg.det.epochs = static_cast<int>(parse_int(value, what));
    else if (key == "detector.learning_rate") cfg.det.learning_rate = parse_real(value, what);
    else if (key == "detector.eta_quantile")
        cfg.det.eta = detector::EtaMode::quantile(parse_real(value, what));
    else if (key == "detector.eta_fixed")
        cfg.det.eta = detector::EtaMode::fixed(parse_real(value, what));
    else if (key == "detector.eta_none") {
        if (parse_bool(value, what)) cfg.det.eta = detector::EtaMode::none();
    } else if (key == "detector.dump_embeddings") cfg.dump_embeddings = parse_bool(value, what);
    else if (key == "loss.alpha") cfg.det.loss.alpha = parse_real(value, what);
    else if (key == "loss.beta") cfg.det.loss.beta = parse_real(value, what);
    else if (key == "loss.ce_clamp") cfg.det.loss.ce_clamp = parse_real(value, what);
    else if (key == "loss.kl_clamp") cfg.det.loss.kl_clamp = parse_real(value, what);
    else if (key == "loss.sigma_floor") cfg.det.loss.sigma_floor = parse_real(value, what);
    else if (key == "loss.rho_cap") cfg.det.loss.rho_cap = parse_real(value, what);
    else if (key == "loss.enable_ls") cfg.det.loss.enable_ls = parse_bool(value, what);
    else if (key == "loss.enable_lm") cfg.det.loss.enable_lm = parse_bool(value, what);
    else if (key == "loss.enable_ld") cfg.det.loss.enable_ld = parse_bool(value, what);
    else if (key == "sweep.alphas") cfg.alpha_grid = parse_real_list(value, what);
    else if (key == "sweep.betas") cfg.beta_grid = parse_real_list(value, what);
    else if (key == "seed.data") cfg.seed_data = static_cast<std::uint64_t>(parse_int(value, what));
    else if (key == "seed.pretrain") cfg.seed_pretrain = static_cast<std::uint64_t>(parse_int(value, what));
    else if (key == "seed.detect") cfg.seed_detect = static_cast<std::uint64_t>(parse_int(value, what));
    else throw ParseError("unknown configuration key '" + key + "'");
}

// Flat "key = value" file; '#' starts a comment; blank lines ignored.
inline void load_config_file(const std::filesystem::path& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError(path.string() + ":" + std::to_string(lineno) +
                                          ": empty key");
        try {
            apply_key(cfg, key, value);
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

namespace detail {

inline std::string eta_string(const detector::EtaMode& mode) {
    switch (mode.kind) {
        case detector::EtaMode::Kind::quantile: return "quantile(" + fmt(mode.value) + ")";
        case detector::EtaMode::Kind::fixed: return "fixed(" + fmt(mode.value) + ")";
        case detector::EtaMode::Kind::none: return "none";
    }
    return "none";
}

inline std::string list_string(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + fmt(xs[i]);
    return out;
}

}  // namespace detail

// The reproducibility echo written into every command's summary artifact.
inline void echo_config(std::ostream& out, const RunConfig& cfg) {
    out << "data.id_dir = " << cfg.id_dir << "\n";
    out << "data.ood_dir = " << cfg.ood_dir << "\n";
    out << "data.checkpoint = " << cfg.checkpoint << "\n";
    out << "out = " << cfg.out_dir << "\n";
    out << "synth.id_count = " << cfg.synth_id_count << "\n";
    out << "synth.ood_count = " << cfg.synth_ood_count << "\n";
    out << "synth.min_nodes = " << cfg.synth_min_nodes << "\n";
    out << "synth.max_nodes = " << cfg.synth_max_nodes << "\n";
    out << "gin.num_layers = " << cfg.gin.num_layers << "\n";
    out << "gin.hidden_dim = " << cfg.gin.hidden_dim << "\n";
    out << "gin.epochs = " << cfg.gin.epochs << "\n";
    out << "gin.learning_rate = " << detail::fmt(cfg.gin.learning_rate) << "\n";
    out << "gin.train_eps = " << (cfg.gin.train_eps ? "true" : "false") << "\n";
    out << "detector.epochs = " << cfg.det.epochs << "\n";
    out << "detector.learning_rate = " << detail::fmt(cfg.det.learning_rate) << "\n";
    out << "detector.eta = " << detail::eta_string(cfg.det.eta) << "\n";
    out << "detector.dump_embeddings = " << (cfg.dump_embeddings ? "true" : "false") << "\n";
    out << "loss.alpha = " << detail::fmt(cfg.det.loss.alpha) << "\n";
    out << "loss.beta = " << detail::fmt(cfg.det.loss.beta) << "\n";
    out << "loss.ce_clamp = " << detail::fmt(cfg.det.loss.ce_clamp) << "\n";
    out << "loss.kl_clamp = " << detail::fmt(cfg.det.loss.kl_clamp) << "\n";
    out << "loss.sigma_floor = " << detail::fmt(cfg.det.loss.sigma_floor) << "\n";
    out << "loss.rho_cap = " << detail::fmt(cfg.det.loss.rho_cap) << "\n";
    out << "loss.enable_ls = " << (cfg.det.loss.enable_ls ? "true" : "false") << "\n";
    out << "loss.enable_lm = " << (cfg.det.loss.enable_lm ? "true" : "false") << "\n";
    out << "loss.enable_ld = " << (cfg.det.loss.enable_ld ? "true" : "false") << "\n";
    out << "sweep.alphas = " << detail::list_string(cfg.alpha_grid) << "\n";
    out << "sweep.betas = " << detail::list_string(cfg.beta_grid) << "\n";
    out << "seed.data = " << cfg.seed_data << "\n";
    out << "seed.pretrain = " << cfg.seed_pretrain << "\n";
    out << "seed.detect = " << cfg.seed_detect << "\n";
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

// A TU directory is named by its file prefix; find it from the one
// *_graph_indicator.txt file inside.
inline std::string detect_tu_name(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const std::string suffix = "_graph_indicator.txt";
    std::vector<std::string> names;
    if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " not found");
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string file = entry.path().filename().string();
        if (file.size() > suffix.size() &&
            file.compare(file.size() - suffix.size(), suffix.size(), suffix) == 0)
            names.push_back(file.substr(0, file.size() - suffix.size()));
    }
    if (names.size() != 1)
        throw IoError("dataset directory " + dir.string() + " holds " +
                      std::to_string(names.size()) + " *_graph_indicator.txt files, expected 1");
    return names.front();
}

inline tu::TuParseResult read_dataset(const std::string& dir, const char* role) {
    if (dir.empty()) throw ContractError(std::string(role) + " dataset directory not set");
    const std::filesystem::path p(dir);
    return tu::parse_tu_dataset(p, detect_tu_name(p));
}

}  // namespace detail

// Synthesize the benchmark: an in-distribution TU directory with the two
// motif classes and an out-of-distribution directory of dense graphs.
inline void cmd_synth(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    const std::size_t c0 = cfg.synth_id_count / 2;
    const std::size_t c1 = cfg.synth_id_count - c0;
    auto id = synth::synth_generate(synth::Kind::id_class0, c0, cfg.synth_min_nodes,
                                    cfg.synth_max_nodes, cfg.seed_data);
    auto id1 = synth::synth_generate(synth::Kind::id_class1, c1, cfg.synth_min_nodes,
                                     cfg.synth_max_nodes, cfg.seed_data + 1);
    id.insert(id.end(), id1.begin(), id1.end());
    auto ood = synth::synth_generate(synth::Kind::ood, cfg.synth_ood_count, cfg.synth_min_nodes,
                                     cfg.synth_max_nodes, cfg.seed_data + 2);
    for (Graph& g : ood) g.label = 0;  // TU files need a label column; unused downstream

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    tu::write_tu_dataset(out / "id", "synth", id);
    tu::write_tu_dataset(out / "ood", "synth", ood);

    auto summary = detail::open_out(out / "synth_summary.txt");
    summary << "command = synth\n";
    echo_config(summary, cfg);
    summary << "id_graphs_written = " << id.size() << "\n";
    summary << "ood_graphs_written = " << ood.size() << "\n";
    log << "wrote " << id.size() << " in-distribution and " << ood.size()
        << " out-of-distribution graphs under " << out.string() << "\n";
}

// Split the ID data 90/10, train the classifier on the training side, and
// save the frozen checkpoint.
inline gnn::GinCheckpoint cmd_pretrain(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    auto id = detail::read_dataset(cfg.id_dir, "in-distribution");
    if (!cfg.ood_dir.empty()) {
        // widen features up-front so the checkpoint fits the aligned test set
        auto ood = detail::read_dataset(cfg.ood_dir, "out-of-distribution");
        feature_align(id.graphs, ood.graphs);
    }
    auto [train, held] = split_id_dataset(id.graphs, cfg.seed_data);
    gnn::GinConfig gin_cfg = cfg.gin;
    gin_cfg.seed = cfg.seed_pretrain;
    auto ckpt = gnn::pretrain(train, gin_cfg);

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    gnn::save_checkpoint(ckpt, out / cfg.checkpoint);

    auto summary = detail::open_out(out / "pretrain_summary.txt");
    summary << "command = pretrain\n";
    echo_config(summary, cfg);
    summary << "train_graphs = " << train.size() << "\n";
    summary << "held_out_graphs = " << held.size() << "\n";
    summary << "num_classes = " << ckpt.config.num_classes << "\n";
    summary << "feature_dim = " << ckpt.config.feature_dim << "\n";
    summary << "final_train_accuracy = " << detail::fmt(ckpt.final_train_accuracy) << "\n";
    log << "pretrained on " << train.size() << " graphs; final train accuracy "
        << detail::fmt(ckpt.final_train_accuracy) << "; checkpoint at "
        << (out / cfg.checkpoint).string() << "\n";
    return ckpt;
}

struct DetectOutcome {
    std::vector<double> scores;
    std::vector<bool> flags;
    detector::Decisions decisions;
    double auc = 0.0;
    std::vector<detector::EpochRecord> history;
    double wall_seconds = 0.0;
};

namespace detail {

// Shared by detect and sweep: parse both datasets, rebuild the held-out
// split, align features, and assemble the flagged test set.
inline std::vector<Graph> assemble_test_set(const RunConfig& cfg) {
    auto id = read_dataset(cfg.id_dir, "in-distribution");
    auto ood = read_dataset(cfg.ood_dir, "out-of-distribution");
    auto [train, held] = split_id_dataset(id.graphs, cfg.seed_data);
    (void)train;
    feature_align(held, ood.graphs);
    return build_test_set(held, ood.graphs, cfg.seed_data);
}

}  // namespace detail

// Full test-time detection: train masks on the assembled test set, score,
// threshold, and evaluate. Writes scores.csv, history.csv, summary.txt and
// (optionally) embeddings.csv under the output directory.
inline DetectOutcome cmd_detect(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();
    auto ckpt = gnn::load_checkpoint(cfg.checkpoint);
    auto test = detail::assemble_test_set(cfg);

    detector::DetectorConfig det = cfg.det;
    det.seed = cfg.seed_detect;
    auto trained = detector::train_masker(ckpt, test, det);

    DetectOutcome out;
    out.history = trained.history;
    for (std::size_t i = 0; i < test.size(); ++i) {
        out.scores.push_back(detector::ood_score(ckpt, test[i], trained.masks[i],
                                                 trained.surrogate_labels[i], det.loss));
        out.flags.push_back(test[i].ood_flag.value());
    }
    out.decisions = detector::decide(out.scores, det.eta);
    out.auc = detector::auc(out.scores, out.flags);
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    {
        auto scores = detail::open_out(dir / "scores.csv");
        scores << "graph_index,score,decision,ood_flag\n";
        for (std::size_t i = 0; i < out.scores.size(); ++i) {
            scores << i << "," << detail::fmt(out.scores[i]) << ",";
            if (!out.decisions.decision.empty()) scores << out.decisions.decision[i];
            scores << "," << (out.flags[i] ? 1 : 0) << "\n";
        }
    }
    {
        auto hist = detail::open_out(dir / "history.csv");
        hist << "epoch,l_s,l_m,l_d,l_g,mean_overlap\n";
        for (const auto& rec : out.history)
            hist << rec.epoch << "," << detail::fmt(rec.l_s) << "," << detail::fmt(rec.l_m)
                 << "," << detail::fmt(rec.l_d) << "," << detail::fmt(rec.l_g) << ","
                 << detail::fmt(rec.mean_overlap) << "\n";
    }
    if (cfg.dump_embeddings) {
        auto emb = detail::open_out(dir / "embeddings.csv");
        detector::dump_embeddings(emb, ckpt, test, trained.masks);
    }
    {
        auto summary = detail::open_out(dir / "summary.txt");
        summary << "command = detect\n";
        echo_config(summary, cfg);
        summary << "test_graphs = " << test.size() << "\n";
        if (out.decisions.eta) summary << "eta = " << detail::fmt(*out.decisions.eta) << "\n";
        summary << "auc = " << detail::fmt(out.auc) << "\n";
        summary << "runtime_seconds = " << detail::fmt(out.wall_seconds) << "\n";
    }
    log << "scored " << out.scores.size() << " test graphs; auc " << detail::fmt(out.auc)
        << "; outputs under " << dir.string() << "\n";
    return out;
}

// Independent detection run per (alpha, beta) grid cell; writes the AUC
// table with alphas down the rows and betas across the columns.
inline detector::SweepTable cmd_sweep(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    auto ckpt = gnn::load_checkpoint(cfg.checkpoint);
    auto test = detail::assemble_test_set(cfg);
    detector::DetectorConfig det = cfg.det;
    det.seed = cfg.seed_detect;
    auto table = detector::sweep(ckpt, test, cfg.alpha_grid, cfg.beta_grid, det);

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    {
        auto out = detail::open_out(dir / "sweep.csv");
        out << "alpha\\beta";
        for (double b : table.beta_grid) out << "," << detail::fmt(b);
        out << "\n";
        for (std::size_t i = 0; i < table.alpha_grid.size(); ++i) {
            out << detail::fmt(table.alpha_grid[i]);
            for (double v : table.auc[i]) out << "," << detail::fmt(v);
            out << "\n";
        }
    }
    {
        auto summary = detail::open_out(dir / "sweep_summary.txt");
        summary << "command = sweep\n";
        echo_config(summary, cfg);
        summary << "test_graphs = " << test.size() << "\n";
        summary << "cells = " << table.alpha_grid.size() * table.beta_grid.size() << "\n";
    }
    log << "swept " << table.alpha_grid.size() << "x" << table.beta_grid.size()
        << " cells; table under " << dir.string() << "\n";
    return table;
}

// Finite-difference self-check over every differentiable primitive and the
// full loss pipeline; prints one line per case.
inline bool cmd_gradcheck(std::ostream& log) {
    Rng rng(424242);
    bool all_ok = true;
    auto run = [&](const std::vector<gradcheck::Case>& cases, int trials) {
        for (const auto& c : cases) {
            auto rep = gradcheck::run_case(c, rng, trials);
            all_ok = all_ok && rep.ok;
            log << (rep.ok ? "pass" : "FAIL") << "  " << rep.name << "  worst relative error "
                << detail::fmt(rep.worst_rel_err) << "\n";
        }
    };
    run(gradcheck::primitive_cases(), 20);
    run(gradcheck::composite_cases(), 4);
    log << (all_ok ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
    return all_ok;
}

}  // namespace goodat::pipeline
