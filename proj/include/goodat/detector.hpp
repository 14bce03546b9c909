#pragma once

// Test-time detection: train one masker per test graph against the frozen
// classifier, score each graph by its subgraph loss l_s, threshold the
// scores, and evaluate with ranking AUC when ground truth is available.
//
// Graph lanes are fully independent — each mask has its own optimizer state
// and its own per-graph loss — so the epoch loop is a deterministic ordered
// fold regardless of how lanes would be scheduled. Reported batch losses are
// post-hoc means over the lanes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "goodat/diff.hpp"
#include "goodat/errors.hpp"
#include "goodat/gin.hpp"
#include "goodat/graph.hpp"
#include "goodat/losses.hpp"
#include "goodat/masker.hpp"

namespace goodat::detector {

struct EtaMode {
    enum class Kind { quantile, fixed, none };
    Kind kind = Kind::quantile;
    double value = 0.5;  // quantile level q, or the fixed threshold itself

    static EtaMode quantile(double q) { return {Kind::quantile, q}; }
    static EtaMode fixed(double eta) { return {Kind::fixed, eta}; }
    static EtaMode none() { return {Kind::none, 0.0}; }
};

struct DetectorConfig {
    int epochs = 50;
    double learning_rate = 1e-2;  // applied to mask logits only
    losses::LossConfig loss;
    EtaMode eta;
    std::uint64_t seed = 0;
};

inline void validate(const DetectorConfig& cfg) {
    if (cfg.epochs < 0) throw ContractError("detector config: epochs must be >= 0");
    if (!(cfg.learning_rate > 0.0))
        throw ContractError("detector config: learning rate must be positive");
    if (cfg.eta.kind == EtaMode::Kind::quantile && !(cfg.eta.value > 0.0 && cfg.eta.value < 1.0))
        throw ContractError("detector config: quantile level must lie strictly inside (0,1)");
    losses::validate(cfg.loss);
}

struct EpochRecord {
    int epoch = 0;                              // 1-based
    double l_s = 0.0, l_m = 0.0, l_d = 0.0;    // means over graphs; 0 when disabled
    double l_g = 0.0;                           // mean total
    double mean_overlap = 0.0;                  // mask sharpness diagnostic
};

struct TrainResult {
    std::vector<masker::GraphMask> masks;
    std::vector<int> surrogate_labels;
    std::vector<EpochRecord> history;  // one record per epoch
};

// Full test-time training pass: surrogate labels are fixed up-front from the
// unmasked graphs, then every epoch minimizes each graph's total loss by
// Adam on that graph's mask logits. The checkpoint weights never move.
inline TrainResult train_masker(const gnn::GinCheckpoint& ckpt,
                                const std::vector<Graph>& test_graphs,
                                const DetectorConfig& cfg) {
    validate(cfg);
    if (test_graphs.empty()) throw ContractError("train_masker: no test graphs");
    const std::size_t expect = ckpt.weights.layers.at(0).w1->shape[0];
    for (const Graph& g : test_graphs)
        if (g.x.cols != expect)
            throw ContractError("train_masker: graph features have dimension " +
                                std::to_string(g.x.cols) + " but the checkpoint expects " +
                                std::to_string(expect));

    TrainResult out;
    out.surrogate_labels.reserve(test_graphs.size());
    for (const Graph& g : test_graphs) out.surrogate_labels.push_back(gnn::pseudo_label(ckpt, g));
    out.masks = masker::init_masks(test_graphs, 1.0, cfg.seed);

    std::vector<diff::AdamState> lanes(test_graphs.size());
    for (auto& lane : lanes) lane.learning_rate = cfg.learning_rate;

    const double inv_n = 1.0 / static_cast<double>(test_graphs.size());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t i = 0; i < test_graphs.size(); ++i) {
            rec.mean_overlap += masker::overlap_size(out.masks[i], test_graphs[i]);
            auto set = losses::build_graph_losses(ckpt, test_graphs[i], out.masks[i],
                                                  out.surrogate_labels[i], cfg.loss);
            if (set.l_s) rec.l_s += set.l_s->data[0];
            if (set.l_m) rec.l_m += set.l_m->data[0];
            if (set.l_d) rec.l_d += set.l_d->data[0];
            diff::backward(set.total);
            auto params = out.masks[i].parameters();
            diff::adam_update(params, lanes[i]);
        }
        rec.l_s *= inv_n;
        rec.l_m *= inv_n;
        rec.l_d *= inv_n;
        rec.l_g = (rec.l_s + rec.l_m) + rec.l_d;  // same fixed order as the batch loss
        rec.mean_overlap *= inv_n;
        out.history.push_back(rec);
    }
    return out;
}

// The detection score: the subgraph loss l_s of the (trained) mask. Higher
// means the kept part cannot be made both predictable and compressed, i.e.
// the graph looks out-of-distribution to the frozen classifier.
inline double ood_score(const gnn::GinCheckpoint& ckpt, const Graph& g,
                        const masker::GraphMask& mask, int surrogate_label,
                        const losses::LossConfig& cfg) {
    return losses::loss_subgraph(ckpt, g, mask, surrogate_label, cfg)->data[0];
}

struct Decisions {
    std::optional<double> eta;   // absent in eta-free mode
    std::vector<int> decision;   // empty in eta-free mode; else 1 iff score >= eta
};

// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> sorted_scores, double q) {
    const double pos = q * static_cast<double>(sorted_scores.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= sorted_scores.size()) return sorted_scores.back();
    return sorted_scores[lo] + frac * (sorted_scores[lo + 1] - sorted_scores[lo]);
}

inline Decisions decide(const std::vector<double>& scores, const EtaMode& mode) {
    if (scores.empty()) throw ContractError("decide: no scores");
    Decisions out;
    switch (mode.kind) {
        case EtaMode::Kind::none:
            return out;
        case EtaMode::Kind::fixed:
            out.eta = mode.value;
            break;
        case EtaMode::Kind::quantile: {
            if (!(mode.value > 0.0 && mode.value < 1.0))
                throw ContractError("decide: quantile level must lie strictly inside (0,1)");
            if (scores.size() < 2)
                throw ContractError("decide: quantile mode needs at least 2 scores");
            std::vector<double> sorted = scores;
            std::sort(sorted.begin(), sorted.end());
            out.eta = quantile(std::move(sorted), mode.value);
            break;
        }
    }
    out.decision.reserve(scores.size());
    for (double s : scores) out.decision.push_back(s >= *out.eta ? 1 : 0);
    return out;
}

// Ranking AUC by the Mann-Whitney statistic with midrank tie handling:
// (number of (positive, negative) pairs where the positive scores higher,
// plus half the tied pairs) divided by all such pairs.
inline double auc(const std::vector<double>& scores, const std::vector<bool>& flags) {
    if (scores.size() != flags.size())
        throw ContractError("auc: got " + std::to_string(scores.size()) + " scores and " +
                            std::to_string(flags.size()) + " flags");
    std::size_t p = 0;
    for (bool f : flags) p += f ? 1 : 0;
    const std::size_t n = flags.size() - p;
    if (p == 0 || n == 0)
        throw ContractError("auc: needs both classes, got " + std::to_string(p) +
                            " positives and " + std::to_string(n) + " negatives");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (flags[order[k]]) positive_rank_sum += midrank;
        i = j;
    }
    const double pd = static_cast<double>(p);
    return (positive_rank_sum - pd * (pd + 1.0) / 2.0) / (pd * static_cast<double>(n));
}

struct SweepTable {
    std::vector<double> alpha_grid, beta_grid;
    std::vector<std::vector<double>> auc;  // auc[i][j] for (alpha_grid[i], beta_grid[j])
};

// One independent, identically seeded train+score+evaluate run per grid
// cell. Ground-truth flags must be present on the test graphs.
inline SweepTable sweep(const gnn::GinCheckpoint& ckpt, const std::vector<Graph>& test_graphs,
                        const std::vector<double>& alpha_grid,
                        const std::vector<double>& beta_grid, const DetectorConfig& base) {
    if (alpha_grid.empty() || beta_grid.empty())
        throw ContractError("sweep: parameter grids must be nonempty");
    std::vector<bool> flags;
    for (const Graph& g : test_graphs) {
        if (!g.ood_flag)
            throw ContractError("sweep: every test graph needs a ground-truth flag");
        flags.push_back(*g.ood_flag);
    }
    SweepTable table;
    table.alpha_grid = alpha_grid;
    table.beta_grid = beta_grid;
    for (double a : alpha_grid) {
        std::vector<double> row;
        for (double b : beta_grid) {
            DetectorConfig cfg = base;
            cfg.loss.alpha = a;
            cfg.loss.beta = b;
            auto trained = train_masker(ckpt, test_graphs, cfg);
            std::vector<double> scores;
            for (std::size_t i = 0; i < test_graphs.size(); ++i)
                scores.push_back(ood_score(ckpt, test_graphs[i], trained.masks[i],
                                           trained.surrogate_labels[i], cfg.loss));
            row.push_back(auc(scores, flags));
        }
        table.auc.push_back(std::move(row));
    }
    return table;
}

// One row per graph: index, ood flag ('?' when unknown), then the kept-part
// and remainder embeddings, comma-separated with round-trippable numbers.
inline void dump_embeddings(std::ostream& out, const gnn::GinCheckpoint& ckpt,
                            const std::vector<Graph>& test_graphs,
                            const std::vector<masker::GraphMask>& masks) {
    if (masks.size() != test_graphs.size())
        throw ContractError("dump_embeddings: got " + std::to_string(test_graphs.size()) +
                            " graphs and " + std::to_string(masks.size()) + " masks");
    char buf[64];
    for (std::size_t i = 0; i < test_graphs.size(); ++i) {
        auto pair = masker::apply_mask(test_graphs[i], masks[i]);
        auto fz = gnn::gin_forward_values(ckpt.weights, pair.z_x, pair.z_a);
        auto fzp = gnn::gin_forward_values(ckpt.weights, pair.zp_x, pair.zp_a);
        out << i << ",";
        if (test_graphs[i].ood_flag)
            out << (*test_graphs[i].ood_flag ? 1 : 0);
        else
            out << "?";
        for (const auto& h : {fz.embedding, fzp.embedding})
            for (double v : h->data) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << "," << buf;
            }
        out << "\n";
        if (!out) throw IoError("dump_embeddings: write failed");
    }
}

}  // namespace goodat::detector
