#pragma once

// The three information-bottleneck losses driving mask training, all built
// from diff primitives so gradients reach the mask logits and nothing else.
//
//   l_s : cross-entropy of the kept part Z against the surrogate label plus
//         alpha times a compression penalty KL(N(h_Z, I) || N(0, I)) — keeps
//         Z predictive of the label while squeezing its embedding.
//   l_m : the same two terms on the remainder Z', clamped and negated —
//         pushes label information out of what the mask discards.
//   l_d : mean over embedding dimensions of a bivariate Gaussian joint
//         density of (h_Z, h_Z') under per-graph zero-mean marginals —
//         minimizing it separates the two embedding distributions.
//
// The per-graph l_s value is the detection score: out-of-distribution graphs
// cannot be masked into something the frozen classifier is confident about.

#include <cmath>
#include <numbers>
#include <vector>

#include "goodat/diff.hpp"
#include "goodat/errors.hpp"
#include "goodat/gin.hpp"
#include "goodat/graph.hpp"
#include "goodat/masker.hpp"

namespace goodat::losses {

struct LossConfig {
    double alpha = 0.3;        // compression weight in l_s
    double beta = 0.05;        // compression weight in l_m
    double ce_clamp = 10.0;    // cap on the maximized cross-entropy in l_m (nats)
    double kl_clamp = 50.0;    // cap on every KL term
    double sigma_floor = 1e-4; // lower bound for the l_d marginal scales
    double rho_cap = 0.99;     // |correlation| bound in l_d
    bool enable_ls = true;
    bool enable_lm = true;
    bool enable_ld = true;
};

inline void validate(const LossConfig& cfg) {
    if (cfg.alpha < 0 || cfg.beta < 0)
        throw ContractError("loss config: alpha and beta must be nonnegative");
    if (!(cfg.rho_cap > 0.0 && cfg.rho_cap < 1.0))
        throw ContractError("loss config: rho_cap must lie strictly inside (0,1)");
    if (!(cfg.sigma_floor > 0.0))
        throw ContractError("loss config: sigma_floor must be positive");
}

// KL(N(h, I) || N(0, I)) averaged over dimensions: (1/2) mean(h^2), capped.
inline diff::ValuePtr kl_unit_gaussian(const diff::ValuePtr& h, const LossConfig& cfg) {
    return diff::clamp_max(diff::scale(diff::reduce_mean(diff::hadamard(h, h)), 0.5),
                           cfg.kl_clamp);
}

struct PairStats {
    diff::ValuePtr sigma1, sigma2, rho;  // one element each
};

namespace detail {

// Sample standard deviation over the vector's entries, floored. Two-point
// check: std of [1,-1] is sqrt(2).
inline diff::ValuePtr floored_std(const diff::ValuePtr& h, double floor) {
    const double k = static_cast<double>(h->numel());
    auto centered = diff::bcast_add(h, diff::scale(diff::reduce_mean(h), -1.0));
    auto var = diff::scale(diff::reduce_sum(diff::hadamard(centered, centered)), 1.0 / (k - 1.0));
    return diff::clamp_min(diff::sqrt_elem(var), floor);
}

}  // namespace detail

// Scale and correlation statistics of one graph's embedding pair, computed
// across embedding dimensions. The floors make the downstream density finite
// for any input; a constant vector has zero covariance, hence rho = 0.
inline PairStats batch_free_stats(const diff::ValuePtr& h_z, const diff::ValuePtr& h_zp,
                                  const LossConfig& cfg) {
    if (h_z->numel() < 2 || h_zp->numel() != h_z->numel())
        throw ContractError("batch_free_stats: needs paired embeddings of dimension >= 2, got " +
                            std::to_string(h_z->numel()) + " and " +
                            std::to_string(h_zp->numel()));
    const double k = static_cast<double>(h_z->numel());
    PairStats s;
    s.sigma1 = detail::floored_std(h_z, cfg.sigma_floor);
    s.sigma2 = detail::floored_std(h_zp, cfg.sigma_floor);
    auto c1 = diff::bcast_add(h_z, diff::scale(diff::reduce_mean(h_z), -1.0));
    auto c2 = diff::bcast_add(h_zp, diff::scale(diff::reduce_mean(h_zp), -1.0));
    auto cov = diff::scale(diff::reduce_sum(diff::hadamard(c1, c2)), 1.0 / (k - 1.0));
    auto raw = diff::hadamard(cov, diff::reciprocal(diff::hadamard(s.sigma1, s.sigma2)));
    s.rho = diff::clamp(raw, -cfg.rho_cap, cfg.rho_cap);
    return s;
}

// Mean over dimensions d of the zero-mean bivariate Gaussian density
//   1/(2 pi s1 s2 sqrt(1-r^2)) exp(-(z^2/s1^2 - 2 r z z'/(s1 s2) + z'^2/s2^2)
//                                   / (2 (1-r^2)))
// evaluated at z = h_z[d], z' = h_zp[d]. Exposed with explicit stats so the
// closed-form checks (standard point, factorization at r=0) can pin them.
inline diff::ValuePtr separation_density(const diff::ValuePtr& h_z, const diff::ValuePtr& h_zp,
                                         const diff::ValuePtr& sigma1,
                                         const diff::ValuePtr& sigma2, const diff::ValuePtr& rho) {
    auto one_minus_r2 =
        diff::add_scalar(diff::scale(diff::hadamard(rho, rho), -1.0), 1.0);
    auto s1s2 = diff::hadamard(sigma1, sigma2);
    auto coef = diff::reciprocal(diff::scale(
        diff::hadamard(s1s2, diff::sqrt_elem(one_minus_r2)), 2.0 * std::numbers::pi));
    auto t1 = diff::bcast_mul(diff::hadamard(h_z, h_z),
                              diff::reciprocal(diff::hadamard(sigma1, sigma1)));
    auto t2 = diff::bcast_mul(diff::hadamard(h_z, h_zp),
                              diff::scale(diff::hadamard(rho, diff::reciprocal(s1s2)), 2.0));
    auto t3 = diff::bcast_mul(diff::hadamard(h_zp, h_zp),
                              diff::reciprocal(diff::hadamard(sigma2, sigma2)));
    auto quad = diff::sub(diff::add(t1, t3), t2);
    auto exponent =
        diff::bcast_mul(quad, diff::scale(diff::reciprocal(diff::scale(one_minus_r2, 2.0)), -1.0));
    auto density = diff::bcast_mul(diff::exp_elem(exponent), coef);
    return diff::reduce_mean(density);
}

inline diff::ValuePtr loss_separation(const diff::ValuePtr& h_z, const diff::ValuePtr& h_zp,
                                      const LossConfig& cfg) {
    auto stats = batch_free_stats(h_z, h_zp, cfg);
    return separation_density(h_z, h_zp, stats.sigma1, stats.sigma2, stats.rho);
}

namespace detail {

inline diff::ValuePtr subgraph_term(const gnn::ForwardValues& fz, std::size_t surrogate,
                                    const LossConfig& cfg) {
    auto ce = diff::cross_entropy_from_logits(fz.logits, surrogate);
    if (cfg.alpha == 0.0) return ce;
    return diff::add(ce, diff::scale(kl_unit_gaussian(fz.embedding, cfg), cfg.alpha));
}

inline diff::ValuePtr masked_term(const gnn::ForwardValues& fzp, std::size_t surrogate,
                                  const LossConfig& cfg) {
    auto ce = diff::clamp_max(diff::cross_entropy_from_logits(fzp.logits, surrogate),
                              cfg.ce_clamp);
    if (cfg.beta == 0.0) return diff::scale(ce, -1.0);
    return diff::scale(
        diff::add(ce, diff::scale(kl_unit_gaussian(fzp.embedding, cfg), cfg.beta)), -1.0);
}

}  // namespace detail

// l_s for one graph: CE(f(Z), y) + alpha KL(h_Z).
inline diff::ValuePtr loss_subgraph(const gnn::GinCheckpoint& ckpt, const Graph& g,
                                    const masker::GraphMask& mask, int surrogate_label,
                                    const LossConfig& cfg) {
    auto pair = masker::apply_mask(g, mask);
    auto fz = gnn::gin_forward_values(ckpt.weights, pair.z_x, pair.z_a);
    return detail::subgraph_term(fz, static_cast<std::size_t>(surrogate_label), cfg);
}

// l_m for one graph: -min(CE(f(Z'), y), ce_clamp) - beta min(KL(h_Z'), kl_clamp).
inline diff::ValuePtr loss_masked(const gnn::GinCheckpoint& ckpt, const Graph& g,
                                  const masker::GraphMask& mask, int surrogate_label,
                                  const LossConfig& cfg) {
    auto pair = masker::apply_mask(g, mask);
    auto fzp = gnn::gin_forward_values(ckpt.weights, pair.zp_x, pair.zp_a);
    return detail::masked_term(fzp, static_cast<std::size_t>(surrogate_label), cfg);
}

struct GraphLossSet {
    diff::ValuePtr l_s, l_m, l_d;  // null when the loss is disabled
    diff::ValuePtr total;          // enabled terms summed in the order s, m, d
    PairStats stats;               // filled when l_d is enabled
};

// All enabled losses for one graph, sharing the mask application and the two
// forward passes. This is the per-graph training objective.
inline GraphLossSet build_graph_losses(const gnn::GinCheckpoint& ckpt, const Graph& g,
                                       const masker::GraphMask& mask, int surrogate_label,
                                       const LossConfig& cfg) {
    validate(cfg);
    if (!(cfg.enable_ls || cfg.enable_lm || cfg.enable_ld))
        throw ContractError("build_graph_losses: every loss is disabled");
    const auto y = static_cast<std::size_t>(surrogate_label);
    auto pair = masker::apply_mask(g, mask);
    GraphLossSet out;
    gnn::ForwardValues fz, fzp;
    if (cfg.enable_ls || cfg.enable_ld)
        fz = gnn::gin_forward_values(ckpt.weights, pair.z_x, pair.z_a);
    if (cfg.enable_lm || cfg.enable_ld)
        fzp = gnn::gin_forward_values(ckpt.weights, pair.zp_x, pair.zp_a);
    if (cfg.enable_ls) out.l_s = detail::subgraph_term(fz, y, cfg);
    if (cfg.enable_lm) out.l_m = detail::masked_term(fzp, y, cfg);
    if (cfg.enable_ld) {
        out.stats = batch_free_stats(fz.embedding, fzp.embedding, cfg);
        out.l_d = separation_density(fz.embedding, fzp.embedding, out.stats.sigma1,
                                     out.stats.sigma2, out.stats.rho);
    }
    for (const auto& term : {out.l_s, out.l_m, out.l_d})
        if (term) out.total = out.total ? diff::add(out.total, term) : term;
    return out;
}

struct LossBreakdown {
    double l_s = 0.0, l_m = 0.0, l_d = 0.0, l_g = 0.0;  // batch means; 0 when disabled
    std::vector<double> per_graph_ls;
    std::vector<double> sigma1, sigma2, rho;  // per graph, when l_d is enabled
};

struct BatchLoss {
    diff::ValuePtr value;  // differentiable batch objective
    LossBreakdown breakdown;
};

// Batch objective over all graphs: each enabled loss averaged over the batch,
// the averages summed in the fixed order s, m, d.
inline BatchLoss loss_total(const gnn::GinCheckpoint& ckpt, const std::vector<Graph>& graphs,
                            const std::vector<masker::GraphMask>& masks,
                            const std::vector<int>& surrogate_labels, const LossConfig& cfg) {
    validate(cfg);
    if (!(cfg.enable_ls || cfg.enable_lm || cfg.enable_ld))
        throw ContractError("loss_total: every loss is disabled");
    if (graphs.empty()) throw ContractError("loss_total: empty batch");
    if (masks.size() != graphs.size() || surrogate_labels.size() != graphs.size())
        throw ContractError("loss_total: got " + std::to_string(graphs.size()) + " graphs, " +
                            std::to_string(masks.size()) + " masks, " +
                            std::to_string(surrogate_labels.size()) + " labels");
    const double inv_n = 1.0 / static_cast<double>(graphs.size());
    diff::ValuePtr sum_s, sum_m, sum_d;
    BatchLoss out;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        auto set = build_graph_losses(ckpt, graphs[i], masks[i], surrogate_labels[i], cfg);
        if (set.l_s) {
            sum_s = sum_s ? diff::add(sum_s, set.l_s) : set.l_s;
            out.breakdown.per_graph_ls.push_back(set.l_s->data[0]);
        }
        if (set.l_m) sum_m = sum_m ? diff::add(sum_m, set.l_m) : set.l_m;
        if (set.l_d) {
            sum_d = sum_d ? diff::add(sum_d, set.l_d) : set.l_d;
            out.breakdown.sigma1.push_back(set.stats.sigma1->data[0]);
            out.breakdown.sigma2.push_back(set.stats.sigma2->data[0]);
            out.breakdown.rho.push_back(set.stats.rho->data[0]);
        }
    }
    diff::ValuePtr total;
    auto fold = [&](diff::ValuePtr sum, double& slot) {
        if (!sum) return;
        auto mean = diff::scale(sum, inv_n);
        slot = mean->data[0];
        total = total ? diff::add(total, mean) : mean;
    };
    fold(sum_s, out.breakdown.l_s);
    fold(sum_m, out.breakdown.l_m);
    fold(sum_d, out.breakdown.l_d);
    out.value = total;
    out.breakdown.l_g = total->data[0];
    return out;
}

}  // namespace goodat::losses
