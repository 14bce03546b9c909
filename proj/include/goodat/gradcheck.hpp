#pragma once

// Central finite-difference verification of analytic gradients. Each case
// owns leaf construction and a pure rebuild of its scalar root, so the
// harness can nudge one leaf entry at a time and re-evaluate. Non-scalar
// outputs are contracted against a fixed random constant so every output
// entry receives a distinct upstream gradient (an all-ones upstream would
// let index-permutation bugs cancel).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "goodat/diff.hpp"
#include "goodat/gin.hpp"
#include "goodat/graph.hpp"
#include "goodat/losses.hpp"
#include "goodat/masker.hpp"
#include "goodat/matrix.hpp"
#include "goodat/rng.hpp"

namespace goodat::gradcheck {

struct Case {
    std::string name;
    // Fresh leaves for one trial; entries with requires_grad are perturbed.
    std::function<std::vector<diff::ValuePtr>(Rng&)> make_leaves;
    // Pure scalar function of the leaves' current data.
    std::function<diff::ValuePtr(const std::vector<diff::ValuePtr>&)> build;
};

struct Report {
    std::string name;
    double worst_rel_err = 0.0;
    bool ok = false;
};

// Relative error with a floor on the denominator, so a threshold of 1e-4
// doubles as an absolute threshold of 1e-6 when both values are near zero.
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
    return std::fabs(analytic - numeric) / denom;
}

// Leaf with entries drawn uniformly from [lo, hi], resampled away from the
// listed kink locations so central differences stay on one smooth branch.
inline diff::ValuePtr random_leaf(Rng& rng, std::vector<std::size_t> shape, double lo = -2.0,
                                  double hi = 2.0, const std::vector<double>& kinks = {},
                                  double margin = 0.05) {
    auto v = diff::make_value(std::move(shape), true);
    for (double& x : v->data) {
        for (;;) {
            const double s = rng.uniform(lo, hi);
            bool clear = true;
            for (double k : kinks)
                if (std::fabs(s - k) < margin) {
                    clear = false;
                    break;
                }
            if (clear) {
                x = s;
                break;
            }
        }
    }
    v->ensure_grad();
    return v;
}

inline diff::ValuePtr constant_leaf(Rng& rng, std::vector<std::size_t> shape, double lo = -2.0,
                                    double hi = 2.0) {
    auto v = diff::make_value(std::move(shape), false);
    for (double& x : v->data) x = rng.uniform(lo, hi);
    return v;
}

inline Report run_case(const Case& c, Rng& rng, int trials = 20, double h = 1e-5,
                       double tolerance = 1e-4) {
    Report rep;
    rep.name = c.name;
    for (int t = 0; t < trials; ++t) {
        auto leaves = c.make_leaves(rng);
        auto root = c.build(leaves);
        if (root->numel() != 1)
            throw ContractError("gradcheck case '" + c.name + "' must build a scalar root");
        diff::backward(root);
        for (auto& leaf : leaves) {
            if (!leaf->requires_grad) continue;
            for (std::size_t i = 0; i < leaf->data.size(); ++i) {
                const double orig = leaf->data[i];
                leaf->data[i] = orig + h;
                const double fp = c.build(leaves)->data[0];
                leaf->data[i] = orig - h;
                const double fm = c.build(leaves)->data[0];
                leaf->data[i] = orig;
                const double numeric = (fp - fm) / (2.0 * h);
                rep.worst_rel_err =
                    std::max(rep.worst_rel_err, relative_error(leaf->grad[i], numeric));
            }
        }
    }
    rep.ok = rep.worst_rel_err < tolerance;
    return rep;
}

// Contract a non-scalar value to a scalar using the (constant) last leaf.
inline diff::ValuePtr contract(const diff::ValuePtr& out, const diff::ValuePtr& weights) {
    return diff::reduce_sum(diff::hadamard(out, weights));
}

// One case per differentiable primitive.
inline std::vector<Case> primitive_cases() {
    using diff::ValuePtr;
    std::vector<Case> cases;
    auto add_case = [&](std::string name, std::function<std::vector<ValuePtr>(Rng&)> make,
                        std::function<ValuePtr(const std::vector<ValuePtr>&)> build) {
        cases.push_back({std::move(name), std::move(make), std::move(build)});
    };

    add_case(
        "matmul",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {3, 2}), random_leaf(rng, {2, 4}),
                                         constant_leaf(rng, {3, 4})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::matmul(l[0], l[1]), l[2]); });
    add_case(
        "transpose",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), constant_leaf(rng, {3, 2})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::transpose(l[0]), l[1]); });
    add_case(
        "hadamard",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), random_leaf(rng, {2, 3}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::hadamard(l[0], l[1]), l[2]); });
    add_case(
        "add",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), random_leaf(rng, {2, 3}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::add(l[0], l[1]), l[2]); });
    add_case(
        "sub",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), random_leaf(rng, {2, 3}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::sub(l[0], l[1]), l[2]); });
    add_case(
        "scale",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::scale(l[0], -1.7), l[1]); });
    add_case(
        "add_scalar",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) {
            return contract(diff::add_scalar(l[0], 0.37), l[1]);
        });
    add_case(
        "sigmoid",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, -4.0, 4.0),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::sigmoid(l[0]), l[1]); });
    add_case(
        "relu",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, -2.0, 2.0, {0.0}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::relu(l[0]), l[1]); });
    add_case(
        "exp",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, -1.5, 1.5),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::exp_elem(l[0]), l[1]); });
    add_case(
        "sqrt",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, 0.5, 3.0),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::sqrt_elem(l[0]), l[1]); });
    add_case(
        "reciprocal",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, 0.5, 3.0),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) { return contract(diff::reciprocal(l[0]), l[1]); });
    add_case(
        "clamp_max",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, -2.0, 2.0, {0.8}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) {
            return contract(diff::clamp_max(l[0], 0.8), l[1]);
        });
    add_case(
        "clamp_min",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, -2.0, 2.0, {-0.8}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) {
            return contract(diff::clamp_min(l[0], -0.8), l[1]);
        });
    add_case(
        "clamp",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}, -2.0, 2.0, {-0.9, 0.9}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) {
            return contract(diff::clamp(l[0], -0.9, 0.9), l[1]);
        });
    add_case(
        "reduce_sum",
        [](Rng& rng) { return std::vector<ValuePtr>{random_leaf(rng, {3, 2})}; },
        [](const std::vector<ValuePtr>& l) { return diff::scale(diff::reduce_sum(l[0]), 1.3); });
    add_case(
        "reduce_mean",
        [](Rng& rng) { return std::vector<ValuePtr>{random_leaf(rng, {3, 2})}; },
        [](const std::vector<ValuePtr>& l) { return diff::scale(diff::reduce_mean(l[0]), 1.3); });
    add_case(
        "bcast_add",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), random_leaf(rng, {1}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) {
            return contract(diff::bcast_add(l[0], l[1]), l[2]);
        });
    add_case(
        "bcast_mul",
        [](Rng& rng) {
            return std::vector<ValuePtr>{random_leaf(rng, {2, 3}), random_leaf(rng, {1}),
                                         constant_leaf(rng, {2, 3})};
        },
        [](const std::vector<ValuePtr>& l) {
            return contract(diff::bcast_mul(l[0], l[1]), l[2]);
        });
    add_case(
        "cross_entropy_from_logits",
        [](Rng& rng) { return std::vector<ValuePtr>{random_leaf(rng, {1, 4}, -3.0, 3.0)}; },
        [](const std::vector<ValuePtr>& l) {
            return diff::scale(diff::cross_entropy_from_logits(l[0], 2), 1.3);
        });

    return cases;
}

namespace detail {

// Shared six-node fixture: a ring with one chord, two feature columns, and a
// frozen randomly-initialized two-layer network.
struct LossFixture {
    Graph g;
    gnn::GinCheckpoint ckpt;
    int label = 0;
};

inline const LossFixture& loss_fixture() {
    static const LossFixture fx = [] {
        LossFixture f;
        f.g.n = 6;
        f.g.x = Matrix(6, 2);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                f.g.x.at(i, j) = 0.3 * static_cast<double>(i) - 0.45 * static_cast<double>(j) - 0.5;
        f.g.a = Matrix(6, 6);
        const std::size_t edges[][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {1, 4}};
        for (const auto& e : edges) {
            f.g.a.at(e[0], e[1]) = 1.0;
            f.g.a.at(e[1], e[0]) = 1.0;
        }
        gnn::GinConfig cfg;
        cfg.hidden_dim = 4;
        cfg.feature_dim = 2;
        cfg.num_classes = 2;
        f.ckpt.config = cfg;
        Rng rng(20240917);
        f.ckpt.weights = gnn::init_weights(cfg, rng);
        f.ckpt.weights.freeze();
        f.label = gnn::pseudo_label(f.ckpt, f.g);
        return f;
    }();
    return fx;
}

inline std::vector<diff::ValuePtr> mask_leaves(Rng& rng) {
    const auto& fx = loss_fixture();
    return {random_leaf(rng, {fx.g.n, fx.g.x.cols}, 0.25, 1.75),
            random_leaf(rng, {fx.g.n, fx.g.n}, 0.25, 1.75)};
}

inline masker::GraphMask as_mask(const std::vector<diff::ValuePtr>& leaves) {
    masker::GraphMask m;
    m.l_x = leaves[0];
    m.l_a = leaves[1];
    return m;
}

}  // namespace detail

// End-to-end cases: each full loss as a function of the mask logits, run
// through mask materialization and the frozen network on the shared fixture.
inline std::vector<Case> composite_cases() {
    std::vector<Case> cases;
    auto add_case = [&](std::string name,
                        std::function<diff::ValuePtr(const std::vector<diff::ValuePtr>&)> build) {
        cases.push_back({std::move(name), detail::mask_leaves, std::move(build)});
    };
    const losses::LossConfig cfg;

    add_case("mask materialization", [](const std::vector<diff::ValuePtr>& l) {
        auto m = masker::materialize(detail::as_mask(l));
        return diff::add(diff::reduce_sum(m.m_a), diff::reduce_sum(m.m_x));
    });
    add_case("embedding compression", [cfg](const std::vector<diff::ValuePtr>& l) {
        const auto& fx = detail::loss_fixture();
        auto pair = masker::apply_mask(fx.g, detail::as_mask(l));
        auto fz = gnn::gin_forward_values(fx.ckpt.weights, pair.z_x, pair.z_a);
        return losses::kl_unit_gaussian(fz.embedding, cfg);
    });
    add_case("subgraph loss", [cfg](const std::vector<diff::ValuePtr>& l) {
        const auto& fx = detail::loss_fixture();
        return losses::loss_subgraph(fx.ckpt, fx.g, detail::as_mask(l), fx.label, cfg);
    });
    add_case("masked graph loss", [cfg](const std::vector<diff::ValuePtr>& l) {
        const auto& fx = detail::loss_fixture();
        return losses::loss_masked(fx.ckpt, fx.g, detail::as_mask(l), fx.label, cfg);
    });
    add_case("separation loss", [cfg](const std::vector<diff::ValuePtr>& l) {
        const auto& fx = detail::loss_fixture();
        auto set = losses::build_graph_losses(fx.ckpt, fx.g, detail::as_mask(l), fx.label,
                                              [&] {
                                                  auto c = cfg;
                                                  c.enable_ls = c.enable_lm = false;
                                                  return c;
                                              }());
        return set.total;
    });
    add_case("total loss", [cfg](const std::vector<diff::ValuePtr>& l) {
        const auto& fx = detail::loss_fixture();
        auto set = losses::build_graph_losses(fx.ckpt, fx.g, detail::as_mask(l), fx.label, cfg);
        return set.total;
    });

    return cases;
}

}  // namespace goodat::gradcheck
