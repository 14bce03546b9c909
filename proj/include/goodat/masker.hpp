#pragma once

// The per-graph learnable masker M = (M_X, M_A). Each test graph owns one
// pair of logit matrices; squashing them through a sigmoid gives masks in
// (0,1), and averaging the edge logits with their transpose makes M_A
// symmetric by construction. Applying the mask splits a graph into the kept
// part Z = G (.) M and the remainder Z' = G - Z, which reconstruct G
// additively.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <vector>

#include "goodat/diff.hpp"
#include "goodat/errors.hpp"
#include "goodat/graph.hpp"
#include "goodat/rng.hpp"

namespace goodat::masker {

struct GraphMask {
    std::size_t graph_index = 0;
    diff::ValuePtr l_x;  // n x d feature logits
    diff::ValuePtr l_a;  // n x n edge logits

    std::vector<diff::ValuePtr> parameters() const { return {l_x, l_a}; }
};

// One mask per graph; logits start at init_logit plus a little uniform noise
// to break symmetry. init_logit > 0 biases the mask toward keeping the graph
// so training starts from Z ~ G.
inline std::vector<GraphMask> init_masks(const std::vector<Graph>& test_graphs,
                                         double init_logit, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GraphMask> masks;
    masks.reserve(test_graphs.size());
    for (std::size_t i = 0; i < test_graphs.size(); ++i) {
        const Graph& g = test_graphs[i];
        GraphMask m;
        m.graph_index = i;
        m.l_x = diff::make_value({g.n, g.x.cols}, true);
        for (double& v : m.l_x->data) v = init_logit + rng.uniform(-0.01, 0.01);
        m.l_x->ensure_grad();
        m.l_a = diff::make_value({g.n, g.n}, true);
        for (double& v : m.l_a->data) v = init_logit + rng.uniform(-0.01, 0.01);
        m.l_a->ensure_grad();
        masks.push_back(std::move(m));
    }
    return masks;
}

struct Materialized {
    diff::ValuePtr m_x;  // n x d, entries in (0,1)
    diff::ValuePtr m_a;  // n x n, entries in (0,1), symmetric
};

inline Materialized materialize(const GraphMask& mask) {
    auto m_x = diff::sigmoid(mask.l_x);
    auto m_a = diff::sigmoid(diff::scale(diff::add(mask.l_a, diff::transpose(mask.l_a)), 0.5));
    return {m_x, m_a};
}

struct MaskedPair {
    diff::ValuePtr z_x, z_a;    // kept part Z
    diff::ValuePtr zp_x, zp_a;  // remainder Z'
};

// Z = (X (.) M_X, A (.) M_A) and Z' = (X - X (.) M_X, A - A (.) M_A).
// Entries of A that are zero stay exactly zero on both sides, so the zero
// diagonal and the non-edge pattern survive masking.
inline MaskedPair apply_mask(const Graph& g, const Materialized& m) {
    if (m.m_x->shape[0] != g.n || m.m_x->shape[1] != g.x.cols || m.m_a->shape[0] != g.n ||
        m.m_a->shape[1] != g.n)
        throw ContractError("apply_mask: mask shapes " + diff::shape_str(m.m_x->shape) + "/" +
                            diff::shape_str(m.m_a->shape) + " do not fit a graph with " +
                            std::to_string(g.n) + " nodes and " + std::to_string(g.x.cols) +
                            " features");
    auto x = diff::constant(g.x);
    auto a = diff::constant(g.a);
    MaskedPair out;
    out.z_x = diff::hadamard(x, m.m_x);
    out.z_a = diff::hadamard(a, m.m_a);
    out.zp_x = diff::sub(x, out.z_x);
    out.zp_a = diff::sub(a, out.z_a);
    return out;
}

inline MaskedPair apply_mask(const Graph& g, const GraphMask& mask) {
    return apply_mask(g, materialize(mask));
}

// Diagnostic sharpness measure: sum of min(m, 1-m) over every feature entry
// and every edge of G. Zero iff the mask is fully saturated on G's support.
inline double overlap_size(const GraphMask& mask, const Graph& g) {
    double total = 0.0;
    for (double l : mask.l_x->data) {
        const double m = diff::sigmoid_scalar(l);
        total += std::min(m, 1.0 - m);
    }
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) {
            if (g.a.at(i, j) != 1.0) continue;
            const double m = diff::sigmoid_scalar(
                0.5 * (mask.l_a->data[i * g.n + j] + mask.l_a->data[j * g.n + i]));
            total += std::min(m, 1.0 - m);
        }
    return total;
}

// Text dump of the materialized masks for inspection, one matrix per block.
inline void write_mask_dump(std::ostream& out, const GraphMask& mask) {
    auto m = materialize(mask);
    auto emit = [&](const char* title, const diff::ValuePtr& v) {
        out << title << " " << v->shape[0] << " " << v->shape[1] << "\n";
        char buf[64];
        for (std::size_t i = 0; i < v->shape[0]; ++i) {
            for (std::size_t j = 0; j < v->shape[1]; ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", v->data[i * v->shape[1] + j]);
                out << (j ? " " : "") << buf;
            }
            out << "\n";
        }
    };
    out << "graph " << mask.graph_index << "\n";
    emit("m_x", m.m_x);
    emit("m_a", m.m_a);
}

}  // namespace goodat::masker
