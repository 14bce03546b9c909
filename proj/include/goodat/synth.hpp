#pragma once

// Synthetic dataset generators for self-contained evaluation. The two
// in-distribution classes share a sparse random background and differ only
// in the planted motif (triangles vs 4-stars); the out-of-distribution
// graphs are much denser random graphs with no motif. Features are a single
// constant-1 column everywhere, so structure alone carries the signal.

#include <cstdint>
#include <vector>

#include "goodat/errors.hpp"
#include "goodat/graph.hpp"
#include "goodat/rng.hpp"

namespace goodat::synth {

enum class Kind { id_class0, id_class1, ood };

namespace detail {

inline void add_edge(Matrix& a, std::size_t u, std::size_t v) {
    a.at(u, v) = 1.0;
    a.at(v, u) = 1.0;
}

// Hands out nodes from a shuffled pool so consecutive draws are disjoint;
// reshuffles and starts over when the pool runs dry (small graphs).
class NodePool {
   public:
    NodePool(Rng& rng, std::size_t n, std::optional<std::size_t> excluded)
        : rng_(rng) {
        for (std::size_t i = 0; i < n; ++i)
            if (!excluded || i != *excluded) nodes_.push_back(i);
        rng_.shuffle(nodes_);
    }

    std::size_t take() {
        if (next_ == nodes_.size()) {
            rng_.shuffle(nodes_);
            next_ = 0;
        }
        return nodes_[next_++];
    }

   private:
    Rng& rng_;
    std::vector<std::size_t> nodes_;
    std::size_t next_ = 0;
};

}  // namespace detail

inline std::vector<Graph> synth_generate(Kind kind, std::size_t count, std::size_t n_lo,
                                         std::size_t n_hi, std::uint64_t seed) {
    if (n_lo < 6 || n_hi > 60 || n_lo > n_hi)
        throw ContractError("synth_generate: size range [" + std::to_string(n_lo) + ", " +
                            std::to_string(n_hi) + "] must lie within [6, 60]");
    Rng rng(seed);
    const double edge_prob = kind == Kind::ood ? 0.4 : 0.1;
    std::vector<Graph> graphs;
    graphs.reserve(count);
    for (std::size_t g = 0; g < count; ++g) {
        Graph gr;
        gr.n = n_lo + static_cast<std::size_t>(rng.below(n_hi - n_lo + 1));
        gr.a = Matrix(gr.n, gr.n);
        for (std::size_t i = 0; i < gr.n; ++i)
            for (std::size_t j = i + 1; j < gr.n; ++j)
                if (rng.uniform() < edge_prob) detail::add_edge(gr.a, i, j);
        if (kind != Kind::ood) {
            const std::size_t motifs = 1 + gr.n / 4;
            if (kind == Kind::id_class0) {
                // Disjoint triangles: a flat band of moderately raised degrees.
                detail::NodePool pool(rng, gr.n, std::nullopt);
                for (std::size_t m = 0; m < motifs; ++m) {
                    // the pool can wrap mid-motif, so re-draw until the
                    // corners are distinct — a triangle has no self-loops
                    const std::size_t u = pool.take();
                    std::size_t v = pool.take();
                    while (v == u) v = pool.take();
                    std::size_t w = pool.take();
                    while (w == u || w == v) w = pool.take();
                    detail::add_edge(gr.a, u, v);
                    detail::add_edge(gr.a, v, w);
                    detail::add_edge(gr.a, u, w);
                }
            } else {
                // Stars share one hub, giving class 1 a pronounced
                // high-degree center no triangle placement produces.
                const std::size_t hub = static_cast<std::size_t>(rng.below(gr.n));
                detail::NodePool pool(rng, gr.n, hub);
                for (std::size_t m = 0; m < motifs; ++m)
                    for (int leaf = 0; leaf < 3; ++leaf)
                        detail::add_edge(gr.a, hub, pool.take());
            }
        }
        gr.x = Matrix(gr.n, 1, 1.0);
        if (kind == Kind::id_class0) gr.label = 0;
        if (kind == Kind::id_class1) gr.label = 1;
        graphs.push_back(std::move(gr));
    }
    return graphs;
}

}  // namespace goodat::synth
