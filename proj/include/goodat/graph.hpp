#pragma once

// Graph representation and the dataset protocol: 90/10 split of the
// in-distribution graphs, a mixed test set with equal out-of-distribution
// counts, and zero-pad feature alignment across dataset pairs.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "goodat/errors.hpp"
#include "goodat/matrix.hpp"
#include "goodat/rng.hpp"

namespace goodat {

struct Graph {
    std::size_t n = 0;
    Matrix x;  // n x d node features
    Matrix a;  // n x n adjacency, entries in {0,1}, symmetric, zero diagonal
    std::optional<int> label;
    std::optional<bool> ood_flag;  // evaluation ground truth; never consulted by training/scoring
};

struct DatasetBundle {
    std::vector<Graph> train_graphs;
    std::vector<Graph> test_graphs;
    int num_classes = 0;
    std::size_t feature_dim = 0;
    std::string provenance;
};

// Throws unless A is symmetric 0/1 with a zero diagonal and X has n rows.
inline void validate_graph(const Graph& g) {
    if (g.x.rows != g.n)
        throw ContractError("graph: feature matrix has " + std::to_string(g.x.rows) +
                            " rows for " + std::to_string(g.n) + " nodes");
    if (g.a.rows != g.n || g.a.cols != g.n)
        throw ContractError("graph: adjacency is " + std::to_string(g.a.rows) + "x" +
                            std::to_string(g.a.cols) + " for " + std::to_string(g.n) + " nodes");
    for (std::size_t i = 0; i < g.n; ++i) {
        if (g.a.at(i, i) != 0.0) throw ContractError("graph: nonzero diagonal in adjacency");
        for (std::size_t j = 0; j < g.n; ++j) {
            const double v = g.a.at(i, j);
            if (v != 0.0 && v != 1.0)
                throw ContractError("graph: adjacency entry not in {0,1}");
            if (v != g.a.at(j, i)) throw ContractError("graph: adjacency not symmetric");
        }
    }
}

// Deterministic 90/10 split; floor(0.9 N) graphs go to training.
inline std::pair<std::vector<Graph>, std::vector<Graph>> split_id_dataset(
    const std::vector<Graph>& graphs, std::uint64_t seed) {
    if (graphs.empty()) throw ContractError("split_id_dataset: empty graph list");
    std::vector<std::size_t> order(graphs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t n_train = graphs.size() * 9 / 10;
    std::pair<std::vector<Graph>, std::vector<Graph>> out;
    for (std::size_t k = 0; k < order.size(); ++k)
        (k < n_train ? out.first : out.second).push_back(graphs[order[k]]);
    return out;
}

// All held-out ID graphs plus an equal number of OOD graphs drawn without
// replacement; the combined order is shuffled.
inline std::vector<Graph> build_test_set(const std::vector<Graph>& id_held_out,
                                         const std::vector<Graph>& ood_pool,
                                         std::uint64_t seed) {
    if (ood_pool.size() < id_held_out.size())
        throw ContractError("build_test_set: need " + std::to_string(id_held_out.size()) +
                            " out-of-distribution graphs but the pool holds only " +
                            std::to_string(ood_pool.size()));
    Rng rng(seed);
    std::vector<std::size_t> pool_order(ood_pool.size());
    for (std::size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
    rng.shuffle(pool_order);
    std::vector<Graph> test;
    test.reserve(2 * id_held_out.size());
    for (const Graph& g : id_held_out) {
        test.push_back(g);
        test.back().ood_flag = false;
    }
    for (std::size_t k = 0; k < id_held_out.size(); ++k) {
        test.push_back(ood_pool[pool_order[k]]);
        test.back().ood_flag = true;
    }
    rng.shuffle(test);
    return test;
}

namespace detail {

inline std::size_t uniform_feature_dim(const std::vector<Graph>& graphs, const char* side) {
    if (graphs.empty()) return 0;
    const std::size_t d = graphs.front().x.cols;
    for (const Graph& g : graphs)
        if (g.x.cols != d)
            throw ContractError(std::string("feature_align: ") + side +
                                " side mixes feature dimensions " + std::to_string(d) + " and " +
                                std::to_string(g.x.cols));
    return d;
}

inline void pad_features(std::vector<Graph>& graphs, std::size_t target) {
    for (Graph& g : graphs) {
        if (g.x.cols == target) continue;
        Matrix padded(g.x.rows, target);
        for (std::size_t i = 0; i < g.x.rows; ++i)
            for (std::size_t j = 0; j < g.x.cols; ++j) padded.at(i, j) = g.x.at(i, j);
        g.x = std::move(padded);
    }
}

}  // namespace detail

// Zero-pads the narrower side's feature matrices on the right so both share
// the wider dimension. Returns that common dimension.
inline std::size_t feature_align(std::vector<Graph>& a, std::vector<Graph>& b) {
    const std::size_t da = detail::uniform_feature_dim(a, "first");
    const std::size_t db = detail::uniform_feature_dim(b, "second");
    const std::size_t target = std::max(da, db);
    detail::pad_features(a, target);
    detail::pad_features(b, target);
    return target;
}

}  // namespace goodat
