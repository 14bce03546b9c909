#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "goodat/masker.hpp"
#include "goodat/synth.hpp"

using namespace goodat;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Triangle plus a pendant node, two feature columns with distinct values.
Graph small_graph() {
    Graph g;
    g.n = 4;
    g.x = Matrix(4, 2);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            g.x.at(i, j) = 0.7 * static_cast<double>(i) - 0.3 * static_cast<double>(j) + 0.1;
    g.a = Matrix(4, 4);
    const std::size_t edges[][2] = {{0, 1}, {1, 2}, {2, 0}, {2, 3}};
    for (const auto& e : edges) {
        g.a.at(e[0], e[1]) = 1.0;
        g.a.at(e[1], e[0]) = 1.0;
    }
    return g;
}

void fill_logits(masker::GraphMask& m, double value) {
    for (double& v : m.l_x->data) v = value;
    for (double& v : m.l_a->data) v = value;
}

}  // namespace

TEST_CASE("mask initialization produces per-graph shapes and near-open masks") {
    auto graphs = synth::synth_generate(synth::Kind::id_class0, 3, 8, 14, 77);
    auto masks = masker::init_masks(graphs, 1.0, 5);
    REQUIRE(masks.size() == graphs.size());
    const double open = 1.0 / (1.0 + std::exp(-1.0));
    for (std::size_t i = 0; i < masks.size(); ++i) {
        CHECK(masks[i].graph_index == i);
        REQUIRE(masks[i].l_x->shape == std::vector<std::size_t>{graphs[i].n, graphs[i].x.cols});
        REQUIRE(masks[i].l_a->shape == std::vector<std::size_t>{graphs[i].n, graphs[i].n});
        CHECK(masks[i].l_x->requires_grad);
        CHECK(masks[i].l_a->requires_grad);
        auto m = masker::materialize(masks[i]);
        for (double v : m.m_x->data) CHECK_THAT(v, WithinAbs(open, 0.002));
        for (double v : m.m_a->data) CHECK_THAT(v, WithinAbs(open, 0.002));
    }
}

TEST_CASE("mask initialization is deterministic in the seed and noisy within it") {
    auto graphs = synth::synth_generate(synth::Kind::id_class1, 2, 8, 12, 3);
    auto a = masker::init_masks(graphs, 1.0, 11);
    auto b = masker::init_masks(graphs, 1.0, 11);
    auto c = masker::init_masks(graphs, 1.0, 12);
    REQUIRE(a[0].l_x->data == b[0].l_x->data);
    REQUIRE(a[1].l_a->data == b[1].l_a->data);
    CHECK(a[0].l_x->data != c[0].l_x->data);
    // the noise actually varies entries (symmetry breaking)
    CHECK(a[0].l_x->data[0] != a[0].l_x->data[1]);
}

TEST_CASE("strongly positive initial logits keep nearly the whole graph") {
    auto graphs = synth::synth_generate(synth::Kind::id_class0, 1, 8, 10, 4);
    auto masks = masker::init_masks(graphs, 20.0, 9);
    auto m = masker::materialize(masks[0]);
    for (double v : m.m_x->data) CHECK(v > 0.9999999);
    for (double v : m.m_a->data) CHECK(v > 0.9999999);
}

TEST_CASE("materialized edge mask is exactly symmetric and in the open interval") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.3, 123);
    // make the raw logits clearly asymmetric first
    masks[0].l_a->data[0 * 4 + 1] = 2.0;
    masks[0].l_a->data[1 * 4 + 0] = -1.0;
    auto m = masker::materialize(masks[0]);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            const double v = m.m_a->data[i * 4 + j];
            REQUIRE(v == m.m_a->data[j * 4 + i]);  // bitwise
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    for (double v : m.m_x->data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("zero edge logits materialize to one half everywhere") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.0, 1);
    fill_logits(masks[0], 0.0);
    auto m = masker::materialize(masks[0]);
    for (double v : m.m_a->data) REQUIRE(v == 0.5);
    for (double v : m.m_x->data) REQUIRE(v == 0.5);
}

TEST_CASE("edge mask sum gradient matches central finite differences") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.4, 21);
    auto& mask = masks[0];
    auto total = diff::reduce_sum(masker::materialize(mask).m_a);
    diff::backward(total);
    const double h = 1e-5;
    for (std::size_t i = 0; i < mask.l_a->data.size(); ++i) {
        const double orig = mask.l_a->data[i];
        // reduce via plain sums so the oracle stays independent of the graph engine
        double sp = 0.0, sm = 0.0;
        mask.l_a->data[i] = orig + h;
        {
            auto mm = masker::materialize(mask).m_a;
            for (double v : mm->data) sp += v;
        }
        mask.l_a->data[i] = orig - h;
        {
            auto mm = masker::materialize(mask).m_a;
            for (double v : mm->data) sm += v;
        }
        mask.l_a->data[i] = orig;
        const double numeric = (sp - sm) / (2.0 * h);
        const double analytic = mask.l_a->grad[i];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
        REQUIRE(std::fabs(analytic - numeric) / denom < 1e-4);
    }
}

TEST_CASE("saturated masks keep the graph and empty the remainder") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.0, 2);
    fill_logits(masks[0], 500.0);
    auto pair = masker::apply_mask(g, masks[0]);
    REQUIRE(pair.z_x->data == g.x.data);
    REQUIRE(pair.z_a->data == g.a.data);
    for (double v : pair.zp_x->data) REQUIRE(v == 0.0);
    for (double v : pair.zp_a->data) REQUIRE(v == 0.0);
}

TEST_CASE("half-open masks split every entry exactly in half") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.0, 3);
    fill_logits(masks[0], 0.0);
    auto pair = masker::apply_mask(g, masks[0]);
    for (std::size_t i = 0; i < g.x.data.size(); ++i) {
        REQUIRE(pair.z_x->data[i] == 0.5 * g.x.data[i]);
        REQUIRE(pair.zp_x->data[i] == 0.5 * g.x.data[i]);
    }
    for (std::size_t i = 0; i < g.a.data.size(); ++i) {
        REQUIRE(pair.z_a->data[i] == 0.5 * g.a.data[i]);
        REQUIRE(pair.zp_a->data[i] == 0.5 * g.a.data[i]);
    }
}

TEST_CASE("kept part and remainder reconstruct the graph additively") {
    Rng rng(31);
    auto graphs = synth::synth_generate(synth::Kind::id_class0, 4, 8, 20, 55);
    auto masks = masker::init_masks(graphs, 0.0, 8);
    for (std::size_t k = 0; k < graphs.size(); ++k) {
        for (double& v : masks[k].l_x->data) v = rng.uniform(-3.0, 3.0);
        for (double& v : masks[k].l_a->data) v = rng.uniform(-3.0, 3.0);
        auto pair = masker::apply_mask(graphs[k], masks[k]);
        for (std::size_t i = 0; i < graphs[k].x.data.size(); ++i)
            REQUIRE_THAT(pair.z_x->data[i] + pair.zp_x->data[i],
                         WithinAbs(graphs[k].x.data[i], 1e-12));
        for (std::size_t i = 0; i < graphs[k].a.data.size(); ++i)
            REQUIRE_THAT(pair.z_a->data[i] + pair.zp_a->data[i],
                         WithinAbs(graphs[k].a.data[i], 1e-12));
    }
}

TEST_CASE("non-edges and the diagonal stay exactly zero on both sides") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.9, 17);
    auto pair = masker::apply_mask(g, masks[0]);
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j) {
            if (g.a.at(i, j) != 0.0) continue;
            REQUIRE(pair.z_a->data[i * g.n + j] == 0.0);
            REQUIRE(pair.zp_a->data[i * g.n + j] == 0.0);
        }
    for (std::size_t i = 0; i < g.n; ++i) {
        REQUIRE(pair.z_a->data[i * g.n + i] == 0.0);
        REQUIRE(pair.zp_a->data[i * g.n + i] == 0.0);
    }
}

TEST_CASE("applying a mask with foreign shapes is rejected") {
    Graph g = small_graph();
    auto other = synth::synth_generate(synth::Kind::id_class0, 1, 9, 11, 6);
    auto masks = masker::init_masks(other, 1.0, 1);
    REQUIRE_THROWS_MATCHES(masker::apply_mask(g, masks[0]), ContractError,
                           MessageMatches(ContainsSubstring("apply_mask")));
}

TEST_CASE("gradients reach the mask logits and nothing else") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.7, 13);
    auto pair = masker::apply_mask(g, masks[0]);
    auto total = diff::add(diff::reduce_sum(pair.z_a), diff::reduce_sum(pair.zp_x));
    diff::backward(total);
    double lx_norm = 0.0, la_norm = 0.0;
    for (double v : masks[0].l_x->grad) lx_norm += std::fabs(v);
    for (double v : masks[0].l_a->grad) la_norm += std::fabs(v);
    CHECK(lx_norm > 0.0);
    CHECK(la_norm > 0.0);
}

TEST_CASE("overlap of a saturated mask is exactly zero") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.0, 4);
    fill_logits(masks[0], 500.0);
    REQUIRE(masker::overlap_size(masks[0], g) == 0.0);
}

TEST_CASE("overlap of the half-open mask counts half of features plus edges") {
    Graph g = small_graph();  // 4 nodes, 2 feature columns, 4 undirected edges
    auto masks = masker::init_masks({g}, 0.0, 5);
    fill_logits(masks[0], 0.0);
    double ones = 0.0;
    for (double v : g.a.data) ones += v;
    REQUIRE(ones == 8.0);  // both directions of 4 edges
    const double expected = 0.5 * (ones + static_cast<double>(g.n) * 2.0);
    REQUIRE_THAT(masker::overlap_size(masks[0], g), WithinRel(expected, 1e-15));
}

TEST_CASE("overlap is invariant under flipping the mask") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.8, 6);
    const double before = masker::overlap_size(masks[0], g);
    for (double& v : masks[0].l_x->data) v = -v;
    for (double& v : masks[0].l_a->data) v = -v;
    const double after = masker::overlap_size(masks[0], g);
    REQUIRE_THAT(after, WithinAbs(before, 1e-12));
    CHECK(before > 0.0);
}

TEST_CASE("mask dump lists both matrices with round-trippable numbers") {
    Graph g = small_graph();
    auto masks = masker::init_masks({g}, 0.6, 7);
    std::ostringstream out;
    masker::write_mask_dump(out, masks[0]);
    const std::string text = out.str();
    CHECK_THAT(text, ContainsSubstring("graph 0"));
    CHECK_THAT(text, ContainsSubstring("m_x 4 2"));
    CHECK_THAT(text, ContainsSubstring("m_a 4 4"));
    // first m_x value round-trips exactly
    auto m = masker::materialize(masks[0]);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);  // graph header
    std::getline(in, line);  // m_x header
    std::getline(in, line);  // first row
    const double parsed = std::strtod(line.c_str(), nullptr);
    REQUIRE(parsed == m.m_x->data[0]);
}
