#pragma once

// Reader and writer for the public TU benchmark text layout:
//   <DS>_A.txt              edge list "i, j", 1-indexed global node ids
//   <DS>_graph_indicator.txt one graph id per node line
//   <DS>_graph_labels.txt    one integer label per graph line
//   <DS>_node_labels.txt     optional, one integer per node (one-hot encoded)
//   <DS>_node_attributes.txt optional, comma-separated reals per node
// Parsing tolerates CRLF endings and surrounding whitespace. Errors carry
// file names and 1-based line numbers.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "goodat/errors.hpp"
#include "goodat/graph.hpp"

namespace goodat::tu {

struct TuParseResult {
    std::vector<Graph> graphs;
    int num_classes = 0;
    std::size_t self_loops_dropped = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const char* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

// Non-empty lines with their original 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(
    const std::filesystem::path& path, bool mandatory) {
    std::ifstream in(path);
    if (!in) {
        if (mandatory) throw ParseError("missing dataset file " + path.string());
        return {};
    }
    std::vector<std::pair<std::size_t, std::string>> lines;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string t = trim(raw);
        if (!t.empty()) lines.emplace_back(lineno, std::move(t));
    }
    return lines;
}

inline long long parse_int(const std::string& token, const std::filesystem::path& file,
                           std::size_t lineno) {
    const std::string t = trim(token);
    const char* begin = t.c_str();
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(begin, &end, 10);
    if (t.empty() || end != begin + t.size() || errno == ERANGE)
        throw ParseError(file.string() + ":" + std::to_string(lineno) +
                         ": expected integer, got '" + token + "'");
    return v;
}

inline double parse_real(const std::string& token, const std::filesystem::path& file,
                         std::size_t lineno) {
    const std::string t = trim(token);
    const char* begin = t.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(begin, &end);
    if (t.empty() || end != begin + t.size())
        throw ParseError(file.string() + ":" + std::to_string(lineno) +
                         ": expected real number, got '" + token + "'");
    return v;
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace detail

inline TuParseResult parse_tu_dataset(const std::filesystem::path& directory,
                                      const std::string& name) {
    namespace d = detail;
    const auto a_path = directory / (name + "_A.txt");
    const auto ind_path = directory / (name + "_graph_indicator.txt");
    const auto lab_path = directory / (name + "_graph_labels.txt");
    const auto nlab_path = directory / (name + "_node_labels.txt");
    const auto nattr_path = directory / (name + "_node_attributes.txt");

    // Graph membership of every node; graph ids are 1-indexed.
    const auto ind_lines = d::read_lines(ind_path, true);
    const std::size_t num_nodes = ind_lines.size();
    std::vector<std::size_t> node_graph(num_nodes);  // 0-indexed graph id per node
    std::size_t num_graphs = 0;
    for (std::size_t k = 0; k < num_nodes; ++k) {
        const long long gid = d::parse_int(ind_lines[k].second, ind_path, ind_lines[k].first);
        if (gid < 1)
            throw ParseError(ind_path.string() + ":" + std::to_string(ind_lines[k].first) +
                             ": graph ids are 1-indexed, got " + std::to_string(gid));
        node_graph[k] = static_cast<std::size_t>(gid - 1);
        num_graphs = std::max(num_graphs, static_cast<std::size_t>(gid));
    }

    // Local node numbering: within each graph, increasing global id order.
    std::vector<std::size_t> graph_size(num_graphs, 0);
    std::vector<std::size_t> local_index(num_nodes);
    for (std::size_t k = 0; k < num_nodes; ++k) local_index[k] = graph_size[node_graph[k]]++;

    // Graph labels, remapped to 0..C-1 preserving sorted original order.
    const auto lab_lines = d::read_lines(lab_path, true);
    if (lab_lines.size() != num_graphs)
        throw ParseError(lab_path.string() + ": expected " + std::to_string(num_graphs) +
                         " graph labels, found " + std::to_string(lab_lines.size()));
    std::vector<long long> raw_labels(num_graphs);
    std::map<long long, int> label_map;
    for (std::size_t g = 0; g < num_graphs; ++g) {
        raw_labels[g] = d::parse_int(lab_lines[g].second, lab_path, lab_lines[g].first);
        label_map[raw_labels[g]] = 0;
    }
    int next = 0;
    for (auto& [raw, mapped] : label_map) mapped = next++;

    TuParseResult result;
    result.num_classes = next;
    result.graphs.resize(num_graphs);
    for (std::size_t g = 0; g < num_graphs; ++g) {
        result.graphs[g].n = graph_size[g];
        result.graphs[g].a = Matrix(graph_size[g], graph_size[g]);
        result.graphs[g].label = label_map.at(raw_labels[g]);
        result.graphs[g].ood_flag = std::nullopt;
    }

    // Edges: symmetrized, deduplicated, self-loops dropped and counted.
    for (const auto& [lineno, line] : d::read_lines(a_path, true)) {
        const auto toks = d::split_commas(line);
        if (toks.size() != 2)
            throw ParseError(a_path.string() + ":" + std::to_string(lineno) +
                             ": expected 'i, j', got '" + line + "'");
        const long long i = d::parse_int(toks[0], a_path, lineno);
        const long long j = d::parse_int(toks[1], a_path, lineno);
        if (i < 1 || j < 1 || i > static_cast<long long>(num_nodes) ||
            j > static_cast<long long>(num_nodes))
            throw ParseError(a_path.string() + ":" + std::to_string(lineno) + ": node id out of range 1.." +
                             std::to_string(num_nodes) + " in '" + line + "'");
        const std::size_t u = static_cast<std::size_t>(i - 1);
        const std::size_t v = static_cast<std::size_t>(j - 1);
        if (node_graph[u] != node_graph[v])
            throw ParseError(a_path.string() + ":" + std::to_string(lineno) +
                             ": edge crosses graphs " + std::to_string(node_graph[u] + 1) +
                             " and " + std::to_string(node_graph[v] + 1));
        if (u == v) {
            ++result.self_loops_dropped;
            continue;
        }
        Matrix& a = result.graphs[node_graph[u]].a;
        a.at(local_index[u], local_index[v]) = 1.0;
        a.at(local_index[v], local_index[u]) = 1.0;
    }

    // Node features: attributes verbatim, node labels appended one-hot; a
    // single constant-1 column when neither file exists.
    std::vector<std::vector<double>> attrs;
    const auto attr_lines = d::read_lines(nattr_path, false);
    if (!attr_lines.empty()) {
        if (attr_lines.size() != num_nodes)
            throw ParseError(nattr_path.string() + ": expected " + std::to_string(num_nodes) +
                             " attribute lines, found " + std::to_string(attr_lines.size()));
        attrs.resize(num_nodes);
        std::size_t width = 0;
        for (std::size_t k = 0; k < num_nodes; ++k) {
            const auto toks = d::split_commas(attr_lines[k].second);
            for (const auto& t : toks)
                attrs[k].push_back(d::parse_real(t, nattr_path, attr_lines[k].first));
            if (k == 0)
                width = attrs[k].size();
            else if (attrs[k].size() != width)
                throw ParseError(nattr_path.string() + ":" + std::to_string(attr_lines[k].first) +
                                 ": attribute row has " + std::to_string(attrs[k].size()) +
                                 " values, expected " + std::to_string(width));
        }
    }

    std::vector<long long> node_labels;
    std::map<long long, std::size_t> node_label_map;
    const auto nlab_lines = d::read_lines(nlab_path, false);
    if (!nlab_lines.empty()) {
        if (nlab_lines.size() != num_nodes)
            throw ParseError(nlab_path.string() + ": expected " + std::to_string(num_nodes) +
                             " node labels, found " + std::to_string(nlab_lines.size()));
        node_labels.resize(num_nodes);
        for (std::size_t k = 0; k < num_nodes; ++k) {
            node_labels[k] = d::parse_int(nlab_lines[k].second, nlab_path, nlab_lines[k].first);
            node_label_map[node_labels[k]] = 0;
        }
        std::size_t slot = 0;
        for (auto& [raw, mapped] : node_label_map) mapped = slot++;
    }

    const std::size_t d_attr = attrs.empty() ? 0 : attrs[0].size();
    const std::size_t d_onehot = node_label_map.size();
    const std::size_t d_total = d_attr + d_onehot;
    for (std::size_t g = 0; g < num_graphs; ++g)
        result.graphs[g].x = Matrix(graph_size[g], d_total == 0 ? 1 : d_total,
                                    d_total == 0 ? 1.0 : 0.0);
    for (std::size_t k = 0; k < num_nodes; ++k) {
        if (d_total == 0) continue;
        Matrix& x = result.graphs[node_graph[k]].x;
        const std::size_t row = local_index[k];
        for (std::size_t c = 0; c < d_attr; ++c) x.at(row, c) = attrs[k][c];
        if (d_onehot) x.at(row, d_attr + node_label_map.at(node_labels[k])) = 1.0;
    }
    return result;
}

namespace detail {

inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

enum class FeatureKind { constant_one, one_hot, attributes };

inline FeatureKind classify_features(const std::vector<Graph>& graphs) {
    bool all_const_one = true;
    bool all_one_hot = true;
    for (const Graph& g : graphs) {
        if (g.x.cols != 1) all_const_one = false;
        for (std::size_t i = 0; i < g.x.rows; ++i) {
            std::size_t ones = 0, zeros = 0;
            for (std::size_t j = 0; j < g.x.cols; ++j) {
                const double v = g.x.at(i, j);
                if (v == 1.0)
                    ++ones;
                else if (v == 0.0)
                    ++zeros;
                if (v != 1.0) all_const_one = false;
            }
            if (ones != 1 || zeros != g.x.cols - 1) all_one_hot = false;
        }
    }
    if (all_const_one) return FeatureKind::constant_one;
    if (all_one_hot) return FeatureKind::one_hot;
    return FeatureKind::attributes;
}

}  // namespace detail

// Serializes graphs back to the TU layout. Node features are emitted in the
// narrowest faithful form (nothing for a constant-1 column, node labels for
// one-hot rows, full attribute rows otherwise), so parse -> write -> parse
// reproduces the same graphs.
inline void write_tu_dataset(const std::filesystem::path& directory, const std::string& name,
                             const std::vector<Graph>& graphs) {
    namespace fs = std::filesystem;
    fs::create_directories(directory);
    auto open = [&](const std::string& suffix) {
        const auto path = directory / (name + suffix);
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path.string());
        return out;
    };

    auto a_file = open("_A.txt");
    auto ind_file = open("_graph_indicator.txt");
    auto lab_file = open("_graph_labels.txt");
    std::size_t offset = 0;
    for (std::size_t g = 0; g < graphs.size(); ++g) {
        const Graph& gr = graphs[g];
        if (!gr.label)
            throw ContractError("write_tu_dataset: graph " + std::to_string(g) + " has no label");
        lab_file << *gr.label << "\n";
        for (std::size_t i = 0; i < gr.n; ++i) {
            ind_file << (g + 1) << "\n";
            for (std::size_t j = 0; j < gr.n; ++j)
                if (gr.a.at(i, j) == 1.0)
                    a_file << (offset + i + 1) << ", " << (offset + j + 1) << "\n";
        }
        offset += gr.n;
    }

    const auto kind = detail::classify_features(graphs);
    if (kind == detail::FeatureKind::one_hot) {
        auto nlab = open("_node_labels.txt");
        for (const Graph& gr : graphs)
            for (std::size_t i = 0; i < gr.n; ++i)
                for (std::size_t j = 0; j < gr.x.cols; ++j)
                    if (gr.x.at(i, j) == 1.0) nlab << j << "\n";
    } else if (kind == detail::FeatureKind::attributes) {
        auto nattr = open("_node_attributes.txt");
        for (const Graph& gr : graphs)
            for (std::size_t i = 0; i < gr.n; ++i) {
                for (std::size_t j = 0; j < gr.x.cols; ++j)
                    nattr << (j ? ", " : "") << detail::format_real(gr.x.at(i, j));
                nattr << "\n";
            }
    }
}

}  // namespace goodat::tu
