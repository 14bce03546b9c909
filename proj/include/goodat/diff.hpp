#pragma once

// Dense reverse-mode differentiation on a dynamically built computation
// record, plus an Adam updater. Everything downstream (backbone training and
// mask training) is expressed through the primitives here, so each op carries
// exactly one forward and one backward rule and the finite-difference suite
// in gradcheck.hpp covers them all.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "goodat/errors.hpp"
#include "goodat/matrix.hpp"

namespace goodat::diff {

struct Value;
using ValuePtr = std::shared_ptr<Value>;

// Per-pass gradient accumulator, keyed by node. backward() folds the totals
// into each node's grad buffer at the end, so repeated passes accumulate.
using GradMap = std::unordered_map<const Value*, std::vector<double>>;

// One node in the computation record. data/grad are row-major; parents point
// upward only, so dropping the root frees the record.
struct Value {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<ValuePtr> parents;
    std::function<void(const std::vector<double>&, GradMap&)> backward_fn;

    std::size_t numel() const { return data.size(); }

    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline ValuePtr make_value(std::vector<std::size_t> shape, bool requires_grad = false) {
    auto v = std::make_shared<Value>();
    v->shape = std::move(shape);
    v->data.assign(shape_numel(v->shape), 0.0);
    v->requires_grad = requires_grad;
    return v;
}

inline ValuePtr constant(const Matrix& m) {
    auto v = make_value({m.rows, m.cols});
    v->data = m.data;
    return v;
}

inline ValuePtr constant_scalar(double x) {
    auto v = make_value({1});
    v->data[0] = x;
    return v;
}

inline ValuePtr parameter(const Matrix& m) {
    auto v = constant(m);
    v->requires_grad = true;
    v->ensure_grad();
    return v;
}

namespace detail {

inline std::vector<double>& slot(GradMap& acc, const Value* v) {
    auto& g = acc[v];
    if (g.size() != v->data.size()) g.assign(v->data.size(), 0.0);
    return g;
}

inline ValuePtr make_node(const char* op, std::vector<std::size_t> shape,
                          std::vector<ValuePtr> parents) {
    auto out = make_value(std::move(shape));
    out->op = op;
    for (const auto& p : parents) out->requires_grad = out->requires_grad || p->requires_grad;
    out->parents = std::move(parents);
    return out;
}

inline void check_same_shape(const char* op, const Value& a, const Value& b) {
    if (a.shape != b.shape) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

inline ValuePtr matmul(const ValuePtr& a, const ValuePtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = detail::make_node("matmul", {m, n}, {a, b});
    const double* ad = a->data.data();
    const double* bd = b->data.data();
    double* od = out->data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) od[i * n + j] += av * bd[p * n + j];
        }
    }
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* pb = b.get();
        out->backward_fn = [pa, pb, m, k, n](const std::vector<double>& g, GradMap& acc) {
            if (pa->requires_grad) {
                auto& ga = detail::slot(acc, pa);  // g . b^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            s += g[i * n + j] * pb->data[p * n + j];
                        ga[i * k + p] += s;
                    }
            }
            if (pb->requires_grad) {
                auto& gb = detail::slot(acc, pb);  // a^T . g
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            s += pa->data[i * k + p] * g[i * n + j];
                        gb[p * n + j] += s;
                    }
            }
        };
    }
    return out;
}

inline ValuePtr transpose(const ValuePtr& a) {
    if (a->shape.size() != 2)
        throw DimensionError("transpose: expected a 2-d value, got " + shape_str(a->shape));
    const std::size_t r = a->shape[0], c = a->shape[1];
    auto out = detail::make_node("transpose", {c, r}, {a});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[j * r + i] = a->data[i * c + j];
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa, r, c](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        };
    }
    return out;
}

inline ValuePtr hadamard(const ValuePtr& a, const ValuePtr& b) {
    detail::check_same_shape("hadamard", *a, *b);
    auto out = detail::make_node("hadamard", a->shape, {a, b});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* pb = b.get();
        out->backward_fn = [pa, pb](const std::vector<double>& g, GradMap& acc) {
            if (pa->requires_grad) {
                auto& ga = detail::slot(acc, pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                auto& gb = detail::slot(acc, pb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->data[i];
            }
        };
    }
    return out;
}

inline ValuePtr add(const ValuePtr& a, const ValuePtr& b) {
    detail::check_same_shape("add", *a, *b);
    auto out = detail::make_node("add", a->shape, {a, b});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* pb = b.get();
        out->backward_fn = [pa, pb](const std::vector<double>& g, GradMap& acc) {
            if (pa->requires_grad) {
                auto& ga = detail::slot(acc, pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
                auto& gb = detail::slot(acc, pb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
    }
    return out;
}

inline ValuePtr sub(const ValuePtr& a, const ValuePtr& b) {
    detail::check_same_shape("sub", *a, *b);
    auto out = detail::make_node("sub", a->shape, {a, b});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* pb = b.get();
        out->backward_fn = [pa, pb](const std::vector<double>& g, GradMap& acc) {
            if (pa->requires_grad) {
                auto& ga = detail::slot(acc, pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
                auto& gb = detail::slot(acc, pb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        };
    }
    return out;
}

inline ValuePtr scale(const ValuePtr& a, double c) {
    auto out = detail::make_node("scale", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * c;
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa, c](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        };
    }
    return out;
}

inline ValuePtr add_scalar(const ValuePtr& a, double c) {
    auto out = detail::make_node("add_scalar", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + c;
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return out;
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline ValuePtr sigmoid(const ValuePtr& a) {
    auto out = detail::make_node("sigmoid", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = sigmoid_scalar(a->data[i]);
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* self = out.get();
        out->backward_fn = [pa, self](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double s = self->data[i];
                ga[i] += g[i] * s * (1.0 - s);
            }
        };
    }
    return out;
}

inline ValuePtr relu(const ValuePtr& a) {
    auto out = detail::make_node("relu", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i)
        out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (pa->data[i] > 0.0) ga[i] += g[i];
        };
    }
    return out;
}

inline ValuePtr exp_elem(const ValuePtr& a) {
    auto out = detail::make_node("exp", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::exp(a->data[i]);
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* self = out.get();
        out->backward_fn = [pa, self](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * self->data[i];
        };
    }
    return out;
}

// Callers must keep inputs strictly positive (the losses only take square
// roots of variance terms that are floored first).
inline ValuePtr sqrt_elem(const ValuePtr& a) {
    auto out = detail::make_node("sqrt", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::sqrt(a->data[i]);
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* self = out.get();
        out->backward_fn = [pa, self](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / self->data[i];
        };
    }
    return out;
}

inline ValuePtr reciprocal(const ValuePtr& a) {
    auto out = detail::make_node("reciprocal", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = 1.0 / a->data[i];
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* self = out.get();
        out->backward_fn = [pa, self](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] -= g[i] * self->data[i] * self->data[i];
        };
    }
    return out;
}

// min(x, cap): gradient passes only strictly below the cap.
inline ValuePtr clamp_max(const ValuePtr& a, double cap) {
    auto out = detail::make_node("clamp_max", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::min(a->data[i], cap);
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa, cap](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (pa->data[i] < cap) ga[i] += g[i];
        };
    }
    return out;
}

// max(x, floor): gradient passes only strictly above the floor.
inline ValuePtr clamp_min(const ValuePtr& a, double floor) {
    auto out = detail::make_node("clamp_min", a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::max(a->data[i], floor);
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa, floor](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (pa->data[i] > floor) ga[i] += g[i];
        };
    }
    return out;
}

inline ValuePtr clamp(const ValuePtr& a, double lo, double hi) {
    return clamp_min(clamp_max(a, hi), lo);
}

inline ValuePtr reduce_sum(const ValuePtr& a) {
    auto out = detail::make_node("reduce_sum", {1}, {a});
    double s = 0.0;
    for (double x : a->data) s += x;
    out->data[0] = s;
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (double& x : ga) x += g[0];
        };
    }
    return out;
}

inline ValuePtr reduce_mean(const ValuePtr& a) {
    auto out = detail::make_node("reduce_mean", {1}, {a});
    const double k = static_cast<double>(a->numel());
    double s = 0.0;
    for (double x : a->data) s += x;
    out->data[0] = s / k;
    if (out->requires_grad) {
        Value* pa = a.get();
        out->backward_fn = [pa, k](const std::vector<double>& g, GradMap& acc) {
            auto& ga = detail::slot(acc, pa);
            for (double& x : ga) x += g[0] / k;
        };
    }
    return out;
}

// Broadcast add of a one-element value onto every entry of a.
inline ValuePtr bcast_add(const ValuePtr& a, const ValuePtr& s) {
    if (s->numel() != 1)
        throw DimensionError("bcast_add: broadcast operand must be scalar, got " +
                             shape_str(s->shape));
    auto out = detail::make_node("bcast_add", a->shape, {a, s});
    const double sv = s->data[0];
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + sv;
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* ps = s.get();
        out->backward_fn = [pa, ps](const std::vector<double>& g, GradMap& acc) {
            if (pa->requires_grad) {
                auto& ga = detail::slot(acc, pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (ps->requires_grad) {
                auto& gs = detail::slot(acc, ps);
                double total = 0.0;
                for (double x : g) total += x;
                gs[0] += total;
            }
        };
    }
    return out;
}

// Broadcast multiply by a one-element value.
inline ValuePtr bcast_mul(const ValuePtr& a, const ValuePtr& s) {
    if (s->numel() != 1)
        throw DimensionError("bcast_mul: broadcast operand must be scalar, got " +
                             shape_str(s->shape));
    auto out = detail::make_node("bcast_mul", a->shape, {a, s});
    const double sv = s->data[0];
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * sv;
    if (out->requires_grad) {
        Value* pa = a.get();
        Value* ps = s.get();
        out->backward_fn = [pa, ps, sv](const std::vector<double>& g, GradMap& acc) {
            if (pa->requires_grad) {
                auto& ga = detail::slot(acc, pa);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
            }
            if (ps->requires_grad) {
                auto& gs = detail::slot(acc, ps);
                double total = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * pa->data[i];
                gs[0] += total;
            }
        };
    }
    return out;
}

// -log softmax(logits)[target], computed with the max-shift stabilization.
// Backward is softmax - one_hot(target).
inline ValuePtr cross_entropy_from_logits(const ValuePtr& logits, std::size_t target) {
    const std::size_t c = logits->numel();
    if (target >= c)
        throw ContractError("cross_entropy_from_logits: target " + std::to_string(target) +
                            " out of range for " + std::to_string(c) + " classes");
    auto out = detail::make_node("cross_entropy_from_logits", {1}, {logits});
    std::size_t arg = 0;
    for (std::size_t i = 1; i < c; ++i)
        if (logits->data[i] > logits->data[arg]) arg = i;
    const double mx = logits->data[arg];
    // rest excludes the unit max term so log1p keeps full precision when the
    // target is (near) the max and the loss is tiny.
    double rest = 0.0;
    for (std::size_t i = 0; i < c; ++i)
        if (i != arg) rest += std::exp(logits->data[i] - mx);
    const double lse = std::log1p(rest) + mx;
    out->data[0] = std::log1p(rest) + (mx - logits->data[target]);
    if (out->requires_grad) {
        Value* pl = logits.get();
        out->backward_fn = [pl, target, lse](const std::vector<double>& g, GradMap& acc) {
            auto& gl = detail::slot(acc, pl);
            for (std::size_t i = 0; i < gl.size(); ++i) {
                double p = std::exp(pl->data[i] - lse);
                if (i == target) p -= 1.0;
                gl[i] += g[0] * p;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Reverse topological order over the requires_grad part of the record,
// root first. Iterative so record depth never touches the call stack.
inline std::vector<Value*> reverse_topo_order(Value* root) {
    std::vector<Value*> order;
    std::unordered_set<Value*> visited;
    std::vector<std::pair<Value*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            Value* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && next >= stack.back().first->parents.size()) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

// Seeds the scalar root with 1 and accumulates d(root)/d(node) into the grad
// buffer of every reachable node with requires_grad. Accumulation is pure:
// running backward twice without zeroing doubles every gradient.
inline void backward(const ValuePtr& root) {
    if (root->numel() != 1)
        throw ContractError("backward: root must be scalar, got " + shape_str(root->shape));
    if (!root->requires_grad) return;
    GradMap acc;
    acc[root.get()] = {1.0};
    for (Value* v : reverse_topo_order(root.get())) {
        auto it = acc.find(v);
        if (it == acc.end() || !v->backward_fn) continue;
        v->backward_fn(it->second, acc);
    }
    for (auto& [node, g] : acc) {
        auto* v = const_cast<Value*>(node);
        v->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) v->grad[i] += g[i];
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    long step_count = 0;
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

// Standard Adam with bias correction; zeroes gradients afterward.
inline void adam_update(std::vector<ValuePtr>& params, AdamState& state) {
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p->data.size(), 0.0);
            state.second_moment.emplace_back(p->data.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size())
        throw ContractError("adam_update: state tracks " +
                            std::to_string(state.first_moment.size()) + " params, got " +
                            std::to_string(params.size()));
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Value& p = *params[k];
        if (p.grad.size() != p.data.size())
            throw ContractError("adam_update: parameter has no populated gradient");
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (m.size() != p.data.size())
            throw ContractError("adam_update: moment buffer shape does not match parameter");
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps_hat);
        }
        p.zero_grad();
    }
}

}  // namespace goodat::diff
