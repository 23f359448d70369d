#pragma once

// Test-only oracles, kept independent of the engine's backward path:
// central finite differences for gradients and a literal reachability
// walk for retention decisions.

#include <cmath>
#include <string>
#include <vector>

#include "focta/graph.hpp"

namespace focta::testing {

inline double eval_scalar(const Graph& g, ParamStore& store, const FeedMap& feed, int loss_node) {
    ForwardOptions opts;
    opts.keep_values = {loss_node};
    auto r = forward(g, store, feed, opts);
    return r.kept.at(loss_node).data[0];
}

struct FdReport {
    double max_rel = 0.0;
    int64_t checked = 0;
    std::string worst;

    bool ok(double tol = 1e-6) const { return checked > 0 && max_rel < tol; }
};

// Central differences over every element of every trainable parameter.
// A comparison passes on |a-f| <= atol (finite-difference noise floor) or
// relative error below the caller's tolerance.
inline FdReport fd_check(const Graph& g, ParamStore& store, const FeedMap& feed, int loss_node,
                         double eps = 1e-5, double atol = 1e-9) {
    ForwardOptions opts;
    auto res = forward(g, store, feed, opts);
    GradMap grads = backward(g, store, res.tape, loss_node);

    FdReport rep;
    for (size_t pi = 0; pi < store.params.size(); ++pi) {
        if (!store.params[pi].trainable) continue;
        Tensor& value = store.params[pi].value;
        const Tensor* analytic = nullptr;
        auto it = grads.find(static_cast<int>(pi));
        if (it != grads.end()) analytic = &it->second;

        for (int64_t e = 0; e < value.size(); ++e) {
            double saved = value[e];
            value[e] = saved + eps;
            double lp = eval_scalar(g, store, feed, loss_node);
            value[e] = saved - eps;
            double lm = eval_scalar(g, store, feed, loss_node);
            value[e] = saved;

            double fd = (lp - lm) / (2.0 * eps);
            double an = analytic ? (*analytic)[e] : 0.0;
            double diff = std::abs(an - fd);
            double rel = diff <= atol ? 0.0 : diff / std::max(std::abs(an), std::abs(fd));
            ++rep.checked;
            if (rel > rep.max_rel) {
                rep.max_rel = rel;
                rep.worst = store.params[pi].name + "[" + std::to_string(e) +
                            "] analytic=" + std::to_string(an) + " fd=" + std::to_string(fd);
            }
        }
    }
    return rep;
}

// Brute-force dependency walk: a node must keep its input-gradient
// dependencies iff a trainable parameter is attached to some strict
// ancestor; it must keep its weight-gradient dependencies iff its own
// parameters are trainable. Implemented as literal ancestor reachability,
// independent of analyze_retention's single pass.
struct WalkDecision {
    bool weight_grad = false;
    bool input_grad = false;
};

inline std::vector<WalkDecision> retention_walk(const Graph& g, const ParamStore& store) {
    int n = g.size();
    // ancestors[k] = set of nodes with a forward path into k (excluding k)
    std::vector<std::vector<char>> ancestors(static_cast<size_t>(n),
                                             std::vector<char>(static_cast<size_t>(n), 0));
    for (int k = 0; k < n; ++k) {
        for (int j : g.node(k).inputs) {
            ancestors[static_cast<size_t>(k)][static_cast<size_t>(j)] = 1;
            for (int a = 0; a < n; ++a)
                if (ancestors[static_cast<size_t>(j)][static_cast<size_t>(a)])
                    ancestors[static_cast<size_t>(k)][static_cast<size_t>(a)] = 1;
        }
    }
    auto holds_trainable = [&](int k) {
        const OpNode& node = g.node(k);
        for (int idx : {node.weight, node.bias, node.param})
            if (idx >= 0 && store.params[static_cast<size_t>(idx)].trainable) return true;
        return false;
    };
    std::vector<WalkDecision> out(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        out[static_cast<size_t>(k)].weight_grad =
            holds_trainable(k) && g.node(k).weight >= 0;
        bool up = false;
        for (int a = 0; a < n; ++a)
            if (ancestors[static_cast<size_t>(k)][static_cast<size_t>(a)] && holds_trainable(a))
                up = true;
        out[static_cast<size_t>(k)].input_grad = up;
    }
    return out;
}

}  // namespace focta::testing
