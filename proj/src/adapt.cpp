#include "focta/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "focta/optim.hpp"

namespace focta {

using nlohmann::json;

double entropy(const std::vector<double>& probabilities) {
    double sum = 0.0;
    for (double p : probabilities) {
        if (p < 0.0) throw numeric_error("entropy: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw numeric_error("entropy: probabilities sum to " + std::to_string(sum));
    double h = 0.0;
    for (double p : probabilities)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

const char* strategy_name(StrategyMode m) {
    switch (m) {
        case StrategyMode::source: return "source";
        case StrategyMode::focta: return "focta";
        case StrategyMode::tent_all_bn: return "tent-all-bn";
        case StrategyMode::full_finetune: return "full-finetune";
        case StrategyMode::random_k: return "random-k";
    }
    return "?";
}

StrategyMode strategy_from_name(const std::string& s) {
    for (StrategyMode m : {StrategyMode::source, StrategyMode::focta, StrategyMode::tent_all_bn,
                           StrategyMode::full_finetune, StrategyMode::random_k})
        if (s == strategy_name(m)) return m;
    throw config_error("unknown strategy '" + s + "'");
}

std::vector<int> resolve_trainable_layers(const Model& model, StrategyMode mode,
                                          const AdaptationPlan& plan, uint64_t seed) {
    switch (mode) {
        case StrategyMode::source:
            return {};
        case StrategyMode::focta:
            if (plan.selected_layer_ids.empty())
                throw config_error("focta mode needs a non-empty plan");
            return plan.selected_layer_ids;
        case StrategyMode::tent_all_bn:
            return model.bn_layer_ids();
        case StrategyMode::full_finetune: {
            std::vector<int> all;
            for (const auto& l : model.layers)
                if (l.layer_id > 0) all.push_back(l.layer_id);
            return all;
        }
        case StrategyMode::random_k: {
            // control: same K as the plan, layers drawn uniformly per seed
            std::vector<int> reps = model.representation_layer_ids();
            size_t k = std::max<size_t>(1, plan.selected_layer_ids.size());
            if (k > reps.size()) throw config_error("random-k draws more layers than exist");
            Rng rng(derive_seed(seed, 0x7a2d));
            for (size_t i = reps.size(); i > 1; --i)
                std::swap(reps[i - 1],
                          reps[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
            reps.resize(k);
            std::sort(reps.begin(), reps.end());
            return reps;
        }
    }
    return {};
}

namespace {

struct LossTopology {
    bool entropy_term = false;
    bool filtered = false;
    bool reg_term = false;
    BnMode bn_mode = BnMode::use_running_stats;
};

LossTopology loss_topology(const AdaptParams& params) {
    LossTopology t;
    switch (params.mode) {
        case StrategyMode::source:
            t.bn_mode = BnMode::use_running_stats;
            break;
        case StrategyMode::focta:
        case StrategyMode::random_k:
            t.entropy_term = true;
            t.filtered = true;
            t.reg_term = params.plan.lambda > 0.0;
            t.bn_mode = params.plan.bn_mode;  // running stats by default
            break;
        case StrategyMode::tent_all_bn:
            t.entropy_term = true;
            t.filtered = params.tent_filtered;  // plain entropy by default
            t.reg_term = false;
            t.bn_mode = BnMode::use_batch_stats;
            break;
        case StrategyMode::full_finetune:
            t.entropy_term = true;
            t.filtered = true;
            t.reg_term = false;
            t.bn_mode = BnMode::use_batch_stats;
            break;
    }
    return t;
}

// Per-batch-size adaptation graph: model chain + loss head, with constant
// inputs for the frozen reference features.
struct AdaptGraph {
    ModelGraph mg;
    int l_ent_node = -1;
    int l_reg_node = -1;
    int l_total_node = -1;
    std::vector<int> reg_targets;      // live nodes the L1 terms read
    std::vector<int> ref_input_nodes;  // matching constant inputs
    std::vector<int> keep;
};

AdaptGraph build_adapt_graph(const Model& model, const AdaptParams& params,
                             const LossTopology& topo, const std::vector<int>& reg_layer_ids,
                             int batch) {
    AdaptGraph ag;
    ag.mg = build_model_graph(model, batch, topo.bn_mode);
    Graph& g = ag.mg.graph;
    if (!topo.entropy_term) {
        ag.keep = {ag.mg.logits_node};
        return ag;
    }
    ag.l_ent_node = g.add_entropy_loss(ag.mg.logits_node, params.plan.h0, topo.filtered, "l_ent");
    if (topo.reg_term) {
        std::vector<int> terms;
        if (params.reg_on_logits) {
            int ref = g.add_input_const(g.node(ag.mg.logits_node).out_shape, "ref.logits");
            ag.reg_targets.push_back(ag.mg.logits_node);
            ag.ref_input_nodes.push_back(ref);
            terms.push_back(g.add_l1_diff(ag.mg.logits_node, ref, "l1.logits"));
        } else {
            for (int layer_id : reg_layer_ids) {
                int live = ag.mg.layer_output_node.at(layer_id);
                int ref = g.add_input_const(g.node(live).out_shape,
                                            "ref.L" + std::to_string(layer_id));
                ag.reg_targets.push_back(live);
                ag.ref_input_nodes.push_back(ref);
                terms.push_back(g.add_l1_diff(live, ref, "l1.L" + std::to_string(layer_id)));
            }
        }
        ag.l_reg_node = g.add_add_n(terms, "l_reg");
        ag.l_total_node = g.add_axpy(ag.l_ent_node, ag.l_reg_node, params.plan.lambda, "l_total");
        ag.keep = {ag.mg.logits_node, ag.l_ent_node, ag.l_reg_node, ag.l_total_node};
    } else {
        ag.l_total_node = ag.l_ent_node;
        ag.keep = {ag.mg.logits_node, ag.l_ent_node, ag.l_total_node};
    }
    return ag;
}

// frozen-reference evaluation graph retaining the regularizer tap values
struct RefGraph {
    ModelGraph mg;
    std::vector<int> taps;  // node ids aligned with reg_layer_ids
};

RefGraph build_ref_graph(const Model& frozen, const std::vector<int>& reg_layer_ids,
                         bool logits_target, int batch) {
    RefGraph rg;
    rg.mg = build_model_graph(frozen, batch, BnMode::use_running_stats);
    if (logits_target)
        rg.taps = {rg.mg.logits_node};
    else
        for (int layer_id : reg_layer_ids) rg.taps.push_back(rg.mg.layer_output_node.at(layer_id));
    return rg;
}

}  // namespace

AdaptOutcome adapt_stream(Model& model, const DomainStream& stream, const AdaptParams& params,
                          uint64_t seed) {
    if (stream.segments.empty()) throw config_error("adaptation stream has no segments");
    if (params.plan.batch < 1) throw config_error("adaptation batch must be >= 1");
    const LossTopology topo = loss_topology(params);

    std::vector<int> trainable = resolve_trainable_layers(model, params.mode, params.plan, seed);
    model.set_trainable_layers(trainable);
    // classifier stays frozen everywhere except the full-finetune baseline
    if (params.mode != StrategyMode::full_finetune)
        for (int id : model.classifier_layer_ids())
            for (int pi : model.layer_by_id(id).param_ids)
                model.store.params[static_cast<size_t>(pi)].trainable = false;

    std::vector<int> reg_layers = trainable;
    if (params.mode == StrategyMode::focta || params.mode == StrategyMode::random_k) {
        // regularize exactly the selected representation layers
        reg_layers = trainable;
    }

    Model frozen = snapshot_frozen_reference(model);
    Adam adam({params.effective_lr(), 0.9, 0.999, 1e-8});

    AdaptOutcome out;
    out.trainable_layer_ids = trainable;
    out.memory = predict_cost(model, trainable, params.plan.batch);

    std::map<int, AdaptGraph> graphs;
    std::map<int, RefGraph> ref_graphs;
    bool measured = false;

    int num_classes = model.config.num_classes;
    int step = 0;
    for (size_t seg = 0; seg < stream.segments.size(); ++seg) {
        Dataset data = realize_segment(stream, num_classes, static_cast<int>(seg),
                                       model.config.input_h, model.config.input_w);
        if (params.label_shuffle_seed != 0) {
            Rng rng(derive_seed(params.label_shuffle_seed, seg));
            for (size_t i = data.labels.size(); i > 1; --i)
                std::swap(data.labels[i - 1],
                          data.labels[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        }
        const StreamSegment& spec = stream.segments[seg];
        int wrong = 0;
        int seen = 0;

        for (size_t first = 0; first < data.size();
             first += static_cast<size_t>(params.plan.batch)) {
            size_t count =
                std::min<size_t>(static_cast<size_t>(params.plan.batch), data.size() - first);
            int b = static_cast<int>(count);

            auto git = graphs.find(b);
            if (git == graphs.end())
                git = graphs.emplace(b, build_adapt_graph(model, params, topo, reg_layers, b))
                          .first;
            AdaptGraph& ag = git->second;

            FeedMap feed;
            feed.floats.emplace(ag.mg.input_node, data.batch(first, count));

            if (topo.entropy_term && topo.reg_term) {
                auto rit = ref_graphs.find(b);
                if (rit == ref_graphs.end())
                    rit = ref_graphs
                              .emplace(b, build_ref_graph(frozen, reg_layers,
                                                          params.reg_on_logits, b))
                              .first;
                RefGraph& rg = rit->second;
                FeedMap ref_feed;
                ref_feed.floats.emplace(rg.mg.input_node, data.batch(first, count));
                ForwardOptions ref_opts;
                ref_opts.keep_values = rg.taps;
                auto ref_res = forward(rg.mg.graph, frozen.store, ref_feed, ref_opts);
                for (size_t t = 0; t < rg.taps.size(); ++t)
                    feed.floats.emplace(ag.ref_input_nodes[t], ref_res.kept.at(rg.taps[t]));
            }

            ForwardOptions opts;
            opts.check_finite = params.check_finite;
            opts.keep_values = ag.keep;
            auto fr = forward(ag.mg.graph, model.store, feed, opts);

            // prediction is recorded before the model learns from the batch
            const Tensor& logits = fr.kept.at(ag.mg.logits_node);
            std::vector<int> pred = predict_classes(logits);
            int batch_wrong = 0;
            for (size_t i = 0; i < count; ++i)
                if (pred[i] != data.labels[first + i]) ++batch_wrong;
            wrong += batch_wrong;
            seen += b;

            // entropy-gate survivors, from the logits (log column)
            int kept_count = 0;
            {
                std::vector<double> p(static_cast<size_t>(num_classes));
                for (int i = 0; i < b; ++i) {
                    double mx = -1e300;
                    for (int c = 0; c < num_classes; ++c)
                        mx = std::max(mx, logits.data[static_cast<size_t>(i) * num_classes + c]);
                    double z = 0.0;
                    for (int c = 0; c < num_classes; ++c) {
                        p[static_cast<size_t>(c)] =
                            std::exp(logits.data[static_cast<size_t>(i) * num_classes + c] - mx);
                        z += p[static_cast<size_t>(c)];
                    }
                    double h = 0.0;
                    for (int c = 0; c < num_classes; ++c) {
                        double q = p[static_cast<size_t>(c)] / z;
                        if (q > 0.0) h -= q * std::log(q);
                    }
                    if (!topo.filtered || h < params.plan.h0) ++kept_count;
                }
            }

            RunLogRow row;
            row.step = step;
            row.domain = corruption_name(spec.kind);
            row.severity = spec.severity;
            row.batch_error = static_cast<double>(batch_wrong) / b;
            row.kept_fraction = static_cast<double>(kept_count) / b;

            if (topo.entropy_term) {
                row.l_ent = fr.kept.at(ag.l_ent_node).data[0];
                row.l_reg = ag.l_reg_node >= 0 ? fr.kept.at(ag.l_reg_node).data[0] : 0.0;
                row.l_total = fr.kept.at(ag.l_total_node).data[0];
                if (!std::isfinite(row.l_total))
                    throw numeric_error("adaptation loss went non-finite at step " +
                                        std::to_string(step) + " in domain " + row.domain +
                                        " (l_ent=" + std::to_string(row.l_ent) +
                                        ", l_reg=" + std::to_string(row.l_reg) + ")");
                // the gate kept nothing: no update this step
                bool skip = topo.filtered && kept_count == 0;
                if (!skip && !trainable.empty()) {
                    auto grads = backward(ag.mg.graph, model.store, fr.tape, ag.l_total_node);
                    adam.step(model.store, grads);
                }
            }
            if (!measured) {
                measure_cost(out.memory, fr.tape);
                measured = true;
            }
            out.log.push_back(std::move(row));
            ++step;
        }

        DomainResult dr;
        dr.domain = corruption_name(spec.kind);
        dr.severity = spec.severity;
        dr.samples = seen;
        dr.error_pct = 100.0 * wrong / std::max(1, seen);
        out.per_domain.push_back(dr);
    }

    double total = 0.0;
    for (const auto& d : out.per_domain) total += d.error_pct;
    out.average_error_pct = total / static_cast<double>(out.per_domain.size());
    out.steps = step;
    return out;
}

json AdaptOutcome::summary_json() const {
    json domains = json::array();
    for (const auto& d : per_domain)
        domains.push_back({{"domain", d.domain},
                           {"severity", d.severity},
                           {"error_pct", d.error_pct},
                           {"samples", d.samples}});
    return json{{"per_domain", std::move(domains)},
                {"average_error_pct", average_error_pct},
                {"steps", steps},
                {"trainable_layer_ids", trainable_layer_ids},
                {"memory", memory.to_json()}};
}

std::string AdaptOutcome::log_csv() const {
    std::ostringstream out;
    out << "step,domain,severity,batch-error,kept-fraction,L_ent,L_reg,L_total\n";
    char buf[128];
    for (const auto& r : log) {
        out << r.step << "," << r.domain << "," << r.severity << ",";
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.17g,%.17g,%.17g", r.batch_error,
                      r.kept_fraction, r.l_ent, r.l_reg, r.l_total);
        out << buf << "\n";
    }
    return out.str();
}

}  // namespace focta
