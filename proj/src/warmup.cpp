#include "focta/warmup.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "focta/optim.hpp"

namespace focta {

using nlohmann::json;

const char* importance_metric_name(ImportanceMetric m) {
    switch (m) {
        case ImportanceMetric::grad_norm: return "grad-norm";
        case ImportanceMetric::l1_norm: return "l1-norm";
        case ImportanceMetric::weight_norm: return "weight-norm";
    }
    return "?";
}

ImportanceMetric importance_metric_from_name(const std::string& s) {
    for (ImportanceMetric m :
         {ImportanceMetric::grad_norm, ImportanceMetric::l1_norm, ImportanceMetric::weight_norm})
        if (s == importance_metric_name(m)) return m;
    throw config_error("unknown importance metric '" + s + "'");
}

std::vector<double> ImportanceVector::normalized(ScoreNormalization norm) const {
    std::vector<double> out = scores;
    if (norm == ScoreNormalization::raw) return out;
    // grad-norm scores are already on a log scale; the weight statistics
    // get log-transformed first
    if (metric != ImportanceMetric::grad_norm)
        for (auto& v : out) v = v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
    if (norm == ScoreNormalization::max_shifted_log) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : out) mx = std::max(mx, v);
        if (std::isfinite(mx))
            for (auto& v : out) v -= mx;
    }
    return out;
}

namespace {

json score_to_json(double v) {
    if (std::isinf(v) && v < 0) return nullptr;  // -inf sentinel
    return v;
}

double score_from_json(const json& j) {
    if (j.is_null()) return -std::numeric_limits<double>::infinity();
    return j.get<double>();
}

}  // namespace

json ImportanceVector::to_json() const {
    json scores_j = json::array();
    for (double v : scores) scores_j.push_back(score_to_json(v));
    return json{{"layer_ids", layer_ids},
                {"scores", std::move(scores_j)},
                {"metric", importance_metric_name(metric)},
                {"batches_seen", batches_seen}};
}

ImportanceVector ImportanceVector::from_json(const json& j) {
    ImportanceVector v;
    v.layer_ids = j.at("layer_ids").get<std::vector<int>>();
    for (const auto& s : j.at("scores")) v.scores.push_back(score_from_json(s));
    v.metric = importance_metric_from_name(j.at("metric").get<std::string>());
    v.batches_seen = j.at("batches_seen").get<int>();
    if (v.layer_ids.size() != v.scores.size())
        throw config_error("importance vector arrays disagree in length");
    return v;
}

json AdaptationPlan::to_json() const {
    return json{{"selected_layer_ids", selected_layer_ids},
                {"alpha", alpha},
                {"lambda", lambda},
                {"h0", h0},
                {"h0_factor", h0_factor},
                {"batch", batch},
                {"lr", lr},
                {"bn_mode", bn_mode == BnMode::use_batch_stats ? "batch-stats" : "running-stats"},
                {"metric", importance_metric_name(metric)}};
}

AdaptationPlan AdaptationPlan::from_json(const json& j) {
    AdaptationPlan p;
    p.selected_layer_ids = j.at("selected_layer_ids").get<std::vector<int>>();
    p.alpha = j.at("alpha").get<double>();
    p.lambda = j.at("lambda").get<double>();
    p.h0 = j.at("h0").get<double>();
    p.h0_factor = j.at("h0_factor").get<double>();
    p.batch = j.at("batch").get<int>();
    p.lr = j.at("lr").get<double>();
    std::string mode = j.at("bn_mode").get<std::string>();
    if (mode == "batch-stats")
        p.bn_mode = BnMode::use_batch_stats;
    else if (mode == "running-stats")
        p.bn_mode = BnMode::use_running_stats;
    else
        throw config_error("unknown bn_mode '" + mode + "'");
    p.metric = importance_metric_from_name(j.at("metric").get<std::string>());
    return p;
}

// ---------------------------------------------------------------------------

namespace {

struct WarmupGraph {
    ModelGraph mg;
    int labels_node = -1;
    int loss_node = -1;
};

WarmupGraph build_warmup_graph(const Model& model, int batch) {
    WarmupGraph wg;
    wg.mg = build_model_graph(model, batch, BnMode::use_batch_stats);
    wg.labels_node = wg.mg.graph.add_input_labels(batch, "labels");
    wg.loss_node = wg.mg.graph.add_softmax_xent(wg.mg.logits_node, wg.labels_node, "xent");
    return wg;
}

double grad_norm(const GradMap& grads, const LayerDescriptor& layer, GradNormKind kind) {
    double acc = 0.0;
    for (int pi : layer.param_ids) {
        auto it = grads.find(pi);
        if (it == grads.end()) continue;
        for (double g : it->second.data)
            acc += kind == GradNormKind::l2 ? g * g : std::abs(g);
    }
    return kind == GradNormKind::l2 ? std::sqrt(acc) : acc;
}

}  // namespace

ImportanceVector warmup(Model& model, const Dataset& source, const WarmupParams& params,
                        uint64_t seed) {
    if (params.epochs < 1 || params.batch < 1) throw config_error("bad warm-up parameters");

    // restore point: warm-up is profiling-only unless keep_weights
    std::vector<Tensor> param_backup;
    for (const auto& p : model.store.params) param_backup.push_back(p.value);
    std::vector<BnState> bn_backup = model.store.bn;

    // classifier frozen for the whole phase, the rest of the net trains
    std::vector<int> gs_ids;
    for (const auto& l : model.layers)
        if (l.layer_id > 0 && !l.is_classifier) gs_ids.push_back(l.layer_id);
    model.set_trainable_layers(gs_ids);

    std::vector<int> rep_ids = model.representation_layer_ids();
    std::vector<double> norm_sum(rep_ids.size(), 0.0);
    int batches = 0;

    Adam adam({params.lr, 0.9, 0.999, 1e-8});
    std::map<int, WarmupGraph> graphs;
    Rng shuffle_rng(derive_seed(seed, 0x3a3a));
    std::vector<size_t> order(source.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    size_t per = static_cast<size_t>(source.height) * source.width * source.channels;
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        for (size_t first = 0; first + params.batch <= source.size();
             first += static_cast<size_t>(params.batch)) {
            size_t count = static_cast<size_t>(params.batch);
            auto it = graphs.find(static_cast<int>(count));
            if (it == graphs.end())
                it = graphs
                         .emplace(static_cast<int>(count),
                                  build_warmup_graph(model, static_cast<int>(count)))
                         .first;
            WarmupGraph& wg = it->second;

            Tensor images({static_cast<int>(count), source.height, source.width, source.channels});
            ByteTensor labels(Shape{static_cast<int>(count)});
            for (size_t i = 0; i < count; ++i) {
                size_t src = order[first + i];
                Tensor aug = augment(source.images[src], params.recipe,
                                     derive_seed(seed, 0xau + static_cast<uint64_t>(epoch) * 1000003u +
                                                           src));
                std::copy(aug.data.begin(), aug.data.end(),
                          images.data.begin() + static_cast<ptrdiff_t>(i * per));
                labels.data[i] = static_cast<uint8_t>(source.labels[src]);
            }

            FeedMap feed;
            feed.floats.emplace(wg.mg.input_node, std::move(images));
            feed.bytes.emplace(wg.labels_node, std::move(labels));
            ForwardOptions opts;
            opts.update_running_stats = true;
            auto fr = forward(wg.mg.graph, model.store, feed, opts);
            auto grads = backward(wg.mg.graph, model.store, fr.tape, wg.loss_node);

            for (size_t r = 0; r < rep_ids.size(); ++r)
                norm_sum[r] += grad_norm(grads, model.layer_by_id(rep_ids[r]), params.norm_kind);
            ++batches;
            adam.step(model.store, grads);
        }
    }

    if (batches == 0)
        throw config_error("warm-up saw zero batches: dataset smaller than one batch");

    if (!params.keep_weights) {
        for (size_t i = 0; i < model.store.params.size(); ++i)
            model.store.params[i].value = param_backup[i];
        model.store.bn = bn_backup;
    }
    model.set_all_frozen();

    ImportanceVector iv;
    iv.layer_ids = rep_ids;
    iv.metric = ImportanceMetric::grad_norm;
    iv.batches_seen = batches;
    for (size_t r = 0; r < rep_ids.size(); ++r) {
        std::vector<double> as_mean{norm_sum[r] / batches};
        iv.scores.push_back(grad_norm_score(as_mean));
    }
    return iv;
}

double grad_norm_score(const std::vector<double>& per_batch_norms) {
    if (per_batch_norms.empty()) throw config_error("gradient-norm score over zero batches");
    double mean = 0.0;
    for (double n : per_batch_norms) mean += n;
    mean /= static_cast<double>(per_batch_norms.size());
    return mean > 0.0 ? std::log(mean) : -std::numeric_limits<double>::infinity();
}

namespace {

ImportanceVector weight_statistic(const Model& model, ImportanceMetric metric) {
    ImportanceVector iv;
    iv.metric = metric;
    iv.batches_seen = 0;
    for (const auto& l : model.layers) {
        if (!l.is_representation) continue;
        const Tensor& w = model.store.params[static_cast<size_t>(l.param_ids[0])].value;
        double acc = 0.0;
        for (double v : w.data)
            acc += metric == ImportanceMetric::l1_norm ? std::abs(v) : v * v;
        iv.layer_ids.push_back(l.layer_id);
        iv.scores.push_back(metric == ImportanceMetric::l1_norm
                                ? acc / static_cast<double>(w.size())
                                : std::sqrt(acc));
    }
    return iv;
}

}  // namespace

ImportanceVector score_l1(const Model& model) {
    return weight_statistic(model, ImportanceMetric::l1_norm);
}

ImportanceVector score_weight_norm(const Model& model) {
    return weight_statistic(model, ImportanceMetric::weight_norm);
}

AdaptationPlan select_topk(const ImportanceVector& scores, double alpha) {
    if (!(alpha > 0.0) || alpha > 1.0) throw config_error("alpha must be in (0, 1]");
    if (scores.layer_ids.empty()) throw config_error("importance vector is empty");
    if (scores.metric == ImportanceMetric::grad_norm && scores.batches_seen < 1)
        throw config_error("importance scores read before any warm-up batch");

    int l_rep = static_cast<int>(scores.layer_ids.size());
    int m = std::max(1, static_cast<int>(std::ceil(alpha * l_rep)));

    std::vector<size_t> idx(scores.layer_ids.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (scores.scores[a] != scores.scores[b]) return scores.scores[a] > scores.scores[b];
        return scores.layer_ids[a] < scores.layer_ids[b];
    });

    AdaptationPlan plan;
    plan.alpha = alpha;
    plan.metric = scores.metric;
    for (int i = 0; i < m; ++i)
        plan.selected_layer_ids.push_back(scores.layer_ids[idx[static_cast<size_t>(i)]]);
    std::sort(plan.selected_layer_ids.begin(), plan.selected_layer_ids.end());
    return plan;
}

std::string importance_table(const ImportanceVector& scores) {
    std::vector<double> norm = scores.normalized(ScoreNormalization::max_shifted_log);
    std::vector<size_t> idx(norm.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (scores.scores[a] != scores.scores[b]) return scores.scores[a] > scores.scores[b];
        return scores.layer_ids[a] < scores.layer_ids[b];
    });
    std::ostringstream out;
    out << "layer importance (" << importance_metric_name(scores.metric)
        << ", log scale, max at 0)\n";
    out << "  rank  layer  score\n";
    for (size_t r = 0; r < idx.size(); ++r) {
        out << "  " << r + 1 << "     L" << scores.layer_ids[idx[r]] << "     ";
        if (std::isinf(norm[idx[r]]))
            out << "-inf (no gradient signal)";
        else {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%+.4f", norm[idx[r]]);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

void save_plan(const AdaptationPlan& plan, const ImportanceVector& scores,
               const std::string& path, const std::map<std::string, std::string>& extra) {
    json j;
    j["format"] = "focta-plan";
    j["version"] = 1;
    j["plan"] = plan.to_json();
    j["importance"] = scores.to_json();
    json meta = json::object();
    for (const auto& [k, v] : extra) meta[k] = v;
    j["meta"] = std::move(meta);
    std::ofstream out(path);
    if (!out) throw config_error("cannot write plan file " + path);
    out << j.dump(1) << "\n";
}

LoadedPlan load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read plan file " + path);
    json j = json::parse(in);
    if (j.value("format", "") != "focta-plan") throw config_error(path + " is not a plan file");
    LoadedPlan out;
    out.plan = AdaptationPlan::from_json(j.at("plan"));
    out.scores = ImportanceVector::from_json(j.at("importance"));
    for (auto it = j.at("meta").begin(); it != j.at("meta").end(); ++it)
        out.meta[it.key()] = it.value().get<std::string>();
    return out;
}

}  // namespace focta
