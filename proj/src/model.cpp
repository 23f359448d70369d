#include "focta/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace focta {

using nlohmann::json;

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
    for (LayerKind k : {LayerKind::conv2d, LayerKind::batchnorm, LayerKind::dense, LayerKind::relu,
                        LayerKind::maxpool, LayerKind::flatten})
        if (s == layer_kind_name(k)) return k;
    throw config_error("unknown layer kind '" + s + "'");
}

ModelSplit Model::split() const {
    ModelSplit s;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
        if (layers[static_cast<size_t>(i)].is_classifier ||
            layers[static_cast<size_t>(i)].kind == LayerKind::flatten)
            s.h_s.push_back(i);
        else
            s.g_s.push_back(i);
        if (layers[static_cast<size_t>(i)].layer_id > 0) ++s.parameterized_count;
    }
    return s;
}

int Model::parameterized_count() const {
    int n = 0;
    for (const auto& l : layers)
        if (l.layer_id > 0) ++n;
    return n;
}

std::vector<int> Model::representation_layer_ids() const {
    std::vector<int> out;
    for (const auto& l : layers)
        if (l.is_representation) out.push_back(l.layer_id);
    return out;
}

std::vector<int> Model::bn_layer_ids() const {
    std::vector<int> out;
    for (const auto& l : layers)
        if (l.kind == LayerKind::batchnorm) out.push_back(l.layer_id);
    return out;
}

std::vector<int> Model::classifier_layer_ids() const {
    std::vector<int> out;
    for (const auto& l : layers)
        if (l.is_classifier) out.push_back(l.layer_id);
    return out;
}

const LayerDescriptor& Model::layer_by_id(int layer_id) const {
    for (const auto& l : layers)
        if (l.layer_id == layer_id) return l;
    throw config_error("unknown layer id " + std::to_string(layer_id));
}

int64_t Model::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : store.params) n += p.value.size();
    return n;
}

void Model::set_all_frozen() {
    for (auto& p : store.params) p.trainable = false;
}

void Model::set_trainable_layers(const std::vector<int>& layer_ids) {
    set_all_frozen();
    for (int id : layer_ids) {
        const LayerDescriptor& l = layer_by_id(id);
        for (int pi : l.param_ids) store.params[static_cast<size_t>(pi)].trainable = true;
    }
}

Model build_reference_cnn(const ModelConfig& config, uint64_t seed) {
    if (config.input_h <= 0 || config.input_w <= 0 || config.input_c <= 0)
        throw config_error("model input dimensions must be positive");
    if (config.num_classes < 2) throw config_error("model needs at least 2 classes");
    if (config.conv_widths.empty()) throw config_error("model needs at least one conv block");
    if (config.stem_kernel < 1 || config.stem_kernel % 2 == 0)
        throw config_error("stem kernel must be odd");
    int h = config.input_h, w = config.input_w;
    for (size_t i = 0; i < config.conv_widths.size(); ++i) {
        if (config.conv_widths[i] <= 0) throw config_error("conv widths must be positive");
        if (h % 2 != 0 || w % 2 != 0)
            throw config_error("input size does not survive the pooling stack");
        h /= 2;
        w /= 2;
    }

    Model m;
    m.config = config;
    m.init_seed = seed;
    Rng rng(derive_seed(seed, 0xC0DE));

    auto he_tensor = [&](Shape shape, int fan_in) {
        Tensor t(std::move(shape));
        double stddev = std::sqrt(2.0 / fan_in);
        for (auto& v : t.data) v = rng.normal(0.0, stddev);
        return t;
    };

    int layer_id = 0;
    int cin = config.input_c;
    h = config.input_h;
    w = config.input_w;
    for (size_t b = 0; b < config.conv_widths.size(); ++b) {
        int cout = config.conv_widths[b];
        std::string blk = "block" + std::to_string(b + 1);

        int k = b == 0 ? config.stem_kernel : 3;
        LayerDescriptor conv;
        conv.layer_id = ++layer_id;
        conv.kind = LayerKind::conv2d;
        conv.name = blk + ".conv";
        conv.is_representation = true;
        conv.param_ids.push_back(m.store.add_param(conv.name + ".w",
                                                   he_tensor({k, k, cin, cout}, k * k * cin),
                                                   ParamRole::weight, conv.layer_id));
        conv.param_ids.push_back(
            m.store.add_param(conv.name + ".b", Tensor({cout}), ParamRole::bias, conv.layer_id));
        m.layers.push_back(conv);

        LayerDescriptor bn;
        bn.layer_id = ++layer_id;
        bn.kind = LayerKind::batchnorm;
        bn.name = blk + ".bn";
        Tensor gamma({cout});
        for (auto& v : gamma.data) v = 1.0;
        bn.param_ids.push_back(
            m.store.add_param(bn.name + ".gamma", gamma, ParamRole::bn_gamma, bn.layer_id));
        bn.param_ids.push_back(
            m.store.add_param(bn.name + ".beta", Tensor({cout}), ParamRole::bn_beta, bn.layer_id));
        bn.bn_state = m.store.add_bn_state(cout, config.bn_momentum, config.bn_epsilon);
        m.layers.push_back(bn);

        LayerDescriptor relu;
        relu.kind = LayerKind::relu;
        relu.name = blk + ".relu";
        m.layers.push_back(relu);

        LayerDescriptor pool;
        pool.kind = LayerKind::maxpool;
        pool.name = blk + ".pool";
        m.layers.push_back(pool);

        cin = cout;
        h /= 2;
        w /= 2;
    }

    LayerDescriptor flat;
    flat.kind = LayerKind::flatten;
    flat.name = "head.flatten";
    m.layers.push_back(flat);

    int features = h * w * cin;
    LayerDescriptor dense;
    dense.layer_id = ++layer_id;
    dense.kind = LayerKind::dense;
    dense.name = "head.dense";
    dense.is_classifier = true;
    dense.param_ids.push_back(m.store.add_param(
        dense.name + ".w", he_tensor({features, config.num_classes}, features), ParamRole::weight,
        dense.layer_id));
    dense.param_ids.push_back(m.store.add_param(dense.name + ".b", Tensor({config.num_classes}),
                                                ParamRole::bias, dense.layer_id));
    m.layers.push_back(dense);

    m.set_all_frozen();
    return m;
}

Model snapshot_frozen_reference(const Model& model) {
    Model frozen = model;
    frozen.set_all_frozen();
    return frozen;
}

ModelGraph build_model_graph(const Model& model, int batch, BnMode bn_mode) {
    if (batch < 1) throw graph_error("batch dimension must be >= 1");
    ModelGraph mg;
    mg.input_node = mg.graph.add_input_image(
        {batch, model.config.input_h, model.config.input_w, model.config.input_c}, "images");
    int cur = mg.input_node;
    for (const auto& l : model.layers) {
        if (l.layer_id > 0) mg.layer_input_node[l.layer_id] = cur;
        switch (l.kind) {
            case LayerKind::conv2d:
                cur = mg.graph.add_conv2d(model.store, cur, l.param_ids[0], l.param_ids[1],
                                          l.layer_id, l.name);
                break;
            case LayerKind::batchnorm:
                cur = mg.graph.add_batchnorm(model.store, cur, l.param_ids[0], l.param_ids[1],
                                             l.bn_state, l.layer_id, bn_mode, l.name);
                break;
            case LayerKind::dense:
                cur = mg.graph.add_dense(model.store, cur, l.param_ids[0], l.param_ids[1],
                                         l.layer_id, l.name);
                break;
            case LayerKind::relu:
                cur = mg.graph.add_relu(cur, l.name);
                break;
            case LayerKind::maxpool:
                cur = mg.graph.add_maxpool2(cur, l.name);
                break;
            case LayerKind::flatten:
                cur = mg.graph.add_flatten(cur, l.name);
                break;
        }
        if (l.layer_id > 0) mg.layer_output_node[l.layer_id] = cur;
    }
    mg.logits_node = cur;
    return mg;
}

Tensor eval_logits(Model& model, const Tensor& images, BnMode bn_mode) {
    if (images.shape.size() != 4) throw graph_error("eval expects a batched NHWC tensor");
    ModelGraph mg = build_model_graph(model, images.shape[0], bn_mode);
    FeedMap feed;
    feed.floats.emplace(mg.input_node, images);
    auto res = forward(mg.graph, model.store, feed);
    return res.output;
}

std::vector<int> predict_classes(const Tensor& logits) {
    int batch = logits.shape[0], classes = logits.shape[1];
    std::vector<int> out(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (logits.data[static_cast<size_t>(b) * classes + c] >
                logits.data[static_cast<size_t>(b) * classes + best])
                best = c;
        out[static_cast<size_t>(b)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

const char* role_name(ParamRole r) {
    switch (r) {
        case ParamRole::weight: return "weight";
        case ParamRole::bias: return "bias";
        case ParamRole::bn_gamma: return "bn_gamma";
        case ParamRole::bn_beta: return "bn_beta";
    }
    return "?";
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& extra) {
    json j;
    j["format"] = "focta-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = {{"input_h", model.config.input_h},
                   {"input_w", model.config.input_w},
                   {"input_c", model.config.input_c},
                   {"conv_widths", model.config.conv_widths},
                   {"stem_kernel", model.config.stem_kernel},
                   {"num_classes", model.config.num_classes},
                   {"bn_momentum", model.config.bn_momentum},
                   {"bn_epsilon", model.config.bn_epsilon}};
    j["init_seed"] = model.init_seed;
    j["width"] = model.store.width == ElemWidth::f32 ? "f32" : "f64";
    json params = json::array();
    for (const auto& p : model.store.params) {
        params.push_back({{"name", p.name},
                          {"role", role_name(p.role)},
                          {"layer_id", p.layer_id},
                          {"shape", p.value.shape},
                          {"data", p.value.data}});
    }
    j["params"] = std::move(params);
    json bn = json::array();
    for (const auto& s : model.store.bn) {
        bn.push_back({{"running_mean", s.running_mean},
                      {"running_var", s.running_var},
                      {"momentum", s.momentum},
                      {"epsilon", s.epsilon}});
    }
    j["bn"] = std::move(bn);
    json meta = json::object();
    for (const auto& [k, v] : extra) meta[k] = v;
    j["meta"] = std::move(meta);

    std::ofstream out(path);
    if (!out) throw config_error("cannot write checkpoint file " + path);
    out << j.dump(1) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read checkpoint file " + path);
    json j = json::parse(in, nullptr, /*allow_exceptions=*/true);
    if (j.value("format", "") != "focta-checkpoint")
        throw config_error(path + " is not a checkpoint file");
    if (j.value("version", -1) != kCheckpointVersion)
        throw config_error("unsupported checkpoint version in " + path);

    ModelConfig cfg;
    const json& c = j.at("config");
    cfg.input_h = c.at("input_h").get<int>();
    cfg.input_w = c.at("input_w").get<int>();
    cfg.input_c = c.at("input_c").get<int>();
    cfg.conv_widths = c.at("conv_widths").get<std::vector<int>>();
    cfg.stem_kernel = c.value("stem_kernel", 3);
    cfg.num_classes = c.at("num_classes").get<int>();
    cfg.bn_momentum = c.at("bn_momentum").get<double>();
    cfg.bn_epsilon = c.at("bn_epsilon").get<double>();

    LoadedCheckpoint out{build_reference_cnn(cfg, j.at("init_seed").get<uint64_t>()), {}};
    out.model.store.width =
        j.value("width", "f64") == std::string("f32") ? ElemWidth::f32 : ElemWidth::f64;

    const json& params = j.at("params");
    if (params.size() != out.model.store.params.size())
        throw config_error("checkpoint parameter count does not match architecture");
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = out.model.store.params[i];
        if (params[i].at("name").get<std::string>() != p.name)
            throw config_error("checkpoint parameter order mismatch at " + p.name);
        auto shape = params[i].at("shape").get<Shape>();
        if (shape != p.value.shape) throw config_error("checkpoint shape mismatch at " + p.name);
        p.value.data = params[i].at("data").get<std::vector<double>>();
        if (static_cast<int64_t>(p.value.data.size()) != shape_numel(shape))
            throw config_error("checkpoint data size mismatch at " + p.name);
    }
    const json& bn = j.at("bn");
    if (bn.size() != out.model.store.bn.size())
        throw config_error("checkpoint BN state count mismatch");
    for (size_t i = 0; i < bn.size(); ++i) {
        BnState& s = out.model.store.bn[i];
        s.running_mean = bn[i].at("running_mean").get<std::vector<double>>();
        s.running_var = bn[i].at("running_var").get<std::vector<double>>();
        s.momentum = bn[i].at("momentum").get<double>();
        s.epsilon = bn[i].at("epsilon").get<double>();
    }
    for (auto it = j.at("meta").begin(); it != j.at("meta").end(); ++it)
        out.meta[it.key()] = it.value().get<std::string>();
    return out;
}

}  // namespace focta
