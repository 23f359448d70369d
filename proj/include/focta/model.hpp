#pragma once

#include <map>
#include <string>
#include <vector>

#include "focta/graph.hpp"

namespace focta {

enum class LayerKind { conv2d, batchnorm, dense, relu, maxpool, flatten };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

// Registry row. Parameterized layers carry layer_id 1..L in forward order;
// relu/pool/flatten rows carry -1. Exactly one of is_representation /
// is_classifier is set for conv/dense layers; BN layers set neither.
struct LayerDescriptor {
    int layer_id = -1;
    LayerKind kind;
    std::string name;
    std::vector<int> param_ids;
    int bn_state = -1;
    bool is_representation = false;
    bool is_classifier = false;
};

struct ModelConfig {
    int input_h = 16;
    int input_w = 16;
    int input_c = 1;
    std::vector<int> conv_widths = {96, 12, 48};
    int stem_kernel = 5;  // first conv; later convs are 3x3
    int num_classes = 3;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
};

// g_s / h_s decomposition as indices into Model::layers.
struct ModelSplit {
    std::vector<int> g_s;
    std::vector<int> h_s;
    int parameterized_count = 0;  // L
};

struct Model {
    ModelConfig config;
    uint64_t init_seed = 0;
    ParamStore store;
    std::vector<LayerDescriptor> layers;

    ModelSplit split() const;
    int parameterized_count() const;
    std::vector<int> representation_layer_ids() const;  // conv/dense inside g_s
    std::vector<int> bn_layer_ids() const;
    std::vector<int> classifier_layer_ids() const;
    const LayerDescriptor& layer_by_id(int layer_id) const;
    int64_t parameter_count() const;

    void set_all_frozen();
    // exactly one trainable partition: ids in the list become trainable
    void set_trainable_layers(const std::vector<int>& layer_ids);
};

// Small [conv-bn-relu-pool] x3 + dense classifier on grayscale inputs,
// He-initialized from the seed. Layer tags follow the g_s / h_s split with
// the final dense stack as classifier.
Model build_reference_cnn(const ModelConfig& config, uint64_t seed);

// Immutable deep copy with every parameter frozen; used as the reference
// for the drift regularizer and never updated.
Model snapshot_frozen_reference(const Model& model);

// Model graph assembly for one batch size. layer_output_node maps a
// parameterized layer id to the node producing that layer's output (the
// tap points for the drift regularizer).
struct ModelGraph {
    Graph graph;
    int input_node = -1;
    int logits_node = -1;
    std::map<int, int> layer_output_node;
    std::map<int, int> layer_input_node;
};

ModelGraph build_model_graph(const Model& model, int batch, BnMode bn_mode);

// Plain batched inference (running-stats BN, no tape retention beyond the
// trainable partition currently applied; callers wanting pure evaluation
// freeze the model first).
Tensor eval_logits(Model& model, const Tensor& images, BnMode bn_mode);
std::vector<int> predict_classes(const Tensor& logits);

// Checkpoint file: JSON-of-arrays, bit-exact round trip. `extra` lands in
// the top-level "meta" object (config hashes, accuracy, lineage).
void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& extra = {});
struct LoadedCheckpoint {
    Model model;
    std::map<std::string, std::string> meta;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace focta
