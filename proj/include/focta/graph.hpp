#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "focta/tensor.hpp"

namespace focta {

enum class ParamRole { weight, bias, bn_gamma, bn_beta };

// Trainable/frozen partition lives on the parameter itself: trainable
// parameters form the adaptable set, everything else stays frozen.
struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = false;
    int layer_id = -1;  // 1-based id of the owning parameterized layer
    ParamRole role = ParamRole::weight;
};

enum class BnMode { use_running_stats, use_batch_stats };

struct BnState {
    std::vector<double> running_mean;
    std::vector<double> running_var;  // biased (population) variance
    double momentum = 0.1;
    double epsilon = 1e-5;
};

// Parameters and BN statistics are resident model state: they are never
// counted as retained activations.
struct ParamStore {
    std::vector<Parameter> params;
    std::vector<BnState> bn;
    ElemWidth width = ElemWidth::f64;

    int add_param(std::string name, Tensor value, ParamRole role, int layer_id);
    int add_bn_state(int channels, double momentum, double epsilon);

    int64_t param_bytes() const;            // all parameters
    int64_t trainable_param_bytes() const;  // adaptable subset
};

enum class OpKind {
    input_image,   // external float input
    input_labels,  // external byte input (class ids), never differentiated
    input_const,   // external float input, never differentiated
    param_ref,     // output = a parameter's current value
    dense,
    conv2d,    // odd k, stride 1, pad (k-1)/2 (shape preserving), NHWC
    batchnorm,  // over the trailing channel dimension
    relu,
    maxpool2,  // 2x2, stride 2, NHWC
    flatten,
    sum_all,       // reduce to scalar
    softmax_xent,  // mean cross-entropy vs label input
    entropy_loss,  // mean Shannon entropy over samples kept by the H<H0 gate
    l1_diff,       // mean absolute difference vs a constant reference
    add_n,         // scalar sum
    axpy,          // scalar a + c*b
};

const char* op_kind_name(OpKind k);

struct OpNode {
    OpKind kind;
    std::vector<int> inputs;  // producing node ids
    Shape out_shape;
    std::string name;
    int layer_id = -1;

    // parameter slots (indices into ParamStore). dense/conv: weight+bias;
    // batchnorm: gamma in weight slot, beta in bias slot.
    int weight = -1;
    int bias = -1;

    int bn_state = -1;
    BnMode bn_mode = BnMode::use_batch_stats;

    int kernel = 3;  // conv2d: odd kernel edge

    int param = -1;  // param_ref

    double h0 = 0.0;       // entropy_loss threshold
    bool filtered = true;  // entropy_loss: apply the indicator gate
    double scale = 1.0;    // axpy: out = in0 + scale*in1
};

// Static feed-forward op sequence. Node ids are construction order, which
// is a topological order; node i's output tensor carries id i on the tape.
// In-place ops are not expressible: every node produces a fresh tensor.
class Graph {
public:
    std::vector<OpNode> nodes;

    int add_input_image(Shape shape, std::string name = "input");
    int add_input_labels(int batch, std::string name = "labels");
    int add_input_const(Shape shape, std::string name = "const");
    int add_param_ref(const ParamStore& store, int param, std::string name = "");
    int add_dense(const ParamStore& store, int input, int weight, int bias, int layer_id,
                  std::string name = "");
    int add_conv2d(const ParamStore& store, int input, int weight, int bias, int layer_id,
                   std::string name = "");
    int add_batchnorm(const ParamStore& store, int input, int gamma, int beta, int bn_state,
                      int layer_id, BnMode mode, std::string name = "");
    int add_relu(int input, std::string name = "");
    int add_maxpool2(int input, std::string name = "");
    int add_flatten(int input, std::string name = "");
    int add_sum_all(int input, std::string name = "");
    int add_softmax_xent(int logits, int labels, std::string name = "");
    int add_entropy_loss(int logits, double h0, bool filtered, std::string name = "");
    int add_l1_diff(int live, int reference, std::string name = "");
    int add_add_n(std::vector<int> inputs, std::string name = "");
    int add_axpy(int a, int b, double scale, std::string name = "");

    const OpNode& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
    int size() const { return static_cast<int>(nodes.size()); }

private:
    int push(OpNode n);
    void check_input(int id) const;
};

// Per-node retention decision under the current trainable partition.
//
// weight_grad: the node's own parameters are trainable, so the tensors its
//   weight-gradient rule needs must be kept.
// input_grad: some trainable parameter sits strictly upstream, so the
//   gradient has to flow through this node and its input-gradient
//   dependencies must be kept.
struct NodeRetention {
    bool weight_grad = false;
    bool input_grad = false;
    std::vector<std::string> saved;  // tags of tensors forward will retain
};

// Saved-for-backward tags per op kind (see docs/memory-model.md for the
// full table):
//   dense/conv2d    weight-grad: "input"
//   batchnorm       weight-grad: "xhat"; input-grad (batch stats): "xhat",
//                   "inv_std"; input-grad (running stats): nothing (running
//                   stats are resident model state)
//   relu            input-grad: "mask" (1 byte/elem)
//   maxpool2        input-grad: "argmax" (1 byte/elem)
//   softmax_xent    input-grad: "probs", "labels" (1 byte/elem)
//   entropy_loss    input-grad: "probs", "keep_mask" (1 byte/elem)
//   l1_diff         input-grad: "sign" (1 byte/elem)
// Everything else saves nothing.
std::vector<NodeRetention> analyze_retention(const Graph& g, const ParamStore& store);

struct SavedFloat {
    std::string tag;
    std::shared_ptr<const Tensor> t;
};
struct SavedBytes {
    std::string tag;
    std::shared_ptr<const ByteTensor> t;
};

struct TapeNode {
    OpKind kind;
    std::vector<int> inputs;
    int output = -1;
    int layer_id = -1;
    std::vector<SavedFloat> saved_f;
    std::vector<SavedBytes> saved_b;
    // Byte attribution: tensors required by a trainable layer's own weight
    // gradient count as weight-grad bytes (the m(a_l)*B term); every other
    // retained tensor counts as pass-through.
    int64_t weight_grad_bytes = 0;
    int64_t pass_through_bytes = 0;
};

struct Tape {
    std::vector<TapeNode> nodes;
    ElemWidth width = ElemWidth::f64;
    std::vector<Shape> shapes;  // out shape per node (backward needs them)

    int64_t total_retained_bytes() const;
    int64_t weight_grad_bytes() const;
    int64_t pass_through_bytes() const;

    Tensor* find_saved_f(int node, const std::string& tag);
    ByteTensor* find_saved_b(int node, const std::string& tag);
};

struct FeedMap {
    std::map<int, Tensor> floats;      // input_image / input_const nodes
    std::map<int, ByteTensor> bytes;   // input_labels nodes
};

struct ForwardOptions {
    bool update_running_stats = false;  // batchnorm side effect (training)
    bool retain_all = false;            // keep every save candidate (oracle mode)
    bool check_finite = false;          // raise numeric_error on NaN/Inf outputs
    std::vector<int> keep_values;       // node ids whose outputs the caller wants
};

struct ForwardResult {
    Tape tape;
    Tensor output;                 // last node's value
    std::map<int, Tensor> kept;    // values requested via keep_values
    int64_t peak_live_bytes = 0;   // high-water mark of live activations
};

// Runs the graph. Intermediates not in any saved-set are released at their
// last forward use; saved tensors move onto the tape.
ForwardResult forward(const Graph& g, ParamStore& store, const FeedMap& feed,
                      const ForwardOptions& opts = {});

// Gradients for exactly the trainable parameters, keyed by parameter index.
// Frozen parameters have no entry. Reads activations only from the tape's
// saved sets, never from forward temporaries.
using GradMap = std::map<int, Tensor>;

GradMap backward(const Graph& g, const ParamStore& store, const Tape& tape, int loss_node);

}  // namespace focta
