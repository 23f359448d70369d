#include "focta/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace focta {

namespace {

void check_param_shape(const ParamStore& store, int idx, const char* what) {
    if (idx < 0 || idx >= static_cast<int>(store.params.size()))
        throw graph_error(std::string("unknown parameter index for ") + what);
}

// Row-wise numerically stable softmax of logits (B x C).
Tensor softmax_rows(const Tensor& logits) {
    if (logits.shape.size() != 2) throw graph_error("softmax expects rank-2 logits");
    int batch = logits.shape[0], classes = logits.shape[1];
    Tensor probs(logits.shape);
    for (int b = 0; b < batch; ++b) {
        const double* row = logits.data.data() + static_cast<size_t>(b) * classes;
        double* out = probs.data.data() + static_cast<size_t>(b) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < classes; ++c) {
            out[c] = std::exp(row[c] - mx);
            z += out[c];
        }
        for (int c = 0; c < classes; ++c) out[c] /= z;
    }
    return probs;
}

double row_entropy(const double* p, int classes) {
    double h = 0.0;
    for (int c = 0; c < classes; ++c)
        if (p[c] > 0.0) h -= p[c] * std::log(p[c]);
    return h;
}

}  // namespace

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::input_image: return "input_image";
        case OpKind::input_labels: return "input_labels";
        case OpKind::input_const: return "input_const";
        case OpKind::param_ref: return "param_ref";
        case OpKind::dense: return "dense";
        case OpKind::conv2d: return "conv2d";
        case OpKind::batchnorm: return "batchnorm";
        case OpKind::relu: return "relu";
        case OpKind::maxpool2: return "maxpool2";
        case OpKind::flatten: return "flatten";
        case OpKind::sum_all: return "sum_all";
        case OpKind::softmax_xent: return "softmax_xent";
        case OpKind::entropy_loss: return "entropy_loss";
        case OpKind::l1_diff: return "l1_diff";
        case OpKind::add_n: return "add_n";
        case OpKind::axpy: return "axpy";
    }
    return "?";
}

int ParamStore::add_param(std::string name, Tensor value, ParamRole role, int layer_id) {
    Parameter p;
    p.name = std::move(name);
    p.value = std::move(value);
    p.role = role;
    p.layer_id = layer_id;
    params.push_back(std::move(p));
    return static_cast<int>(params.size()) - 1;
}

int ParamStore::add_bn_state(int channels, double momentum, double epsilon) {
    BnState s;
    s.running_mean.assign(static_cast<size_t>(channels), 0.0);
    s.running_var.assign(static_cast<size_t>(channels), 1.0);
    s.momentum = momentum;
    s.epsilon = epsilon;
    bn.push_back(std::move(s));
    return static_cast<int>(bn.size()) - 1;
}

int64_t ParamStore::param_bytes() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n * width_bytes(width);
}

int64_t ParamStore::trainable_param_bytes() const {
    int64_t n = 0;
    for (const auto& p : params)
        if (p.trainable) n += p.value.size();
    return n * width_bytes(width);
}

// ---------------------------------------------------------------------------
// Graph construction (static shape inference; violations throw graph_error)

int Graph::push(OpNode n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
}

void Graph::check_input(int id) const {
    if (id < 0 || id >= size()) throw graph_error("op input refers to unknown node");
}

int Graph::add_input_image(Shape shape, std::string name) {
    OpNode n;
    n.kind = OpKind::input_image;
    n.out_shape = std::move(shape);
    n.name = std::move(name);
    shape_numel(n.out_shape);
    return push(std::move(n));
}

int Graph::add_input_labels(int batch, std::string name) {
    OpNode n;
    n.kind = OpKind::input_labels;
    n.out_shape = {batch};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_input_const(Shape shape, std::string name) {
    OpNode n;
    n.kind = OpKind::input_const;
    n.out_shape = std::move(shape);
    n.name = std::move(name);
    shape_numel(n.out_shape);
    return push(std::move(n));
}

int Graph::add_param_ref(const ParamStore& store, int param, std::string name) {
    check_param_shape(store, param, "param_ref");
    OpNode n;
    n.kind = OpKind::param_ref;
    n.param = param;
    n.out_shape = store.params[static_cast<size_t>(param)].value.shape;
    n.name = name.empty() ? store.params[static_cast<size_t>(param)].name : std::move(name);
    return push(std::move(n));
}

int Graph::add_dense(const ParamStore& store, int input, int weight, int bias, int layer_id,
                     std::string name) {
    check_input(input);
    check_param_shape(store, weight, "dense weight");
    check_param_shape(store, bias, "dense bias");
    const Shape& in = node(input).out_shape;
    const Shape& w = store.params[static_cast<size_t>(weight)].value.shape;
    const Shape& b = store.params[static_cast<size_t>(bias)].value.shape;
    if (in.size() != 2) throw graph_error("dense expects rank-2 input, got " + shape_str(in));
    if (w.size() != 2 || w[0] != in[1])
        throw graph_error("dense weight " + shape_str(w) + " does not match input " + shape_str(in));
    if (b.size() != 1 || b[0] != w[1]) throw graph_error("dense bias shape mismatch");
    OpNode n;
    n.kind = OpKind::dense;
    n.inputs = {input};
    n.weight = weight;
    n.bias = bias;
    n.layer_id = layer_id;
    n.out_shape = {in[0], w[1]};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_conv2d(const ParamStore& store, int input, int weight, int bias, int layer_id,
                      std::string name) {
    check_input(input);
    check_param_shape(store, weight, "conv weight");
    check_param_shape(store, bias, "conv bias");
    const Shape& in = node(input).out_shape;
    const Shape& w = store.params[static_cast<size_t>(weight)].value.shape;
    const Shape& b = store.params[static_cast<size_t>(bias)].value.shape;
    if (in.size() != 4) throw graph_error("conv2d expects NHWC input, got " + shape_str(in));
    if (w.size() != 4 || w[0] != w[1] || w[0] % 2 == 0)
        throw graph_error("conv2d needs a square odd kernel, got " + shape_str(w));
    if (w[2] != in[3])
        throw graph_error("conv2d weight " + shape_str(w) + " does not match input " + shape_str(in));
    if (b.size() != 1 || b[0] != w[3]) throw graph_error("conv2d bias shape mismatch");
    OpNode n;
    n.kind = OpKind::conv2d;
    n.inputs = {input};
    n.weight = weight;
    n.bias = bias;
    n.kernel = w[0];
    n.layer_id = layer_id;
    n.out_shape = {in[0], in[1], in[2], w[3]};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_batchnorm(const ParamStore& store, int input, int gamma, int beta, int bn_state,
                         int layer_id, BnMode mode, std::string name) {
    check_input(input);
    check_param_shape(store, gamma, "bn gamma");
    check_param_shape(store, beta, "bn beta");
    const Shape& in = node(input).out_shape;
    if (in.size() < 2) throw graph_error("batchnorm expects rank >= 2 input");
    int channels = in.back();
    const Shape& g = store.params[static_cast<size_t>(gamma)].value.shape;
    const Shape& b = store.params[static_cast<size_t>(beta)].value.shape;
    if (g != Shape{channels} || b != Shape{channels})
        throw graph_error("batchnorm affine parameters must be per-channel");
    if (bn_state < 0 || bn_state >= static_cast<int>(store.bn.size()))
        throw graph_error("batchnorm refers to unknown BN state");
    if (static_cast<int>(store.bn[static_cast<size_t>(bn_state)].running_mean.size()) != channels)
        throw graph_error("batchnorm state channel count mismatch");
    OpNode n;
    n.kind = OpKind::batchnorm;
    n.inputs = {input};
    n.weight = gamma;
    n.bias = beta;
    n.bn_state = bn_state;
    n.bn_mode = mode;
    n.layer_id = layer_id;
    n.out_shape = in;
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_relu(int input, std::string name) {
    check_input(input);
    OpNode n;
    n.kind = OpKind::relu;
    n.inputs = {input};
    n.out_shape = node(input).out_shape;
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_maxpool2(int input, std::string name) {
    check_input(input);
    const Shape& in = node(input).out_shape;
    if (in.size() != 4) throw graph_error("maxpool2 expects NHWC input");
    if (in[1] % 2 != 0 || in[2] % 2 != 0)
        throw graph_error("maxpool2 requires even spatial dims, got " + shape_str(in));
    OpNode n;
    n.kind = OpKind::maxpool2;
    n.inputs = {input};
    n.out_shape = {in[0], in[1] / 2, in[2] / 2, in[3]};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_flatten(int input, std::string name) {
    check_input(input);
    const Shape& in = node(input).out_shape;
    if (in.size() < 2) throw graph_error("flatten expects rank >= 2 input");
    int64_t rest = 1;
    for (size_t i = 1; i < in.size(); ++i) rest *= in[i];
    OpNode n;
    n.kind = OpKind::flatten;
    n.inputs = {input};
    n.out_shape = {in[0], static_cast<int>(rest)};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_sum_all(int input, std::string name) {
    check_input(input);
    OpNode n;
    n.kind = OpKind::sum_all;
    n.inputs = {input};
    n.out_shape = {1};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_softmax_xent(int logits, int labels, std::string name) {
    check_input(logits);
    check_input(labels);
    const Shape& ls = node(logits).out_shape;
    if (ls.size() != 2) throw graph_error("softmax_xent expects rank-2 logits");
    if (node(labels).kind != OpKind::input_labels || node(labels).out_shape != Shape{ls[0]})
        throw graph_error("softmax_xent labels must be a label input of matching batch");
    OpNode n;
    n.kind = OpKind::softmax_xent;
    n.inputs = {logits, labels};
    n.out_shape = {1};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_entropy_loss(int logits, double h0, bool filtered, std::string name) {
    check_input(logits);
    if (node(logits).out_shape.size() != 2) throw graph_error("entropy_loss expects rank-2 logits");
    if (filtered && !(h0 > 0.0)) throw graph_error("entropy_loss requires H0 > 0");
    OpNode n;
    n.kind = OpKind::entropy_loss;
    n.inputs = {logits};
    n.h0 = h0;
    n.filtered = filtered;
    n.out_shape = {1};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_l1_diff(int live, int reference, std::string name) {
    check_input(live);
    check_input(reference);
    if (node(live).out_shape != node(reference).out_shape)
        throw graph_error("l1_diff shape mismatch: " + shape_str(node(live).out_shape) + " vs " +
                          shape_str(node(reference).out_shape));
    OpNode n;
    n.kind = OpKind::l1_diff;
    n.inputs = {live, reference};
    n.out_shape = {1};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_add_n(std::vector<int> inputs, std::string name) {
    if (inputs.empty()) throw graph_error("add_n needs at least one input");
    for (int id : inputs) {
        check_input(id);
        if (node(id).out_shape != Shape{1}) throw graph_error("add_n expects scalar inputs");
    }
    OpNode n;
    n.kind = OpKind::add_n;
    n.inputs = std::move(inputs);
    n.out_shape = {1};
    n.name = std::move(name);
    return push(std::move(n));
}

int Graph::add_axpy(int a, int b, double scale, std::string name) {
    check_input(a);
    check_input(b);
    if (node(a).out_shape != Shape{1} || node(b).out_shape != Shape{1})
        throw graph_error("axpy expects scalar inputs");
    OpNode n;
    n.kind = OpKind::axpy;
    n.inputs = {a, b};
    n.scale = scale;
    n.out_shape = {1};
    n.name = std::move(name);
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Retention analysis

namespace {

bool param_trainable(const ParamStore& store, int idx) {
    return idx >= 0 && store.params[static_cast<size_t>(idx)].trainable;
}

bool own_trainable(const OpNode& n, const ParamStore& store) {
    return param_trainable(store, n.weight) || param_trainable(store, n.bias) ||
           param_trainable(store, n.param);
}

}  // namespace

std::vector<NodeRetention> analyze_retention(const Graph& g, const ParamStore& store) {
    int n = g.size();
    std::vector<char> upstream(static_cast<size_t>(n), 0);
    std::vector<NodeRetention> out(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        const OpNode& node = g.node(k);
        bool own = own_trainable(node, store);
        bool in_grad = false;
        for (int j : node.inputs)
            if (upstream[static_cast<size_t>(j)]) in_grad = true;
        upstream[static_cast<size_t>(k)] = static_cast<char>(own || in_grad);

        NodeRetention& r = out[static_cast<size_t>(k)];
        // Bias/beta gradients need only the output adjoint, so the saved
        // weight-grad dependency keys on the weight/gamma slot alone.
        r.weight_grad = param_trainable(store, node.weight);
        r.input_grad = in_grad;
        switch (node.kind) {
            case OpKind::dense:
            case OpKind::conv2d:
                if (r.weight_grad) r.saved.push_back("input");
                break;
            case OpKind::batchnorm:
                if (r.weight_grad || (r.input_grad && node.bn_mode == BnMode::use_batch_stats))
                    r.saved.push_back("xhat");
                if (r.input_grad && node.bn_mode == BnMode::use_batch_stats)
                    r.saved.push_back("inv_std");
                break;
            case OpKind::relu:
                if (r.input_grad) r.saved.push_back("mask");
                break;
            case OpKind::maxpool2:
                if (r.input_grad) r.saved.push_back("argmax");
                break;
            case OpKind::softmax_xent:
                if (r.input_grad) {
                    r.saved.push_back("probs");
                    r.saved.push_back("labels");
                }
                break;
            case OpKind::entropy_loss:
                if (r.input_grad) {
                    r.saved.push_back("probs");
                    r.saved.push_back("keep_mask");
                }
                break;
            case OpKind::l1_diff:
                if (r.input_grad) r.saved.push_back("sign");
                break;
            default:
                break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tape

int64_t Tape::total_retained_bytes() const {
    return weight_grad_bytes() + pass_through_bytes();
}

int64_t Tape::weight_grad_bytes() const {
    int64_t n = 0;
    for (const auto& t : nodes) n += t.weight_grad_bytes;
    return n;
}

int64_t Tape::pass_through_bytes() const {
    int64_t n = 0;
    for (const auto& t : nodes) n += t.pass_through_bytes;
    return n;
}

Tensor* Tape::find_saved_f(int node, const std::string& tag) {
    for (auto& s : nodes[static_cast<size_t>(node)].saved_f)
        if (s.tag == tag) return const_cast<Tensor*>(s.t.get());
    return nullptr;
}

ByteTensor* Tape::find_saved_b(int node, const std::string& tag) {
    for (auto& s : nodes[static_cast<size_t>(node)].saved_b)
        if (s.tag == tag) return const_cast<ByteTensor*>(s.t.get());
    return nullptr;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

struct SaveCtx {
    TapeNode* tn;
    ElemWidth width;
    bool as_weight_grad;  // attribution of the next save_f call
};

void save_f(TapeNode& tn, ElemWidth width, const std::string& tag,
            std::shared_ptr<const Tensor> t, bool weight_grad_bytes) {
    int64_t bytes = t->size() * width_bytes(width);
    if (weight_grad_bytes)
        tn.weight_grad_bytes += bytes;
    else
        tn.pass_through_bytes += bytes;
    tn.saved_f.push_back({tag, std::move(t)});
}

void save_b(TapeNode& tn, const std::string& tag, std::shared_ptr<const ByteTensor> t) {
    tn.pass_through_bytes += t->size();
    tn.saved_b.push_back({tag, std::move(t)});
}

}  // namespace

ForwardResult forward(const Graph& g, ParamStore& store, const FeedMap& feed,
                      const ForwardOptions& opts) {
    int n = g.size();
    if (n == 0) throw graph_error("forward on empty graph");

    std::vector<NodeRetention> retention = analyze_retention(g, store);

    // Last forward consumer per node; pinned nodes stay alive to the end.
    std::vector<int> last_use(static_cast<size_t>(n), -1);
    for (int k = 0; k < n; ++k)
        for (int j : g.node(k).inputs) last_use[static_cast<size_t>(j)] = k;
    std::vector<char> pinned(static_cast<size_t>(n), 0);
    pinned[static_cast<size_t>(n - 1)] = 1;
    for (int id : opts.keep_values) {
        if (id < 0 || id >= n) throw graph_error("keep_values refers to unknown node");
        pinned[static_cast<size_t>(id)] = 1;
    }

    std::vector<std::shared_ptr<Tensor>> values(static_cast<size_t>(n));
    std::vector<std::shared_ptr<ByteTensor>> byte_values(static_cast<size_t>(n));

    ForwardResult result;
    result.tape.width = store.width;
    result.tape.nodes.resize(static_cast<size_t>(n));
    result.tape.shapes.resize(static_cast<size_t>(n));

    const ElemWidth width = store.width;
    const bool f32 = width == ElemWidth::f32;
    int64_t live_bytes = 0;
    int64_t retained_bytes = 0;

    auto val = [&](int id) -> const Tensor& {
        const auto& p = values[static_cast<size_t>(id)];
        if (!p) throw graph_error("internal: value of node " + std::to_string(id) +
                                  " was released before use");
        return *p;
    };

    for (int k = 0; k < n; ++k) {
        const OpNode& node = g.node(k);
        const NodeRetention& ret = retention[static_cast<size_t>(k)];
        bool want_w = ret.weight_grad || opts.retain_all;
        bool want_i = ret.input_grad || opts.retain_all;

        TapeNode& tn = result.tape.nodes[static_cast<size_t>(k)];
        tn.kind = node.kind;
        tn.inputs = node.inputs;
        tn.output = k;
        tn.layer_id = node.layer_id;
        result.tape.shapes[static_cast<size_t>(k)] = node.out_shape;

        std::shared_ptr<Tensor> out;

        switch (node.kind) {
            case OpKind::input_image:
            case OpKind::input_const: {
                auto it = feed.floats.find(k);
                if (it == feed.floats.end())
                    throw graph_error("missing feed for input node '" + node.name + "'");
                if (it->second.shape != node.out_shape)
                    throw graph_error("feed shape " + shape_str(it->second.shape) +
                                      " does not match input '" + node.name + "' " +
                                      shape_str(node.out_shape));
                out = std::make_shared<Tensor>(it->second);
                break;
            }
            case OpKind::input_labels: {
                auto it = feed.bytes.find(k);
                if (it == feed.bytes.end())
                    throw graph_error("missing label feed for node '" + node.name + "'");
                if (it->second.shape != node.out_shape)
                    throw graph_error("label feed shape mismatch");
                byte_values[static_cast<size_t>(k)] = std::make_shared<ByteTensor>(it->second);
                out = std::make_shared<Tensor>(Shape{1});  // placeholder value
                break;
            }
            case OpKind::param_ref: {
                out = std::make_shared<Tensor>(store.params[static_cast<size_t>(node.param)].value);
                break;
            }
            case OpKind::dense: {
                const Tensor& x = val(node.inputs[0]);
                const Tensor& w = store.params[static_cast<size_t>(node.weight)].value;
                const Tensor& b = store.params[static_cast<size_t>(node.bias)].value;
                int batch = x.shape[0], din = x.shape[1], dout = w.shape[1];
                out = std::make_shared<Tensor>(node.out_shape);
                for (int bi = 0; bi < batch; ++bi) {
                    const double* xr = x.data.data() + static_cast<size_t>(bi) * din;
                    double* yr = out->data.data() + static_cast<size_t>(bi) * dout;
                    for (int o = 0; o < dout; ++o) yr[o] = b.data[static_cast<size_t>(o)];
                    for (int d = 0; d < din; ++d) {
                        double xv = xr[d];
                        const double* wr = w.data.data() + static_cast<size_t>(d) * dout;
                        for (int o = 0; o < dout; ++o) yr[o] += xv * wr[o];
                    }
                }
                if (want_w)
                    save_f(tn, width, "input", values[static_cast<size_t>(node.inputs[0])],
                           ret.weight_grad);
                break;
            }
            case OpKind::conv2d: {
                const Tensor& x = val(node.inputs[0]);
                const Tensor& w = store.params[static_cast<size_t>(node.weight)].value;
                const Tensor& b = store.params[static_cast<size_t>(node.bias)].value;
                int batch = x.shape[0], h = x.shape[1], wd = x.shape[2];
                int cin = x.shape[3], cout = w.shape[3];
                int k = node.kernel, pad = k / 2;
                out = std::make_shared<Tensor>(node.out_shape);
                std::vector<double> acc(static_cast<size_t>(cout));
                for (int bi = 0; bi < batch; ++bi) {
                    for (int i = 0; i < h; ++i) {
                        for (int j = 0; j < wd; ++j) {
                            for (int o = 0; o < cout; ++o)
                                acc[static_cast<size_t>(o)] = b.data[static_cast<size_t>(o)];
                            for (int di = 0; di < k; ++di) {
                                int ii = i + di - pad;
                                if (ii < 0 || ii >= h) continue;
                                for (int dj = 0; dj < k; ++dj) {
                                    int jj = j + dj - pad;
                                    if (jj < 0 || jj >= wd) continue;
                                    const double* xr =
                                        x.data.data() +
                                        ((static_cast<size_t>(bi) * h + ii) * wd + jj) * cin;
                                    const double* wr =
                                        w.data.data() +
                                        (static_cast<size_t>(di) * k + dj) * cin * cout;
                                    for (int ci = 0; ci < cin; ++ci) {
                                        double xv = xr[ci];
                                        const double* wrow = wr + static_cast<size_t>(ci) * cout;
                                        for (int o = 0; o < cout; ++o)
                                            acc[static_cast<size_t>(o)] += xv * wrow[o];
                                    }
                                }
                            }
                            double* yr = out->data.data() +
                                         ((static_cast<size_t>(bi) * h + i) * wd + j) * cout;
                            for (int o = 0; o < cout; ++o) yr[o] = acc[static_cast<size_t>(o)];
                        }
                    }
                }
                if (want_w)
                    save_f(tn, width, "input", values[static_cast<size_t>(node.inputs[0])],
                           ret.weight_grad);
                break;
            }
            case OpKind::batchnorm: {
                const Tensor& x = val(node.inputs[0]);
                const Tensor& gamma = store.params[static_cast<size_t>(node.weight)].value;
                const Tensor& beta = store.params[static_cast<size_t>(node.bias)].value;
                BnState& st = store.bn[static_cast<size_t>(node.bn_state)];
                int channels = x.shape.back();
                int64_t count = x.size() / channels;
                out = std::make_shared<Tensor>(node.out_shape);
                auto xhat = std::make_shared<Tensor>(x.shape);
                auto inv_std = std::make_shared<Tensor>(Shape{channels});

                std::vector<double> mean(static_cast<size_t>(channels), 0.0);
                std::vector<double> var(static_cast<size_t>(channels), 0.0);
                if (node.bn_mode == BnMode::use_batch_stats) {
                    for (int64_t i = 0; i < x.size(); ++i)
                        mean[static_cast<size_t>(i % channels)] += x.data[static_cast<size_t>(i)];
                    for (int c = 0; c < channels; ++c) mean[static_cast<size_t>(c)] /= count;
                    for (int64_t i = 0; i < x.size(); ++i) {
                        double d = x.data[static_cast<size_t>(i)] -
                                   mean[static_cast<size_t>(i % channels)];
                        var[static_cast<size_t>(i % channels)] += d * d;
                    }
                    for (int c = 0; c < channels; ++c) var[static_cast<size_t>(c)] /= count;
                    if (opts.update_running_stats) {
                        for (int c = 0; c < channels; ++c) {
                            st.running_mean[static_cast<size_t>(c)] =
                                (1.0 - st.momentum) * st.running_mean[static_cast<size_t>(c)] +
                                st.momentum * mean[static_cast<size_t>(c)];
                            st.running_var[static_cast<size_t>(c)] =
                                (1.0 - st.momentum) * st.running_var[static_cast<size_t>(c)] +
                                st.momentum * var[static_cast<size_t>(c)];
                        }
                    }
                } else {
                    for (int c = 0; c < channels; ++c) {
                        mean[static_cast<size_t>(c)] = st.running_mean[static_cast<size_t>(c)];
                        var[static_cast<size_t>(c)] = st.running_var[static_cast<size_t>(c)];
                    }
                }
                for (int c = 0; c < channels; ++c)
                    inv_std->data[static_cast<size_t>(c)] =
                        1.0 / std::sqrt(var[static_cast<size_t>(c)] + st.epsilon);
                for (int64_t i = 0; i < x.size(); ++i) {
                    int c = static_cast<int>(i % channels);
                    double xh = (x.data[static_cast<size_t>(i)] - mean[static_cast<size_t>(c)]) *
                                inv_std->data[static_cast<size_t>(c)];
                    xhat->data[static_cast<size_t>(i)] = xh;
                    out->data[static_cast<size_t>(i)] =
                        gamma.data[static_cast<size_t>(c)] * xh + beta.data[static_cast<size_t>(c)];
                }

                bool batch_mode = node.bn_mode == BnMode::use_batch_stats;
                if (want_w || (want_i && batch_mode))
                    save_f(tn, width, "xhat", xhat, ret.weight_grad);
                if (want_i && batch_mode) save_f(tn, width, "inv_std", inv_std, false);
                break;
            }
            case OpKind::relu: {
                const Tensor& x = val(node.inputs[0]);
                out = std::make_shared<Tensor>(node.out_shape);
                auto mask = std::make_shared<ByteTensor>(x.shape);
                for (int64_t i = 0; i < x.size(); ++i) {
                    bool pos = x.data[static_cast<size_t>(i)] > 0.0;
                    mask->data[static_cast<size_t>(i)] = pos ? 1 : 0;
                    out->data[static_cast<size_t>(i)] = pos ? x.data[static_cast<size_t>(i)] : 0.0;
                }
                if (want_i) save_b(tn, "mask", mask);
                break;
            }
            case OpKind::maxpool2: {
                const Tensor& x = val(node.inputs[0]);
                int batch = x.shape[0], h = x.shape[1], wd = x.shape[2], ch = x.shape[3];
                int oh = h / 2, ow = wd / 2;
                out = std::make_shared<Tensor>(node.out_shape);
                auto argmax = std::make_shared<ByteTensor>(node.out_shape);
                for (int bi = 0; bi < batch; ++bi) {
                    for (int i = 0; i < oh; ++i) {
                        for (int j = 0; j < ow; ++j) {
                            for (int c = 0; c < ch; ++c) {
                                double best = 0.0;
                                int besta = -1;
                                for (int a = 0; a < 4; ++a) {
                                    int ii = 2 * i + a / 2, jj = 2 * j + a % 2;
                                    double v = x.data[((static_cast<size_t>(bi) * h + ii) * wd + jj) *
                                                          ch +
                                                      c];
                                    if (besta < 0 || v > best) {
                                        best = v;
                                        besta = a;
                                    }
                                }
                                size_t oidx =
                                    ((static_cast<size_t>(bi) * oh + i) * ow + j) * ch + c;
                                out->data[oidx] = best;
                                argmax->data[oidx] = static_cast<uint8_t>(besta);
                            }
                        }
                    }
                }
                if (want_i) save_b(tn, "argmax", argmax);
                break;
            }
            case OpKind::flatten: {
                const Tensor& x = val(node.inputs[0]);
                out = std::make_shared<Tensor>(node.out_shape, x.data);
                break;
            }
            case OpKind::sum_all: {
                const Tensor& x = val(node.inputs[0]);
                double s = 0.0;
                for (double v : x.data) s += v;
                out = std::make_shared<Tensor>(Tensor::scalar(s));
                break;
            }
            case OpKind::softmax_xent: {
                const Tensor& logits = val(node.inputs[0]);
                const auto& labels = byte_values[static_cast<size_t>(node.inputs[1])];
                if (!labels) throw graph_error("softmax_xent: labels not fed");
                int batch = logits.shape[0], classes = logits.shape[1];
                auto probs = std::make_shared<Tensor>(softmax_rows(logits));
                double loss = 0.0;
                for (int b = 0; b < batch; ++b) {
                    int y = labels->data[static_cast<size_t>(b)];
                    if (y < 0 || y >= classes) throw graph_error("softmax_xent: label out of range");
                    double p = probs->data[static_cast<size_t>(b) * classes + y];
                    loss -= std::log(std::max(p, 1e-300));
                }
                loss /= batch;
                out = std::make_shared<Tensor>(Tensor::scalar(loss));
                if (want_i) {
                    save_f(tn, width, "probs", probs, false);
                    save_b(tn, "labels", labels);
                }
                break;
            }
            case OpKind::entropy_loss: {
                const Tensor& logits = val(node.inputs[0]);
                int batch = logits.shape[0], classes = logits.shape[1];
                auto probs = std::make_shared<Tensor>(softmax_rows(logits));
                auto keep = std::make_shared<ByteTensor>(Shape{batch});
                double total = 0.0;
                int kept = 0;
                for (int b = 0; b < batch; ++b) {
                    double h = row_entropy(probs->data.data() + static_cast<size_t>(b) * classes,
                                           classes);
                    bool in = !node.filtered || h < node.h0;
                    keep->data[static_cast<size_t>(b)] = in ? 1 : 0;
                    if (in) {
                        total += h;
                        ++kept;
                    }
                }
                double loss = kept > 0 ? total / kept : 0.0;
                out = std::make_shared<Tensor>(Tensor::scalar(loss));
                if (want_i) {
                    save_f(tn, width, "probs", probs, false);
                    save_b(tn, "keep_mask", keep);
                }
                break;
            }
            case OpKind::l1_diff: {
                const Tensor& live = val(node.inputs[0]);
                const Tensor& ref = val(node.inputs[1]);
                auto sign = std::make_shared<ByteTensor>(live.shape);  // 0,1,2 => -1,0,+1
                double total = 0.0;
                for (int64_t i = 0; i < live.size(); ++i) {
                    double d = live.data[static_cast<size_t>(i)] - ref.data[static_cast<size_t>(i)];
                    total += std::abs(d);
                    sign->data[static_cast<size_t>(i)] =
                        static_cast<uint8_t>(d > 0.0 ? 2 : (d < 0.0 ? 0 : 1));
                }
                out = std::make_shared<Tensor>(Tensor::scalar(total / live.size()));
                if (want_i) save_b(tn, "sign", sign);
                break;
            }
            case OpKind::add_n: {
                double s = 0.0;
                for (int j : node.inputs) s += val(j).data[0];
                out = std::make_shared<Tensor>(Tensor::scalar(s));
                break;
            }
            case OpKind::axpy: {
                out = std::make_shared<Tensor>(
                    Tensor::scalar(val(node.inputs[0]).data[0] +
                                   node.scale * val(node.inputs[1]).data[0]));
                break;
            }
        }

        if (f32)
            for (double& v : out->data) v = quantize(ElemWidth::f32, v);
        if (opts.check_finite && !all_finite(*out))
            throw numeric_error("non-finite value in output of node '" + node.name + "' (" +
                                op_kind_name(node.kind) + ", id " + std::to_string(k) + ")");

        values[static_cast<size_t>(k)] = out;
        live_bytes += out->size() * width_bytes(width);
        retained_bytes += tn.weight_grad_bytes + tn.pass_through_bytes;
        result.peak_live_bytes = std::max(result.peak_live_bytes, live_bytes + retained_bytes);

        // Release intermediates whose last forward consumer was this node.
        for (int j : node.inputs) {
            if (last_use[static_cast<size_t>(j)] == k && !pinned[static_cast<size_t>(j)] &&
                values[static_cast<size_t>(j)]) {
                live_bytes -= values[static_cast<size_t>(j)]->size() * width_bytes(width);
                values[static_cast<size_t>(j)].reset();
            }
        }
    }

    result.output = *values[static_cast<size_t>(n - 1)];
    for (int id : opts.keep_values) result.kept.emplace(id, *values[static_cast<size_t>(id)]);
    return result;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

void accumulate(std::optional<Tensor>& slot, const Shape& shape, const Tensor& delta) {
    if (!slot) {
        slot.emplace(shape);
    }
    for (int64_t i = 0; i < delta.size(); ++i) slot->data[static_cast<size_t>(i)] += delta[i];
}

Tensor* require_f(Tape& tape, int node, const char* tag) {
    Tensor* t = tape.find_saved_f(node, tag);
    if (!t)
        throw graph_error(std::string("backward: missing saved tensor '") + tag + "' on node " +
                          std::to_string(node));
    return t;
}

ByteTensor* require_b(Tape& tape, int node, const char* tag) {
    ByteTensor* t = tape.find_saved_b(node, tag);
    if (!t)
        throw graph_error(std::string("backward: missing saved bytes '") + tag + "' on node " +
                          std::to_string(node));
    return t;
}

}  // namespace

GradMap backward(const Graph& g, const ParamStore& store, const Tape& tape, int loss_node) {
    int n = g.size();
    if (loss_node < 0 || loss_node >= n) throw graph_error("backward: unknown loss node");
    if (tape.shapes.empty()) throw graph_error("backward before forward");
    if (tape.shapes[static_cast<size_t>(loss_node)] != Shape{1})
        throw graph_error("backward: loss must be scalar");

    std::vector<NodeRetention> retention = analyze_retention(g, store);
    // upstream-trainable per node, for deciding which inputs receive gradient
    std::vector<char> upstream(static_cast<size_t>(n), 0);
    for (int k = 0; k < n; ++k) {
        bool u = own_trainable(g.node(k), store);
        for (int j : g.node(k).inputs) u = u || upstream[static_cast<size_t>(j)];
        upstream[static_cast<size_t>(k)] = static_cast<char>(u);
    }

    Tape& tp = const_cast<Tape&>(tape);
    std::vector<std::optional<Tensor>> adjoint(static_cast<size_t>(n));
    adjoint[static_cast<size_t>(loss_node)].emplace(Tensor::scalar(1.0));

    GradMap grads;
    auto param_grad = [&](int idx) -> Tensor& {
        auto it = grads.find(idx);
        if (it == grads.end())
            it = grads.emplace(idx, Tensor(store.params[static_cast<size_t>(idx)].value.shape))
                     .first;
        return it->second;
    };

    for (int k = n - 1; k >= 0; --k) {
        if (!adjoint[static_cast<size_t>(k)]) continue;
        const OpNode& node = g.node(k);
        const NodeRetention& ret = retention[static_cast<size_t>(k)];
        const Tensor& gout = *adjoint[static_cast<size_t>(k)];

        auto input_needs_grad = [&](int slot) {
            return upstream[static_cast<size_t>(node.inputs[static_cast<size_t>(slot)])];
        };
        auto push_input_grad = [&](int slot, const Tensor& delta) {
            int j = node.inputs[static_cast<size_t>(slot)];
            accumulate(adjoint[static_cast<size_t>(j)], tape.shapes[static_cast<size_t>(j)], delta);
        };

        switch (node.kind) {
            case OpKind::input_image:
            case OpKind::input_labels:
            case OpKind::input_const:
                break;
            case OpKind::param_ref: {
                const Parameter& p = store.params[static_cast<size_t>(node.param)];
                if (p.trainable) {
                    Tensor& gp = param_grad(node.param);
                    for (int64_t i = 0; i < gout.size(); ++i)
                        gp.data[static_cast<size_t>(i)] += gout[i];
                }
                break;
            }
            case OpKind::dense: {
                const Tensor& w = store.params[static_cast<size_t>(node.weight)].value;
                int batch = gout.shape[0], dout = gout.shape[1], din = w.shape[0];
                if (param_trainable(store, node.weight)) {
                    const Tensor& x = *require_f(tp, k, "input");
                    Tensor& gw = param_grad(node.weight);
                    for (int b = 0; b < batch; ++b) {
                        const double* xr = x.data.data() + static_cast<size_t>(b) * din;
                        const double* gr = gout.data.data() + static_cast<size_t>(b) * dout;
                        for (int d = 0; d < din; ++d) {
                            double xv = xr[d];
                            double* gwr = gw.data.data() + static_cast<size_t>(d) * dout;
                            for (int o = 0; o < dout; ++o) gwr[o] += xv * gr[o];
                        }
                    }
                }
                if (param_trainable(store, node.bias)) {
                    Tensor& gb = param_grad(node.bias);
                    for (int b = 0; b < batch; ++b) {
                        const double* gr = gout.data.data() + static_cast<size_t>(b) * dout;
                        for (int o = 0; o < dout; ++o) gb.data[static_cast<size_t>(o)] += gr[o];
                    }
                }
                if (ret.input_grad && input_needs_grad(0)) {
                    Tensor gx(Shape{batch, din});
                    for (int b = 0; b < batch; ++b) {
                        const double* gr = gout.data.data() + static_cast<size_t>(b) * dout;
                        double* gxr = gx.data.data() + static_cast<size_t>(b) * din;
                        for (int d = 0; d < din; ++d) {
                            const double* wr = w.data.data() + static_cast<size_t>(d) * dout;
                            double s = 0.0;
                            for (int o = 0; o < dout; ++o) s += wr[o] * gr[o];
                            gxr[d] = s;
                        }
                    }
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::conv2d: {
                const Tensor& w = store.params[static_cast<size_t>(node.weight)].value;
                const Shape& in_shape = tape.shapes[static_cast<size_t>(node.inputs[0])];
                int batch = in_shape[0], h = in_shape[1], wd = in_shape[2];
                int cin = in_shape[3], cout = w.shape[3];
                int ksz = node.kernel, pad = ksz / 2;
                if (param_trainable(store, node.bias)) {
                    Tensor& gb = param_grad(node.bias);
                    for (int64_t i = 0; i < gout.size(); ++i)
                        gb.data[static_cast<size_t>(i % cout)] += gout[i];
                }
                if (param_trainable(store, node.weight)) {
                    const Tensor& x = *require_f(tp, k, "input");
                    Tensor& gw = param_grad(node.weight);
                    for (int b = 0; b < batch; ++b) {
                        for (int i = 0; i < h; ++i) {
                            for (int j = 0; j < wd; ++j) {
                                const double* gr =
                                    gout.data.data() +
                                    ((static_cast<size_t>(b) * h + i) * wd + j) * cout;
                                for (int di = 0; di < ksz; ++di) {
                                    int ii = i + di - pad;
                                    if (ii < 0 || ii >= h) continue;
                                    for (int dj = 0; dj < ksz; ++dj) {
                                        int jj = j + dj - pad;
                                        if (jj < 0 || jj >= wd) continue;
                                        const double* xr =
                                            x.data.data() +
                                            ((static_cast<size_t>(b) * h + ii) * wd + jj) * cin;
                                        double* gwr =
                                            gw.data.data() +
                                            (static_cast<size_t>(di) * ksz + dj) * cin * cout;
                                        for (int ci = 0; ci < cin; ++ci) {
                                            double xv = xr[ci];
                                            double* gwrow = gwr + static_cast<size_t>(ci) * cout;
                                            for (int o = 0; o < cout; ++o)
                                                gwrow[o] += xv * gr[o];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if (ret.input_grad && input_needs_grad(0)) {
                    Tensor gx(in_shape);
                    for (int b = 0; b < batch; ++b) {
                        for (int i = 0; i < h; ++i) {
                            for (int j = 0; j < wd; ++j) {
                                const double* gr =
                                    gout.data.data() +
                                    ((static_cast<size_t>(b) * h + i) * wd + j) * cout;
                                for (int di = 0; di < ksz; ++di) {
                                    int ii = i + di - pad;
                                    if (ii < 0 || ii >= h) continue;
                                    for (int dj = 0; dj < ksz; ++dj) {
                                        int jj = j + dj - pad;
                                        if (jj < 0 || jj >= wd) continue;
                                        double* gxr =
                                            gx.data.data() +
                                            ((static_cast<size_t>(b) * h + ii) * wd + jj) * cin;
                                        const double* wr =
                                            w.data.data() +
                                            (static_cast<size_t>(di) * ksz + dj) * cin * cout;
                                        for (int ci = 0; ci < cin; ++ci) {
                                            const double* wrow = wr + static_cast<size_t>(ci) * cout;
                                            double s = 0.0;
                                            for (int o = 0; o < cout; ++o) s += wrow[o] * gr[o];
                                            gxr[ci] += s;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::batchnorm: {
                const Tensor& gamma = store.params[static_cast<size_t>(node.weight)].value;
                const BnState& st = store.bn[static_cast<size_t>(node.bn_state)];
                int channels = gout.shape.back();
                int64_t count = gout.size() / channels;
                bool batch_mode = node.bn_mode == BnMode::use_batch_stats;

                if (param_trainable(store, node.weight)) {
                    const Tensor& xhat = *require_f(tp, k, "xhat");
                    Tensor& gg = param_grad(node.weight);
                    for (int64_t i = 0; i < gout.size(); ++i)
                        gg.data[static_cast<size_t>(i % channels)] +=
                            gout[i] * xhat.data[static_cast<size_t>(i)];
                }
                if (param_trainable(store, node.bias)) {
                    Tensor& gb = param_grad(node.bias);
                    for (int64_t i = 0; i < gout.size(); ++i)
                        gb.data[static_cast<size_t>(i % channels)] += gout[i];
                }
                if (ret.input_grad && input_needs_grad(0)) {
                    Tensor gx(tape.shapes[static_cast<size_t>(node.inputs[0])]);
                    if (batch_mode) {
                        const Tensor& xhat = *require_f(tp, k, "xhat");
                        const Tensor& inv_std = *require_f(tp, k, "inv_std");
                        std::vector<double> sum_g(static_cast<size_t>(channels), 0.0);
                        std::vector<double> sum_gx(static_cast<size_t>(channels), 0.0);
                        for (int64_t i = 0; i < gout.size(); ++i) {
                            int c = static_cast<int>(i % channels);
                            sum_g[static_cast<size_t>(c)] += gout[i];
                            sum_gx[static_cast<size_t>(c)] +=
                                gout[i] * xhat.data[static_cast<size_t>(i)];
                        }
                        for (int64_t i = 0; i < gout.size(); ++i) {
                            int c = static_cast<int>(i % channels);
                            gx.data[static_cast<size_t>(i)] =
                                gamma.data[static_cast<size_t>(c)] *
                                inv_std.data[static_cast<size_t>(c)] *
                                (gout[i] - sum_g[static_cast<size_t>(c)] / count -
                                 xhat.data[static_cast<size_t>(i)] *
                                     sum_gx[static_cast<size_t>(c)] / count);
                        }
                    } else {
                        // Running-stats mode is a per-channel affine map; the
                        // scale comes from resident model state.
                        for (int64_t i = 0; i < gout.size(); ++i) {
                            int c = static_cast<int>(i % channels);
                            double inv =
                                1.0 / std::sqrt(st.running_var[static_cast<size_t>(c)] + st.epsilon);
                            gx.data[static_cast<size_t>(i)] =
                                gout[i] * gamma.data[static_cast<size_t>(c)] * inv;
                        }
                    }
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::relu: {
                if (ret.input_grad && input_needs_grad(0)) {
                    const ByteTensor& mask = *require_b(tp, k, "mask");
                    Tensor gx(tape.shapes[static_cast<size_t>(node.inputs[0])]);
                    for (int64_t i = 0; i < gout.size(); ++i)
                        gx.data[static_cast<size_t>(i)] =
                            mask.data[static_cast<size_t>(i)] ? gout[i] : 0.0;
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::maxpool2: {
                if (ret.input_grad && input_needs_grad(0)) {
                    const ByteTensor& argmax = *require_b(tp, k, "argmax");
                    const Shape& in_shape = tape.shapes[static_cast<size_t>(node.inputs[0])];
                    int batch = gout.shape[0], oh = gout.shape[1], ow = gout.shape[2],
                        ch = gout.shape[3];
                    int h = in_shape[1], wd = in_shape[2];
                    Tensor gx(in_shape);
                    for (int b = 0; b < batch; ++b) {
                        for (int i = 0; i < oh; ++i) {
                            for (int j = 0; j < ow; ++j) {
                                for (int c = 0; c < ch; ++c) {
                                    size_t oidx =
                                        ((static_cast<size_t>(b) * oh + i) * ow + j) * ch + c;
                                    int a = argmax.data[oidx];
                                    int ii = 2 * i + a / 2, jj = 2 * j + a % 2;
                                    gx.data[((static_cast<size_t>(b) * h + ii) * wd + jj) * ch +
                                            c] += gout.data[oidx];
                                }
                            }
                        }
                    }
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::flatten: {
                if (ret.input_grad && input_needs_grad(0)) {
                    Tensor gx(tape.shapes[static_cast<size_t>(node.inputs[0])], gout.data);
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::sum_all: {
                if (ret.input_grad && input_needs_grad(0)) {
                    Tensor gx(tape.shapes[static_cast<size_t>(node.inputs[0])]);
                    for (auto& v : gx.data) v = gout.data[0];
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::softmax_xent: {
                if (ret.input_grad && input_needs_grad(0)) {
                    const Tensor& probs = *require_f(tp, k, "probs");
                    const ByteTensor& labels = *require_b(tp, k, "labels");
                    int batch = probs.shape[0], classes = probs.shape[1];
                    Tensor gx(probs.shape);
                    double scale = gout.data[0] / batch;
                    for (int b = 0; b < batch; ++b) {
                        int y = labels.data[static_cast<size_t>(b)];
                        for (int c = 0; c < classes; ++c) {
                            size_t idx = static_cast<size_t>(b) * classes + c;
                            gx.data[idx] = scale * (probs.data[idx] - (c == y ? 1.0 : 0.0));
                        }
                    }
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::entropy_loss: {
                if (ret.input_grad && input_needs_grad(0)) {
                    const Tensor& probs = *require_f(tp, k, "probs");
                    const ByteTensor& keep = *require_b(tp, k, "keep_mask");
                    int batch = probs.shape[0], classes = probs.shape[1];
                    int kept = 0;
                    for (int b = 0; b < batch; ++b) kept += keep.data[static_cast<size_t>(b)];
                    Tensor gx(probs.shape);
                    if (kept > 0) {
                        double scale = gout.data[0] / kept;
                        for (int b = 0; b < batch; ++b) {
                            if (!keep.data[static_cast<size_t>(b)]) continue;
                            const double* p = probs.data.data() + static_cast<size_t>(b) * classes;
                            double h = row_entropy(p, classes);
                            double* gr = gx.data.data() + static_cast<size_t>(b) * classes;
                            for (int c = 0; c < classes; ++c)
                                gr[c] = p[c] > 0.0 ? -scale * p[c] * (std::log(p[c]) + h) : 0.0;
                        }
                    }
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::l1_diff: {
                if (ret.input_grad && input_needs_grad(0)) {
                    const ByteTensor& sign = *require_b(tp, k, "sign");
                    const Shape& in_shape = tape.shapes[static_cast<size_t>(node.inputs[0])];
                    Tensor gx(in_shape);
                    double scale = gout.data[0] / sign.size();
                    for (int64_t i = 0; i < sign.size(); ++i)
                        gx.data[static_cast<size_t>(i)] =
                            scale * (static_cast<int>(sign.data[static_cast<size_t>(i)]) - 1);
                    push_input_grad(0, gx);
                }
                break;
            }
            case OpKind::add_n: {
                for (size_t s = 0; s < node.inputs.size(); ++s)
                    if (input_needs_grad(static_cast<int>(s)))
                        push_input_grad(static_cast<int>(s), gout);
                break;
            }
            case OpKind::axpy: {
                if (input_needs_grad(0)) push_input_grad(0, gout);
                if (input_needs_grad(1)) {
                    Tensor gb = Tensor::scalar(gout.data[0] * node.scale);
                    push_input_grad(1, gb);
                }
                break;
            }
        }
        adjoint[static_cast<size_t>(k)].reset();
    }
    return grads;
}

}  // namespace focta
