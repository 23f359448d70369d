#include "focta/train.hpp"

#include <algorithm>

#include "focta/optim.hpp"

namespace focta {

namespace {

// xent training graph for one batch size
struct TrainGraph {
    ModelGraph mg;
    int labels_node = -1;
    int loss_node = -1;
};

TrainGraph build_train_graph(const Model& model, int batch) {
    TrainGraph tg;
    tg.mg = build_model_graph(model, batch, BnMode::use_batch_stats);
    tg.labels_node = tg.mg.graph.add_input_labels(batch, "labels");
    tg.loss_node = tg.mg.graph.add_softmax_xent(tg.mg.logits_node, tg.labels_node, "xent");
    return tg;
}

ByteTensor label_batch(const Dataset& ds, const std::vector<size_t>& order, size_t first,
                       size_t count) {
    ByteTensor out(Shape{static_cast<int>(count)});
    for (size_t i = 0; i < count; ++i)
        out.data[i] = static_cast<uint8_t>(ds.labels[order[first + i]]);
    return out;
}

Tensor image_batch(const Dataset& ds, const std::vector<size_t>& order, size_t first,
                   size_t count) {
    Tensor out({static_cast<int>(count), ds.height, ds.width, ds.channels});
    size_t per = static_cast<size_t>(ds.height) * ds.width * ds.channels;
    for (size_t i = 0; i < count; ++i)
        std::copy(ds.images[order[first + i]].data.begin(), ds.images[order[first + i]].data.end(),
                  out.data.begin() + static_cast<ptrdiff_t>(i * per));
    return out;
}

}  // namespace

PretrainResult pretrain(Model& model, const Dataset& source, const PretrainParams& params,
                        uint64_t seed) {
    if (params.batch < 1 || params.epochs < 1) throw config_error("bad pretraining parameters");
    size_t n_val = static_cast<size_t>(static_cast<double>(source.size()) * params.val_fraction);
    size_t n_train = source.size() - n_val;
    if (n_train < static_cast<size_t>(params.batch))
        throw config_error("training split smaller than one batch");

    Adam adam({params.lr, 0.9, 0.999, 1e-8});
    // train every parameterized layer
    std::vector<int> all_ids;
    for (const auto& l : model.layers)
        if (l.layer_id > 0) all_ids.push_back(l.layer_id);
    model.set_trainable_layers(all_ids);

    std::map<int, TrainGraph> graphs;
    Rng shuffle_rng(derive_seed(seed, 0x7121));
    std::vector<size_t> order(n_train);
    for (size_t i = 0; i < n_train; ++i) order[i] = i;

    Dataset val;
    val.height = source.height;
    val.width = source.width;
    val.channels = source.channels;
    val.num_classes = source.num_classes;
    for (size_t i = n_train; i < source.size(); ++i) {
        val.images.push_back(source.images[i]);
        val.labels.push_back(source.labels[i]);
    }

    PretrainResult result;
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t first = 0; first + params.batch <= n_train;
             first += static_cast<size_t>(params.batch)) {
            size_t count = static_cast<size_t>(params.batch);
            auto it = graphs.find(static_cast<int>(count));
            if (it == graphs.end())
                it = graphs.emplace(static_cast<int>(count),
                                    build_train_graph(model, static_cast<int>(count)))
                         .first;
            TrainGraph& tg = it->second;

            FeedMap feed;
            feed.floats.emplace(tg.mg.input_node, image_batch(source, order, first, count));
            feed.bytes.emplace(tg.labels_node, label_batch(source, order, first, count));
            ForwardOptions opts;
            opts.update_running_stats = true;
            opts.keep_values = {tg.loss_node};
            auto fr = forward(tg.mg.graph, model.store, feed, opts);
            double loss = fr.kept.at(tg.loss_node).data[0];
            if (!std::isfinite(loss))
                throw numeric_error("pretraining loss went non-finite at epoch " +
                                    std::to_string(epoch));
            epoch_loss += loss;
            ++batches;
            auto grads = backward(tg.mg.graph, model.store, fr.tape, tg.loss_node);
            adam.step(model.store, grads);
        }
        result.epoch_loss.push_back(batches > 0 ? epoch_loss / batches : 0.0);
        ++result.epochs_run;
        if (val.size() > 0) {
            result.clean_accuracy_pct = accuracy_pct(model, val, BnMode::use_running_stats);
            if (result.clean_accuracy_pct >= params.target_accuracy) break;
        }
    }
    model.set_all_frozen();
    return result;
}

double accuracy_pct(Model& model, const Dataset& data, BnMode bn_mode) {
    if (data.size() == 0) throw config_error("accuracy over an empty dataset");
    size_t correct = 0;
    const size_t chunk = 64;
    for (size_t first = 0; first < data.size(); first += chunk) {
        size_t count = std::min(chunk, data.size() - first);
        Tensor logits = eval_logits(model, data.batch(first, count), bn_mode);
        std::vector<int> pred = predict_classes(logits);
        for (size_t i = 0; i < count; ++i)
            if (pred[i] == data.labels[first + i]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace focta
