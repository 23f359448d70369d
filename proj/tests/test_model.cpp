#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "focta/model.hpp"

using namespace focta;

TEST_CASE("reference cnn layer registry matches the architecture") {
    ModelConfig cfg;  // 16x16x1, widths {16,32,48}, C=3
    Model m = build_reference_cnn(cfg, 1);

    CHECK(m.parameterized_count() == 7);  // 3 conv + 3 bn + 1 dense
    CHECK(m.representation_layer_ids() == std::vector<int>{1, 3, 5});
    CHECK(m.bn_layer_ids() == std::vector<int>{2, 4, 6});
    CHECK(m.classifier_layer_ids() == std::vector<int>{7});

    // tag totality and mutual exclusion over parameterized layers
    for (const auto& l : m.layers) {
        if (l.layer_id <= 0) continue;
        bool is_bn = l.kind == LayerKind::batchnorm;
        int tags = (l.is_representation ? 1 : 0) + (l.is_classifier ? 1 : 0) + (is_bn ? 1 : 0);
        CHECK(tags == 1);
    }

    ModelSplit split = m.split();
    CHECK(split.parameterized_count == 7);
    // h_s is the flatten + dense head, everything else is g_s
    CHECK(split.h_s.size() == 2);
    CHECK(split.g_s.size() == m.layers.size() - 2);
}

TEST_CASE("classifier output dimension follows the class count") {
    ModelConfig cfg;
    cfg.num_classes = 10;
    Model m = build_reference_cnn(cfg, 1);
    const LayerDescriptor& head = m.layer_by_id(7);
    CHECK(m.store.params[static_cast<size_t>(head.param_ids[0])].value.shape ==
          Shape{192, 10});
    // stem is 5x5, the rest 3x3
    CHECK(m.store.params[static_cast<size_t>(m.layer_by_id(1).param_ids[0])].value.shape ==
          Shape{5, 5, 1, 96});
    CHECK(m.store.params[static_cast<size_t>(m.layer_by_id(3).param_ids[0])].value.shape ==
          Shape{3, 3, 96, 12});
}

TEST_CASE("parameter count from the shape algebra") {
    // stem conv 5*5*1*96+96, bn1 2*96, conv2 3*3*96*12+12, bn2 2*12,
    // conv3 3*3*12*48+48, bn3 2*48, dense 192*C+C
    ModelConfig cfg;
    Model m = build_reference_cnn(cfg, 1);
    int64_t expect = (5 * 5 * 1 * 96 + 96) + 192 + (3 * 3 * 96 * 12 + 12) + 24 +
                     (3 * 3 * 12 * 48 + 48) + 96 + (192 * 3 + 3);
    CHECK(m.parameter_count() == expect);
    CHECK(expect == 18999);

    ModelConfig ten = cfg;
    ten.num_classes = 10;
    CHECK(build_reference_cnn(ten, 1).parameter_count() == 20350);
}

TEST_CASE("invalid model configs are rejected") {
    ModelConfig cfg;
    cfg.num_classes = 0;
    CHECK_THROWS_AS(build_reference_cnn(cfg, 1), config_error);
    ModelConfig odd;
    odd.input_h = 18;  // does not survive three pools
    CHECK_THROWS_AS(build_reference_cnn(odd, 1), config_error);
}

TEST_CASE("initialization is deterministic in the seed") {
    ModelConfig cfg;
    Model a = build_reference_cnn(cfg, 42);
    Model b = build_reference_cnn(cfg, 42);
    Model c = build_reference_cnn(cfg, 43);
    for (size_t i = 0; i < a.store.params.size(); ++i)
        CHECK(a.store.params[i].value.data == b.store.params[i].value.data);
    CHECK(a.store.params[0].value.data != c.store.params[0].value.data);
}

TEST_CASE("frozen snapshot stays bit-identical while the live model moves") {
    ModelConfig cfg;
    Model live = build_reference_cnn(cfg, 7);
    Model frozen = snapshot_frozen_reference(live);

    Rng rng(5);
    Tensor probe({2, 16, 16, 1});
    for (auto& v : probe.data) v = rng.uniform(0.0, 1.0);

    Tensor before_live = eval_logits(live, probe, BnMode::use_running_stats);
    Tensor before_frozen = eval_logits(frozen, probe, BnMode::use_running_stats);
    CHECK(before_live.data == before_frozen.data);  // equal at snapshot time

    for (auto& p : live.store.params)
        for (auto& v : p.value.data) v += 0.05;

    Tensor after_frozen = eval_logits(frozen, probe, BnMode::use_running_stats);
    CHECK(after_frozen.data == before_frozen.data);
    Tensor after_live = eval_logits(live, probe, BnMode::use_running_stats);
    CHECK(after_live.data != before_live.data);
}

TEST_CASE("split evaluation equals the monolithic forward") {
    ModelConfig cfg;
    Model m = build_reference_cnn(cfg, 9);
    Rng rng(11);
    Tensor probe({3, 16, 16, 1});
    for (auto& v : probe.data) v = rng.uniform(0.0, 1.0);

    ModelGraph mg = build_model_graph(m, 3, BnMode::use_running_stats);
    // boundary: output of the last g_s layer (bn3 feeds relu/pool; take the
    // node right before the flatten head)
    int boundary = -1;
    for (int k = 0; k < mg.graph.size(); ++k)
        if (mg.graph.node(k).kind == OpKind::flatten) boundary = mg.graph.node(k).inputs[0];
    REQUIRE(boundary >= 0);

    ForwardOptions opts;
    opts.keep_values = {boundary};
    FeedMap feed;
    feed.floats.emplace(mg.input_node, probe);
    auto full = forward(mg.graph, m.store, feed, opts);

    // classifier stack evaluated on its own from the boundary features
    const LayerDescriptor& head = m.layer_by_id(7);
    Graph hs;
    int in = hs.add_input_const(mg.graph.node(boundary).out_shape, "features");
    int flat = hs.add_flatten(in);
    int logits = hs.add_dense(m.store, flat, head.param_ids[0], head.param_ids[1], 7);
    (void)logits;
    FeedMap hfeed;
    hfeed.floats.emplace(in, full.kept.at(boundary));
    auto part = forward(hs, m.store, hfeed);

    CHECK(part.output.data == full.output.data);
}

TEST_CASE("batch-stats BN survives a zero-variance channel via epsilon") {
    ModelConfig cfg;
    Model m = build_reference_cnn(cfg, 3);
    Tensor constant({1, 16, 16, 1});
    for (auto& v : constant.data) v = 0.42;
    Tensor logits = eval_logits(m, constant, BnMode::use_batch_stats);
    CHECK(all_finite(logits));
}

TEST_CASE("checkpoint round trip is bit-exact") {
    ModelConfig cfg;
    cfg.num_classes = 4;
    Model m = build_reference_cnn(cfg, 21);
    // move state off the initialization manifold so the test is not vacuous
    Rng rng(300);
    for (auto& p : m.store.params)
        for (auto& v : p.value.data) v += rng.uniform(-0.01, 0.01);
    for (auto& s : m.store.bn) {
        for (auto& v : s.running_mean) v = rng.uniform(-1.0, 1.0);
        for (auto& v : s.running_var) v = rng.uniform(0.1, 2.0);
    }

    std::string path = "checkpoint_roundtrip_test.json";
    save_checkpoint(m, path, {{"clean_accuracy", "0.97"}});
    LoadedCheckpoint loaded = load_checkpoint(path);

    REQUIRE(loaded.model.store.params.size() == m.store.params.size());
    for (size_t i = 0; i < m.store.params.size(); ++i)
        CHECK(loaded.model.store.params[i].value.data == m.store.params[i].value.data);
    for (size_t i = 0; i < m.store.bn.size(); ++i) {
        CHECK(loaded.model.store.bn[i].running_mean == m.store.bn[i].running_mean);
        CHECK(loaded.model.store.bn[i].running_var == m.store.bn[i].running_var);
    }
    CHECK(loaded.meta.at("clean_accuracy") == "0.97");
    CHECK(loaded.model.layers.size() == m.layers.size());
    std::remove(path.c_str());
}

TEST_CASE("set_trainable_layers partitions parameters exactly") {
    ModelConfig cfg;
    Model m = build_reference_cnn(cfg, 2);
    m.set_trainable_layers({3, 7});
    for (const auto& p : m.store.params) {
        bool expect = p.layer_id == 3 || p.layer_id == 7;
        CHECK(p.trainable == expect);
    }
    CHECK_THROWS_AS(m.set_trainable_layers({99}), config_error);
}
