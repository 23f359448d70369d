#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "focta/graph.hpp"
#include "oracles.hpp"

using namespace focta;
using focta::testing::fd_check;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// values bounded away from the ReLU kink
Tensor random_tensor_off_zero(Rng& rng, Shape shape, double margin = 0.05) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) {
        double mag = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// pairwise-distinct values so a 1e-5 nudge never flips a pool argmax
Tensor distinct_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    std::vector<int64_t> order(t.data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = 0.01 * static_cast<double>(order[i]);
    return t;
}

ByteTensor random_labels(Rng& rng, int batch, int classes) {
    ByteTensor t(Shape{batch});
    for (auto& v : t.data) v = static_cast<uint8_t>(rng.uniform_int(0, classes - 1));
    return t;
}

constexpr int kShapesPerOp = 20;

}  // namespace

TEST_CASE("dense gradients vs finite differences") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(101, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(1, 4));
        int din = static_cast<int>(rng.uniform_int(1, 7));
        int dout = static_cast<int>(rng.uniform_int(1, 6));

        ParamStore store;
        int x = store.add_param("x", random_tensor(rng, {batch, din}), ParamRole::weight, 1);
        int w = store.add_param("w", random_tensor(rng, {din, dout}), ParamRole::weight, 2);
        int b = store.add_param("b", random_tensor(rng, {dout}), ParamRole::bias, 2);
        for (auto& p : store.params) p.trainable = true;

        Graph g;
        int xr = g.add_param_ref(store, x);
        int d = g.add_dense(store, xr, w, b, 2);
        int loss = g.add_sum_all(d);

        auto rep = fd_check(g, store, {}, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("dense linear case: grad of sum(W.x) is x") {
    ParamStore store;
    int x = store.add_param("x", Tensor({1, 3}, {1, 2, 3}), ParamRole::weight, 1);
    int w = store.add_param("w", Tensor({3, 1}, {0.5, -1.0, 2.0}), ParamRole::weight, 2);
    int b = store.add_param("b", Tensor({1}, {0.0}), ParamRole::bias, 2);
    (void)x;
    store.params[static_cast<size_t>(w)].trainable = true;

    Graph g;
    int xr = g.add_param_ref(store, 0);
    int d = g.add_dense(store, xr, w, b, 2);
    int loss = g.add_sum_all(d);

    auto res = forward(g, store, {});
    auto grads = backward(g, store, res.tape, loss);
    REQUIRE(grads.count(w) == 1);
    CHECK(grads.at(w).data == std::vector<double>{1, 2, 3});
    CHECK(grads.count(b) == 0);  // frozen bias: absent, not zero
}

TEST_CASE("conv2d gradients vs finite differences") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(202, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(1, 2));
        int h = static_cast<int>(rng.uniform_int(2, 5));
        int wdim = static_cast<int>(rng.uniform_int(2, 5));
        int cin = static_cast<int>(rng.uniform_int(1, 3));
        int cout = static_cast<int>(rng.uniform_int(1, 3));
        int kernel = trial % 3 == 0 ? 5 : 3;  // cover the 5x5 stem path

        ParamStore store;
        int x = store.add_param("x", random_tensor(rng, {batch, h, wdim, cin}), ParamRole::weight, 1);
        int w = store.add_param("w", random_tensor(rng, {kernel, kernel, cin, cout}),
                                ParamRole::weight, 2);
        int b = store.add_param("b", random_tensor(rng, {cout}), ParamRole::bias, 2);
        (void)x;
        for (auto& p : store.params) p.trainable = true;

        Graph g;
        int xr = g.add_param_ref(store, 0);
        int c = g.add_conv2d(store, xr, w, b, 2);
        int loss = g.add_sum_all(c);

        auto rep = fd_check(g, store, {}, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("batchnorm gradients vs finite differences (batch stats)") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(303, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(2, 4));
        int h = static_cast<int>(rng.uniform_int(1, 3));
        int wdim = static_cast<int>(rng.uniform_int(1, 3));
        int ch = static_cast<int>(rng.uniform_int(1, 4));

        ParamStore store;
        store.add_param("x", random_tensor(rng, {batch, h, wdim, ch}), ParamRole::weight, 1);
        int gm = store.add_param("gamma", random_tensor(rng, {ch}, 0.5, 1.5), ParamRole::bn_gamma, 2);
        int bt = store.add_param("beta", random_tensor(rng, {ch}), ParamRole::bn_beta, 2);
        int st = store.add_bn_state(ch, 0.1, 1e-5);
        for (auto& p : store.params) p.trainable = true;

        Graph g;
        int xr = g.add_param_ref(store, 0);
        int bn = g.add_batchnorm(store, xr, gm, bt, st, 2, BnMode::use_batch_stats);
        // relu breaks the sum(xhat)=0 symmetry so gamma gets a generic gradient
        int r = g.add_relu(bn);
        int loss = g.add_sum_all(r);

        auto rep = fd_check(g, store, {}, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("batchnorm gradients vs finite differences (running stats)") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(404, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(1, 3));
        int ch = static_cast<int>(rng.uniform_int(1, 5));

        ParamStore store;
        store.add_param("x", random_tensor(rng, {batch, 2, 2, ch}), ParamRole::weight, 1);
        int gm = store.add_param("gamma", random_tensor(rng, {ch}, 0.5, 1.5), ParamRole::bn_gamma, 2);
        int bt = store.add_param("beta", random_tensor(rng, {ch}), ParamRole::bn_beta, 2);
        int st = store.add_bn_state(ch, 0.1, 1e-5);
        for (int c = 0; c < ch; ++c) {
            store.bn[0].running_mean[static_cast<size_t>(c)] = rng.uniform(-0.5, 0.5);
            store.bn[0].running_var[static_cast<size_t>(c)] = rng.uniform(0.3, 2.0);
        }
        for (auto& p : store.params) p.trainable = true;

        Graph g;
        int xr = g.add_param_ref(store, 0);
        int bn = g.add_batchnorm(store, xr, gm, bt, st, 2, BnMode::use_running_stats);
        int r = g.add_relu(bn);
        int loss = g.add_sum_all(r);

        auto rep = fd_check(g, store, {}, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("relu gradients vs finite differences") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(505, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(1, 3));
        int d = static_cast<int>(rng.uniform_int(1, 12));

        ParamStore store;
        store.add_param("x", random_tensor_off_zero(rng, {batch, d}), ParamRole::weight, 1);
        store.params[0].trainable = true;

        Graph g;
        int xr = g.add_param_ref(store, 0);
        int r = g.add_relu(xr);
        int loss = g.add_sum_all(r);

        auto rep = fd_check(g, store, {}, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("maxpool2 gradients vs finite differences") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(606, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(1, 2));
        int h = 2 * static_cast<int>(rng.uniform_int(1, 3));
        int wdim = 2 * static_cast<int>(rng.uniform_int(1, 3));
        int ch = static_cast<int>(rng.uniform_int(1, 3));

        ParamStore store;
        store.add_param("x", distinct_tensor(rng, {batch, h, wdim, ch}), ParamRole::weight, 1);
        store.params[0].trainable = true;

        Graph g;
        int xr = g.add_param_ref(store, 0);
        int p = g.add_maxpool2(xr);
        int loss = g.add_sum_all(p);

        auto rep = fd_check(g, store, {}, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("softmax cross-entropy gradients vs finite differences") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(707, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(1, 6));
        int classes = static_cast<int>(rng.uniform_int(2, 8));

        ParamStore store;
        store.add_param("logits", random_tensor(rng, {batch, classes}, -2.0, 2.0),
                        ParamRole::weight, 1);
        store.params[0].trainable = true;

        Graph g;
        int lr = g.add_param_ref(store, 0);
        int lab = g.add_input_labels(batch);
        int loss = g.add_softmax_xent(lr, lab);

        FeedMap feed;
        feed.bytes.emplace(lab, random_labels(rng, batch, classes));

        auto rep = fd_check(g, store, feed, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("entropy loss gradients vs finite differences") {
    for (bool filtered : {true, false}) {
        for (int trial = 0; trial < kShapesPerOp; ++trial) {
            Rng rng(derive_seed(filtered ? 808 : 809, static_cast<uint64_t>(trial)));
            int batch = static_cast<int>(rng.uniform_int(2, 6));
            int classes = static_cast<int>(rng.uniform_int(3, 8));
            double h0 = 0.4 * std::log(classes);

            // resample until every sample's entropy stays clear of the gate
            Tensor logits;
            bool clear = false;
            while (!clear) {
                logits = random_tensor(rng, {batch, classes}, -2.5, 2.5);
                clear = true;
                for (int b = 0; b < batch && clear; ++b) {
                    double mx = -1e300, z = 0.0, h = 0.0;
                    for (int c = 0; c < classes; ++c)
                        mx = std::max(mx, logits.data[static_cast<size_t>(b * classes + c)]);
                    std::vector<double> p(static_cast<size_t>(classes));
                    for (int c = 0; c < classes; ++c) {
                        p[static_cast<size_t>(c)] =
                            std::exp(logits.data[static_cast<size_t>(b * classes + c)] - mx);
                        z += p[static_cast<size_t>(c)];
                    }
                    for (int c = 0; c < classes; ++c) {
                        double q = p[static_cast<size_t>(c)] / z;
                        if (q > 0) h -= q * std::log(q);
                    }
                    if (std::abs(h - h0) < 1e-3) clear = false;
                }
            }

            ParamStore store;
            store.add_param("logits", logits, ParamRole::weight, 1);
            store.params[0].trainable = true;

            Graph g;
            int lr = g.add_param_ref(store, 0);
            int loss = g.add_entropy_loss(lr, h0, filtered);

            auto rep = fd_check(g, store, {}, loss);
            CAPTURE(rep.worst);
            CHECK(rep.ok());
        }
    }
}

TEST_CASE("l1 feature distance gradients vs finite differences") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(909, static_cast<uint64_t>(trial)));
        int batch = static_cast<int>(rng.uniform_int(1, 3));
        int d = static_cast<int>(rng.uniform_int(1, 10));

        Tensor ref = random_tensor(rng, {batch, d});
        Tensor live = ref;
        for (auto& v : live.data) {
            double delta = rng.uniform(0.05, 0.5);
            v += rng.uniform() < 0.5 ? -delta : delta;
        }

        ParamStore store;
        store.add_param("live", live, ParamRole::weight, 1);
        store.params[0].trainable = true;

        Graph g;
        int lr = g.add_param_ref(store, 0);
        int rf = g.add_input_const({batch, d}, "ref");
        int loss = g.add_l1_diff(lr, rf);

        FeedMap feed;
        feed.floats.emplace(rf, ref);

        auto rep = fd_check(g, store, feed, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("scalar combinators (add_n, axpy) vs finite differences") {
    for (int trial = 0; trial < kShapesPerOp; ++trial) {
        Rng rng(derive_seed(1010, static_cast<uint64_t>(trial)));
        ParamStore store;
        store.add_param("a", random_tensor_off_zero(rng, {2, 3}), ParamRole::weight, 1);
        store.add_param("b", random_tensor_off_zero(rng, {2, 3}), ParamRole::weight, 2);
        for (auto& p : store.params) p.trainable = true;
        double lambda = rng.uniform(0.2, 2.0);

        Graph g;
        int ar = g.add_param_ref(store, 0);
        int br = g.add_param_ref(store, 1);
        int sa = g.add_sum_all(g.add_relu(ar));
        int sb = g.add_sum_all(g.add_relu(br));
        int both = g.add_add_n({sa, sb});
        int loss = g.add_axpy(both, sb, lambda);

        auto rep = fd_check(g, store, {}, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("composite conv net gradients vs finite differences") {
    for (int trial = 0; trial < 6; ++trial) {
        Rng rng(derive_seed(1111, static_cast<uint64_t>(trial)));
        int batch = 2, h = 4, wdim = 4, cin = 2, cmid = 3, classes = 4;

        ParamStore store;
        store.add_param("x", random_tensor(rng, {batch, h, wdim, cin}), ParamRole::weight, 0);
        int cw = store.add_param("conv_w", random_tensor(rng, {3, 3, cin, cmid}, -0.5, 0.5),
                                 ParamRole::weight, 1);
        int cb = store.add_param("conv_b", random_tensor(rng, {cmid}), ParamRole::bias, 1);
        int gm = store.add_param("gamma", random_tensor(rng, {cmid}, 0.5, 1.5), ParamRole::bn_gamma, 2);
        int bt = store.add_param("beta", random_tensor(rng, {cmid}), ParamRole::bn_beta, 2);
        int st = store.add_bn_state(cmid, 0.1, 1e-5);
        int flat_dim = (h / 2) * (wdim / 2) * cmid;
        int dw = store.add_param("dense_w", random_tensor(rng, {flat_dim, classes}, -0.5, 0.5),
                                 ParamRole::weight, 3);
        int db = store.add_param("dense_b", random_tensor(rng, {classes}), ParamRole::bias, 3);
        for (auto& p : store.params) p.trainable = true;

        Graph g;
        int xr = g.add_param_ref(store, 0);
        int c = g.add_conv2d(store, xr, cw, cb, 1);
        int bn = g.add_batchnorm(store, c, gm, bt, st, 2, BnMode::use_batch_stats);
        int r = g.add_relu(bn);
        int p = g.add_maxpool2(r);
        int f = g.add_flatten(p);
        int d = g.add_dense(store, f, dw, db, 3);
        int lab = g.add_input_labels(batch);
        int loss = g.add_softmax_xent(d, lab);

        FeedMap feed;
        feed.bytes.emplace(lab, random_labels(rng, batch, classes));

        auto rep = fd_check(g, store, feed, loss);
        CAPTURE(rep.worst);
        CHECK(rep.ok());
    }
}

TEST_CASE("forward and backward are deterministic given identical inputs") {
    Rng rng(4242);
    ParamStore store;
    store.add_param("x", random_tensor(rng, {2, 4, 4, 2}), ParamRole::weight, 0);
    int cw = store.add_param("w", random_tensor(rng, {3, 3, 2, 3}), ParamRole::weight, 1);
    int cb = store.add_param("b", random_tensor(rng, {3}), ParamRole::bias, 1);
    for (auto& p : store.params) p.trainable = true;

    Graph g;
    int xr = g.add_param_ref(store, 0);
    int c = g.add_conv2d(store, xr, cw, cb, 1);
    int r = g.add_relu(c);
    int loss = g.add_sum_all(r);

    auto r1 = forward(g, store, {});
    auto g1 = backward(g, store, r1.tape, loss);
    auto r2 = forward(g, store, {});
    auto g2 = backward(g, store, r2.tape, loss);

    CHECK(r1.output.data == r2.output.data);
    REQUIRE(g1.size() == g2.size());
    for (auto& [k, v] : g1) CHECK(v.data == g2.at(k).data);
}

TEST_CASE("graph construction rejects shape mismatches") {
    ParamStore store;
    int w = store.add_param("w", Tensor({4, 2}), ParamRole::weight, 1);
    int b = store.add_param("b", Tensor({2}), ParamRole::bias, 1);

    Graph g;
    int x = g.add_input_image({1, 3});  // 3 features, weight expects 4
    CHECK_THROWS_AS(g.add_dense(store, x, w, b, 1), graph_error);

    Graph g2;
    int img = g2.add_input_image({1, 5, 5, 2});
    CHECK_THROWS_AS(g2.add_maxpool2(img), graph_error);  // odd spatial dims

    ParamStore s3;
    int cw = s3.add_param("w", Tensor({4, 4, 2, 2}), ParamRole::weight, 1);  // even kernel
    int cb = s3.add_param("b", Tensor({2}), ParamRole::bias, 1);
    Graph g3;
    int img3 = g3.add_input_image({1, 6, 6, 2});
    CHECK_THROWS_AS(g3.add_conv2d(s3, img3, cw, cb, 1), graph_error);
}

TEST_CASE("dense output shape follows the (1,3)x(3,2) rule") {
    ParamStore store;
    int w = store.add_param("w", Tensor({3, 2}), ParamRole::weight, 1);
    int b = store.add_param("b", Tensor({2}), ParamRole::bias, 1);
    Graph g;
    int x = g.add_input_image({1, 3});
    int d = g.add_dense(store, x, w, b, 1);
    CHECK(g.node(d).out_shape == Shape{1, 2});
}

TEST_CASE("non-finite outputs raise numeric_error when checking is on") {
    ParamStore store;
    store.add_param("x", Tensor({1, 2}, {1e308, 1e308}), ParamRole::weight, 1);
    int w = store.add_param("w", Tensor({2, 1}, {1e308, 1e308}), ParamRole::weight, 2);
    int b = store.add_param("b", Tensor({1}), ParamRole::bias, 2);

    Graph g;
    int xr = g.add_param_ref(store, 0);
    g.add_dense(store, xr, w, b, 2);

    ForwardOptions opts;
    opts.check_finite = true;
    CHECK_THROWS_AS(forward(g, store, {}, opts), numeric_error);
}
