#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <functional>

#include "handdiff/nn.hpp"

using namespace handdiff;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.gaussian() * scale;
    return t;
}

// central finite differences over every parameter in the store
void gradient_check(ParamStore& store, const std::function<double(Graph&)>& loss_value,
                    const std::function<Graph::Id(Graph&)>& build, double tol = 1e-4) {
    (void)loss_value;
    store.zero_grads();
    {
        Graph g;
        const Graph::Id loss = build(g);
        g.backward(loss);
    }
    for (Param* p : store.all()) {
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            const double saved = p->value.data[i];
            const double h = 1e-5 * std::max(1.0, std::abs(saved));
            p->value.data[i] = saved + h;
            double lp;
            {
                Graph g;
                lp = g.value(build(g)).data[0];
            }
            p->value.data[i] = saved - h;
            double lm;
            {
                Graph g;
                lm = g.value(build(g)).data[0];
            }
            p->value.data[i] = saved;
            const double fd = (lp - lm) / (2 * h);
            const double analytic = p->grad.data[i];
            const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
            INFO("param ", p->name, " component ", i);
            CHECK(std::abs(analytic - fd) / denom < tol);
        }
    }
    store.zero_grads();
}

}  // namespace

TEST_CASE("affine with zero weights broadcasts the bias") {
    ParamStore store;
    Rng rng(1);
    Affine a = Affine::create(store, "aff", 4, 3, rng);
    for (double& v : a.w->value.data) v = 0.0;
    a.b->value.data = {1.5, -2.0, 0.25};

    Graph g;
    const auto x = g.leaf(random_tensor({5, 4}, rng));
    const auto y = a.apply(g, x);
    for (int64_t i = 0; i < 5; ++i) {
        CHECK(g.value(y).data[i * 3 + 0] == 1.5);
        CHECK(g.value(y).data[i * 3 + 1] == -2.0);
        CHECK(g.value(y).data[i * 3 + 2] == 0.25);
    }
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(2);
    Graph g;
    const auto x = g.leaf(random_tensor({20, 13}, rng, 4.0));
    const auto y = g.softmax_rows(x);
    for (int64_t i = 0; i < 20; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < 13; ++j) s += g.value(y).data[i * 13 + j];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("quadratic loss gradient is exactly 2p") {
    ParamStore store;
    Param* p = store.add("p", {1, 6});
    p->value.data = {0.5, -1.25, 3.0, 0.0, 2.5, -0.75};
    Graph g;
    const auto loss = g.sum_squares(g.param(p));
    g.backward(loss);
    for (size_t i = 0; i < 6; ++i) CHECK(p->grad.data[i] == 2.0 * p->value.data[i]);
}

TEST_CASE("backward rejects non-scalar losses") {
    Graph g;
    Rng rng(3);
    const auto x = g.leaf(random_tensor({2, 2}, rng));
    CHECK_THROWS(g.backward(x));
}

TEST_CASE("gradient check: affine layer in isolation") {
    ParamStore store;
    Rng rng(10);
    Affine a = Affine::create(store, "aff", 6, 4, rng);
    const Tensor x = random_tensor({5, 6}, rng);
    auto build = [&](Graph& g) { return g.sum_squares(a.apply(g, g.leaf(x))); };
    gradient_check(store, nullptr, build);
}

TEST_CASE("gradient check: layer norm in isolation") {
    ParamStore store;
    Rng rng(11);
    LayerNorm ln = LayerNorm::create(store, "ln", 7);
    // non-trivial gamma/beta so their grads are exercised
    for (double& v : ln.gamma->value.data) v = 1.0 + 0.1 * rng.gaussian();
    for (double& v : ln.beta->value.data) v = 0.1 * rng.gaussian();
    Param* px = store.add("x", {4, 7});
    px->value = random_tensor({4, 7}, rng);
    auto build = [&](Graph& g) { return g.sum_squares(ln.apply(g, g.param(px))); };
    gradient_check(store, nullptr, build);
}

TEST_CASE("gradient check: self attention in isolation") {
    ParamStore store;
    Rng rng(12);
    SelfAttention sa = SelfAttention::create(store, "attn", 8, 2, rng);
    Param* px = store.add("x", {5, 8});
    px->value = random_tensor({5, 8}, rng);
    auto build = [&](Graph& g) { return g.sum_squares(sa.apply(g, g.param(px))); };
    gradient_check(store, nullptr, build);
}

TEST_CASE("gradient check: gelu in isolation") {
    ParamStore store;
    Rng rng(13);
    Param* px = store.add("x", {3, 9});
    px->value = random_tensor({3, 9}, rng, 2.0);
    auto build = [&](Graph& g) { return g.sum_squares(g.gelu(g.param(px))); };
    gradient_check(store, nullptr, build);
}

TEST_CASE("gradient check: composed two-layer encoder with slicing") {
    ParamStore store;
    Rng rng(14);
    TransformerEncoder enc = TransformerEncoder::create(store, "enc", 8, 2, 2, rng);
    Param* px = store.add("x", {6, 8});
    px->value = random_tensor({6, 8}, rng);
    const Tensor target = random_tensor({4, 8}, rng);
    auto build = [&](Graph& g) {
        const auto out = enc.apply(g, g.param(px));
        return g.mean_squared_error(g.slice_rows(out, 0, 4), g.leaf(target));
    };
    gradient_check(store, nullptr, build);
}

TEST_CASE("one adam step from zero moments matches the hand-computed value") {
    ParamStore store;
    Param* p = store.add("p", {1, 1});
    p->value.data[0] = 0.7;
    const double g = -0.3;
    p->grad.data[0] = g;

    AdamConfig cfg;
    cfg.lr = 1e-2;
    Adam adam(cfg);
    adam.step(store);

    // bias-corrected first step: update = lr * g / (|g| + eps)
    const double m_hat = (1.0 - cfg.beta1) * g / (1.0 - cfg.beta1);
    const double v_hat = (1.0 - cfg.beta2) * g * g / (1.0 - cfg.beta2);
    const double expect = 0.7 - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    CHECK(p->value.data[0] == expect);
    CHECK(p->grad.data[0] == 0.0);  // grads consumed
}

TEST_CASE("training is deterministic: identical runs produce identical bytes") {
    auto run = [&]() {
        ParamStore store;
        Rng rng(77);
        Affine a = Affine::create(store, "aff", 5, 5, rng);
        LayerNorm ln = LayerNorm::create(store, "ln", 5);
        AdamConfig cfg;
        cfg.lr = 1e-3;
        Adam adam(cfg);
        Rng data_rng(78);
        for (int step = 0; step < 100; ++step) {
            const Tensor x = random_tensor({4, 5}, data_rng);
            const Tensor t = random_tensor({4, 5}, data_rng);
            Graph g;
            const auto loss = g.mean_squared_error(ln.apply(g, a.apply(g, g.leaf(x))), g.leaf(t));
            g.backward(loss);
            adam.step(store);
        }
        std::vector<double> flat;
        for (Param* p : store.all()) flat.insert(flat.end(), p->value.data.begin(), p->value.data.end());
        return flat;
    };
    const auto r1 = run();
    const auto r2 = run();
    REQUIRE(r1.size() == r2.size());
    for (size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("weights file round-trips and detects corruption") {
    ParamStore store;
    Rng rng(99);
    Affine a = Affine::create(store, "enc.aff", 3, 4, rng);
    (void)a;
    const std::string path = "/tmp/handdiff_test_weights.bin";
    const Tensor extra = random_tensor({1, 5}, rng);
    save_param_store(path, store, {{"norm.mean", &extra}});

    ParamStore loaded;
    Rng rng2(1234);
    Affine b = Affine::create(loaded, "enc.aff", 3, 4, rng2);
    const auto extras = load_param_store(path, loaded);
    REQUIRE(extras.size() == 1);
    CHECK(extras[0].first == "norm.mean");
    CHECK(extras[0].second.data == extra.data);
    CHECK(b.w->value.data == a.w->value.data);
    CHECK(b.b->value.data == a.b->value.data);

    // truncate -> checksum failure
    {
        std::FILE* f = std::fopen(path.c_str(), "rb+");
        REQUIRE(f != nullptr);
        std::fseek(f, 0, SEEK_END);
        const long size = std::ftell(f);
        std::fseek(f, size / 2, SEEK_SET);
        const char junk = 42;
        std::fwrite(&junk, 1, 1, f);
        std::fclose(f);
    }
    CHECK_THROWS(load_weights(path));
    std::remove(path.c_str());
}

TEST_CASE("mse forward value") {
    Graph g;
    Tensor a = Tensor::row({1.0, 2.0, 3.0});
    Tensor b = Tensor::row({1.0, 0.0, 6.0});
    const auto loss = g.mean_squared_error(g.leaf(a), g.leaf(b));
    CHECK(g.value(loss).data[0] == doctest::Approx((0.0 + 4.0 + 9.0) / 3.0).epsilon(1e-15));
}
