#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <pam/autograd.hpp>
#include <pam/rng.hpp>
#include <pam/tensor.hpp>

#include <cmath>
#include <vector>

#include "fd.hpp"

using namespace pam;

namespace {

// Smooth scalar readout so every output element influences the loss.
nn::Var readout(const nn::Var& v) {
    Tensor w(v->value.dims());
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = std::sin(0.3 + 0.7 * static_cast<double>(i));
    return nn::sum_all(nn::mul(v, nn::constant(w)));
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.dim(1) == 3);
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
    t.at(1, 2, 3) = 5.0;
    CHECK(t[23] == 5.0);
    Tensor u = Tensor::uninit({3});
    CHECK(u.numel() == 3);
    CHECK(Tensor().empty());
}

TEST_CASE("elementwise gradients") {
    Rng rng(101);
    auto x = fd::random_tensor({3, 5, 5}, rng);
    auto y = fd::random_tensor({3, 5, 5}, rng);

    auto r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::add(v[0], v[1]));
    }, {x, y});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::sub(v[0], v[1]));
    }, {x, y});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::mul(v[0], v[1]));
    }, {x, y});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::scale(v[0], -1.7));
    }, {x});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::sigmoid(v[0]));
    }, {x});
    CHECK(r.max_rel < 1e-5);
}

TEST_CASE("kinked elementwise gradients away from the kink") {
    Rng rng(102);
    // Keep probes away from 0 (relu/abs) and the clamp edges.
    Tensor x({4, 6});
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        double v = rng.uniform(0.2, 0.8);
        x[i] = (rng.uniform() < 0.5) ? -v : v;
    }
    auto r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::relu(v[0]));
    }, {x});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::abs(v[0]));
    }, {x});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::clamp(v[0], -0.9, 0.9));
    }, {x});
    CHECK(r.max_rel < 1e-5);
}

TEST_CASE("relu and clamp forward values") {
    Tensor x({4});
    x[0] = -2.0; x[1] = -0.5; x[2] = 0.5; x[3] = 2.0;
    nn::Var v = nn::relu(nn::constant(x));
    CHECK(v->value[0] == 0.0);
    CHECK(v->value[3] == 2.0);
    v = nn::clamp(nn::constant(x), -1.0, 1.0);
    CHECK(v->value[0] == -1.0);
    CHECK(v->value[2] == 0.5);
    CHECK(v->value[3] == 1.0);
}

TEST_CASE("structural op gradients") {
    Rng rng(103);
    auto a = fd::random_tensor({2, 4, 4}, rng);
    auto b = fd::random_tensor({3, 4, 4}, rng);
    auto g = fd::random_tensor({2}, rng, 0.1, 1.0);
    auto m = fd::random_tensor({3, 5}, rng);

    auto r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::concat_channels({v[0], v[1]}));
    }, {a, b});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::concat_vec({nn::row(v[0], 0), nn::row(v[0], 2)}));
    }, {m});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::channel_gate(v[0], v[1]));
    }, {a, g});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::broadcast_chw(v[0], 3, 3));
    }, {g});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::scale_by(v[0], v[1], 1));
    }, {a, g});
    CHECK(r.max_rel < 1e-5);
}

TEST_CASE("conv2d gradients across lowering paths") {
    Rng rng(104);
    struct Case {
        int cin, cout, k, stride, pad, groups, h;
    };
    // stride-1 shifted GEMM, strided patch lowering, pointwise, depthwise,
    // grouped non-depthwise.
    std::vector<Case> cases = {
        {4, 6, 3, 1, 1, 1, 8}, {4, 6, 3, 2, 1, 1, 9}, {4, 8, 1, 1, 0, 1, 8},
        {6, 6, 5, 1, 2, 6, 8}, {6, 4, 3, 1, 1, 2, 8}, {3, 5, 3, 1, 0, 1, 7},
    };
    for (const Case& c : cases) {
        CAPTURE(c.k);
        CAPTURE(c.stride);
        CAPTURE(c.groups);
        auto x = fd::random_tensor({c.cin, c.h, c.h}, rng);
        auto w = fd::random_tensor({c.cout, c.cin / c.groups, c.k, c.k}, rng);
        auto b = fd::random_tensor({c.cout}, rng);
        auto r = fd::check([&](const std::vector<nn::Var>& v) {
            return readout(nn::conv2d(v[0], v[1], v[2], c.stride, c.pad, c.groups));
        }, {x, w, b});
        CHECK(r.max_rel < 1e-5);
    }
}

TEST_CASE("conv2d shape errors") {
    Rng rng(105);
    auto x = fd::random_tensor({4, 8, 8}, rng);
    auto w = fd::random_tensor({6, 3, 3, 3}, rng);  // Cin mismatch
    auto b = fd::random_tensor({6}, rng);
    CHECK_THROWS_AS(nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), 1, 1, 1),
                    std::invalid_argument);
}

TEST_CASE("linear, pooling and resampling gradients") {
    Rng rng(106);
    auto x = fd::random_tensor({6}, rng);
    auto w = fd::random_tensor({4, 6}, rng);
    auto b = fd::random_tensor({4}, rng);
    auto r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::linear(v[0], v[1], v[2]));
    }, {x, w, b});
    CHECK(r.max_rel < 1e-5);

    auto f = fd::random_tensor({3, 8, 8}, rng);
    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::global_avg_pool(v[0]));
    }, {f});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::avg_pool_grid(v[0], 2));
    }, {f});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::upsample_nearest(v[0], 2));
    }, {f});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::subsample2(v[0]));
    }, {f});
    CHECK(r.max_rel < 1e-5);
}

TEST_CASE("pooling forward values") {
    Tensor x({1, 2, 2});
    x[0] = 1.0; x[1] = 2.0; x[2] = 3.0; x[3] = 4.0;
    CHECK(nn::global_avg_pool(nn::constant(x))->value[0] == doctest::Approx(2.5));
    nn::Var up = nn::upsample_nearest(nn::constant(x), 2);
    CHECK(up->value.dim(1) == 4);
    CHECK(up->value.at(0, 0, 1) == 1.0);
    CHECK(up->value.at(0, 3, 3) == 4.0);
}

TEST_CASE("reduction and loss op gradients") {
    Rng rng(107);
    auto p = fd::random_tensor({6, 6}, rng, 0.1, 0.9);
    auto gt = fd::random_tensor({6, 6}, rng, 0.0, 1.0);
    Tensor mask({6, 6});
    for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = (i % 3 == 0) ? 1.0 : 0.0;

    auto r = fd::check([](const std::vector<nn::Var>& v) { return nn::mean_all(v[0]); }, {p});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([&](const std::vector<nn::Var>& v) {
        return nn::masked_charbonnier(v[0], gt, mask, 1e-6);
    }, {p});
    CHECK(r.max_rel < 1e-4);

    auto img = fd::random_tensor({3, 6, 6}, rng, 0.0, 1.0);
    auto fg = fd::random_tensor({3, 6, 6}, rng, 0.0, 1.0);
    auto bg = fd::random_tensor({3, 6, 6}, rng, 0.0, 1.0);
    r = fd::check([&](const std::vector<nn::Var>& v) {
        return nn::composition_charbonnier(v[0], img, fg, bg, mask, 1e-6);
    }, {p});
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("softmax and cross-entropy") {
    Tensor logits({2});
    logits[0] = 2.0;
    logits[1] = 0.0;
    nn::Var sm = nn::softmax(nn::constant(logits));
    double e2 = std::exp(2.0);
    CHECK(sm->value[0] == doctest::Approx(e2 / (e2 + 1.0)).epsilon(1e-12));
    CHECK(sm->value[1] == doctest::Approx(1.0 / (e2 + 1.0)).epsilon(1e-12));

    nn::Var ce = nn::cross_entropy_logits(nn::constant(logits), 1);
    CHECK(ce->value[0] == doctest::Approx(-std::log(1.0 / (e2 + 1.0))).epsilon(1e-12));

    Rng rng(108);
    auto l = fd::random_tensor({5}, rng);
    auto r = fd::check([](const std::vector<nn::Var>& v) {
        return readout(nn::softmax(v[0]));
    }, {l});
    CHECK(r.max_rel < 1e-5);

    r = fd::check([](const std::vector<nn::Var>& v) {
        return nn::cross_entropy_logits(v[0], 2);
    }, {l});
    CHECK(r.max_rel < 1e-5);
}

TEST_CASE("straight-through one-hot") {
    Tensor soft({2});
    soft[0] = 0.3;
    soft[1] = 0.7;
    nn::Var s = nn::leaf(soft);
    nn::Var st = nn::straight_through_onehot(s);
    CHECK(st->value[0] == 0.0);
    CHECK(st->value[1] == 1.0);

    // Backward is the identity: d(sum(st * w))/d(soft) == w.
    Tensor w({2});
    w[0] = 1.5;
    w[1] = -2.5;
    nn::backward(nn::sum_all(nn::mul(st, nn::constant(w))));
    CHECK(s->grad[0] == doctest::Approx(1.5));
    CHECK(s->grad[1] == doctest::Approx(-2.5));

    // Ties harden to the lowest index.
    Tensor tie({2});
    tie[0] = 0.5;
    tie[1] = 0.5;
    nn::Var t = nn::straight_through_onehot(nn::constant(tie));
    CHECK(t->value[0] == 1.0);
    CHECK(t->value[1] == 0.0);
}

TEST_CASE("gradient accumulation on shared leaves") {
    Tensor x({3});
    x[0] = 1.0; x[1] = 2.0; x[2] = 3.0;
    nn::Var v = nn::leaf(x);
    nn::backward(nn::sum_all(nn::add(v, v)));
    for (int i = 0; i < 3; ++i) CHECK(v->grad[i] == doctest::Approx(2.0));

    nn::Var c = nn::constant(x);
    nn::Var sum = nn::sum_all(c);
    CHECK_FALSE(sum->requires_grad);
}

TEST_CASE("no-grad scope skips the tape") {
    Tensor x({3});
    x[0] = 1.0;
    CHECK(nn::grad_enabled());
    {
        nn::NoGradGuard guard;
        CHECK_FALSE(nn::grad_enabled());
        nn::Var v = nn::leaf(x);
        nn::Var y = nn::scale(v, 2.0);
        CHECK(y->value[0] == 2.0);
        CHECK_FALSE(y->requires_grad);
    }
    CHECK(nn::grad_enabled());
}

TEST_CASE("forwards are deterministic") {
    Rng rng(109);
    auto x = fd::random_tensor({4, 8, 8}, rng);
    auto w = fd::random_tensor({6, 4, 3, 3}, rng);
    auto b = fd::random_tensor({6}, rng);
    nn::Var y1 = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), 1, 1, 1);
    nn::Var y2 = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), 1, 1, 1);
    for (std::int64_t i = 0; i < y1->value.numel(); ++i) CHECK(y1->value[i] == y2->value[i]);
}
