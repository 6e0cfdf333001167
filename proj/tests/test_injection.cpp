#include <catch2/catch_amalgamated.hpp>

#include "sketchfuse/injection.hpp"
#include "testutil.hpp"

using namespace sketchfuse;

TEST_CASE("adapt shape contract at published widths") {
    AdapterStack stack = AdapterStack::init(1024, {1280, 1280, 640, 320}, 1);
    Graph g;
    auto bound = stack.bind(g, false);
    Var f_v = g.constant(randn({1, 16, 16, 1024}, 2, 0.1));
    Var out = adapt(g, f_v, 1, 15, 15, stack, bound);
    REQUIRE(g.value(out).shape() == std::vector<int>{1, 15, 15, 1280});
}

TEST_CASE("zero adapter maps everything to zero") {
    AdapterStack stack = AdapterStack::zeros(8, {6, 6, 4, 2});
    Graph g;
    auto bound = stack.bind(g, false);
    Var f_v = g.constant(randn({2, 4, 4, 8}, 3));
    Var out = adapt(g, f_v, 3, 10, 10, stack, bound);
    for (std::size_t i = 0; i < g.value(out).numel(); ++i) REQUIRE(g.value(out).at(i) == 0.0);
}

TEST_CASE("1x1 grid adapter equals a matrix-vector product") {
    // 2 -> 3 channels on a single spatial cell, checked against a brute-force dot
    AdapterStack stack = AdapterStack::zeros(2, {3, 3, 3, 3});
    stack.weight[0] = DTensor({2, 3}, {1.0, 2.0, -1.0, 0.5, -0.25, 4.0});
    stack.bias[0] = DTensor({3}, {0.1, -0.2, 0.3});
    DTensor f_v({1, 1, 1, 2}, {3.0, -2.0});
    Graph g;
    auto bound = stack.bind(g, false);
    Var out = adapt(g, g.constant(f_v), 1, 1, 1, stack, bound);
    double expect[3];
    for (int j = 0; j < 3; ++j) {
        expect[j] = stack.bias[0].at(static_cast<std::size_t>(j));
        for (int i = 0; i < 2; ++i) expect[j] += f_v.at(static_cast<std::size_t>(i)) * stack.weight[0](i, j);
    }
    for (int j = 0; j < 3; ++j) REQUIRE(g.value(out).at(static_cast<std::size_t>(j)) == Catch::Approx(expect[j]));
}

TEST_CASE("adapter rejects mismatched patch width and bad level") {
    AdapterStack stack = AdapterStack::zeros(8, {6, 6, 4, 2});
    Graph g;
    auto bound = stack.bind(g, false);
    Var wrong = g.constant(randn({1, 4, 4, 7}, 5));
    REQUIRE_THROWS_AS(adapt(g, wrong, 1, 4, 4, stack, bound), std::invalid_argument);
    Var ok = g.constant(randn({1, 4, 4, 8}, 6));
    REQUIRE_THROWS_AS(adapt(g, ok, 5, 4, 4, stack, bound), std::out_of_range);
}

TEST_CASE("inject is the elementwise sum") {
    Graph g;
    DTensor fu = randn({1, 2, 2, 3}, 7);
    DTensor ad = randn({1, 2, 2, 3}, 8);
    Var out = inject(g, g.constant(fu), g.constant(ad));
    for (std::size_t i = 0; i < fu.numel(); ++i)
        REQUIRE(g.value(out).at(i) == fu.at(i) + ad.at(i));
    // additive identities
    DTensor zero(fu.shape());
    Var with_zero = inject(g, g.constant(fu), g.constant(zero));
    REQUIRE(testutil::bitwise_equal(g.value(with_zero), fu));
    Var onto_zero = inject(g, g.constant(zero), g.constant(ad));
    REQUIRE(testutil::bitwise_equal(g.value(onto_zero), ad));
    REQUIRE_THROWS_AS(inject(g, g.constant(fu), g.constant(randn({1, 2, 2, 2}, 9))),
                      std::invalid_argument);
}

TEST_CASE("injection addition associates to floating tolerance") {
    Graph g;
    DTensor f = randn({1, 2, 2, 3}, 10);
    DTensor a = randn({1, 2, 2, 3}, 11);
    DTensor b = randn({1, 2, 2, 3}, 12);
    DTensor ab(a.shape());
    for (std::size_t i = 0; i < ab.numel(); ++i) ab.at(i) = a.at(i) + b.at(i);
    Var lhs = inject(g, g.constant(f), g.constant(ab));
    Var rhs = inject(g, inject(g, g.constant(f), g.constant(a)), g.constant(b));
    REQUIRE(testutil::max_abs_diff(g.value(lhs), g.value(rhs)) < 1e-6);
}

TEST_CASE("analytic adapter gradients match finite differences") {
    // small instance: d_v = 2, c = 3
    AdapterStack stack = AdapterStack::init(2, {3, 3, 3, 3}, 21);
    DTensor f_v = randn({1, 2, 2, 2}, 22);
    DTensor f_u = randn({1, 3, 3, 3}, 23);
    DTensor weights = randn({1, 3, 3, 3}, 24);

    Graph g;
    auto bound = stack.bind(g, true);
    Var adapted = adapt(g, g.constant(f_v), 2, 3, 3, stack, bound);
    Var fused = inject(g, g.constant(f_u), adapted);
    Var loss = g.sum(g.mul(fused, g.constant(weights)));
    g.backward(loss);

    auto eval_w = [&](const DTensor& w) {
        AdapterStack s = stack;
        s.weight[1] = w;
        Graph gg;
        auto b = s.bind(gg, false);
        Var ad = adapt(gg, gg.constant(f_v), 2, 3, 3, s, b);
        Var fu = inject(gg, gg.constant(f_u), ad);
        const DTensor& v = gg.value(fu);
        double acc = 0;
        for (std::size_t i = 0; i < v.numel(); ++i) acc += v.at(i) * weights.at(i);
        return acc;
    };
    DTensor fd_w = testutil::fd_gradient(eval_w, stack.weight[1]);
    REQUIRE(testutil::max_rel_error(g.grad(bound.weight[1]), fd_w) < 1e-4);

    auto eval_b = [&](const DTensor& bb) {
        AdapterStack s = stack;
        s.bias[1] = bb;
        Graph gg;
        auto b = s.bind(gg, false);
        Var ad = adapt(gg, gg.constant(f_v), 2, 3, 3, s, b);
        Var fu = inject(gg, gg.constant(f_u), ad);
        const DTensor& v = gg.value(fu);
        double acc = 0;
        for (std::size_t i = 0; i < v.numel(); ++i) acc += v.at(i) * weights.at(i);
        return acc;
    };
    DTensor fd_b = testutil::fd_gradient(eval_b, stack.bias[1]);
    REQUIRE(testutil::max_rel_error(g.grad(bound.bias[1]), fd_b) < 1e-4);
}

TEST_CASE("gradient reaches adapters from a generic downstream loss") {
    AdapterStack stack = AdapterStack::init(4, {5, 5, 5, 5}, 31);
    DTensor f_v = randn({1, 3, 3, 4}, 32);
    DTensor f_u = randn({1, 4, 4, 5}, 33);
    Graph g;
    auto bound = stack.bind(g, true);
    Var fused = inject(g, g.constant(f_u), adapt(g, g.constant(f_v), 1, 4, 4, stack, bound));
    g.backward(g.sum(g.mul(fused, fused)));
    double norm = 0;
    for (std::size_t i = 0; i < g.grad(bound.weight[0]).numel(); ++i)
        norm += std::abs(g.grad(bound.weight[0]).at(i));
    REQUIRE(norm > 0.0);
}

TEST_CASE("interpolation adapter matches channel/spatial resampling") {
    DTensor f_v = randn({1, 4, 4, 8}, 41);
    DTensor got = adapt_interpolate(f_v, 6, 6, 5);
    REQUIRE(got.shape() == std::vector<int>{1, 6, 6, 5});
    DTensor want = channel_resample(bilinear_resize(f_v, 6, 6), 5);
    REQUIRE(testutil::bitwise_equal(got, want));
}
