#include <catch2/catch_amalgamated.hpp>

#include "sketchfuse/autograd.hpp"
#include "testutil.hpp"

using namespace sketchfuse;

namespace {

// Reduce an op output to a scalar with fixed random weights, then compare the
// analytic parameter gradient against central finite differences.
void check_op_gradient(const std::function<Var(Graph&, Var)>& op, const DTensor& theta,
                       double tol = 1e-5, double step = 1e-5) {
    DTensor weights;
    {
        Graph g;
        Var out = op(g, g.constant(theta));
        weights = randn(g.value(out).shape(), 777);
    }
    auto eval = [&](const DTensor& x) {
        Graph g;
        Var out = op(g, g.constant(x));
        Graph g2;
        double acc = 0;
        const DTensor& v = g.value(out);
        for (std::size_t i = 0; i < v.numel(); ++i) acc += v.at(i) * weights.at(i);
        (void)g2;
        return acc;
    };
    Graph g;
    Var p = g.param(theta);
    Var out = op(g, p);
    Var loss = g.sum(g.mul(out, g.constant(weights)));
    g.backward(loss);
    DTensor fd = testutil::fd_gradient(eval, theta, step);
    REQUIRE(testutil::max_rel_error(g.grad(p), fd) < tol);
}

} // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    DTensor x = randn({3, 4}, 1);
    DTensor other = randn({3, 4}, 2);
    check_op_gradient([&](Graph& g, Var p) { return g.add(p, g.constant(other)); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.sub(g.constant(other), p); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.mul(p, g.constant(other)); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.mul(p, p); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.scale(p, -2.5); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.add_const(p, 3.0); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.sigmoid(p); }, x);
}

TEST_CASE("relu gradient away from the kink") {
    DTensor x = randn({4, 4}, 3);
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (std::abs(x.at(i)) < 0.05) x.at(i) = 0.2; // keep FD away from the kink
    check_op_gradient([](Graph& g, Var p) { return g.relu(p); }, x);
}

TEST_CASE("scalar_mul routes gradient to both operands") {
    DTensor s({1}, {1.3});
    DTensor x = randn({2, 3}, 5);
    check_op_gradient([&](Graph& g, Var p) { return g.scalar_mul(g.constant(s), p); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.scalar_mul(p, g.constant(x)); }, s);
}

TEST_CASE("matmul and transpose gradients") {
    DTensor a = randn({3, 4}, 7);
    DTensor b = randn({4, 5}, 8);
    check_op_gradient([&](Graph& g, Var p) { return g.matmul(p, g.constant(b)); }, a);
    check_op_gradient([&](Graph& g, Var p) { return g.matmul(g.constant(a), p); }, b);
    check_op_gradient([](Graph& g, Var p) { return g.transpose2d(p); }, a);
}

TEST_CASE("bias, reshape and row selection gradients") {
    DTensor x = randn({4, 3}, 9);
    DTensor bias = randn({3}, 10);
    check_op_gradient([&](Graph& g, Var p) { return g.add_bias(p, g.constant(bias)); }, x);
    check_op_gradient([&](Graph& g, Var p) { return g.add_bias(g.constant(x), p); }, bias);
    check_op_gradient([](Graph& g, Var p) { return g.reshape(p, {3, 4}); }, x);
    check_op_gradient([](Graph& g, Var p) { return g.select_rows(p, {2, 0, 2}); }, x);
}

TEST_CASE("conv2d gradients (3x3 and 1x1)") {
    DTensor x = randn({2, 4, 5, 3}, 11, 0.7);
    DTensor w3 = randn({3, 3, 3, 2}, 12, 0.5);
    DTensor w1 = randn({1, 1, 3, 4}, 13, 0.5);
    check_op_gradient([&](Graph& g, Var p) { return g.conv2d(p, g.constant(w3)); }, x, 1e-4);
    check_op_gradient([&](Graph& g, Var p) { return g.conv2d(g.constant(x), p); }, w3, 1e-4);
    check_op_gradient([&](Graph& g, Var p) { return g.conv2d(p, g.constant(w1)); }, x, 1e-4);
    REQUIRE_THROWS_AS([&] {
        Graph g;
        g.conv2d(g.constant(x), g.constant(randn({2, 2, 3, 2}, 1)));
    }(), std::invalid_argument);
}

TEST_CASE("bilinear and channel resample gradients") {
    DTensor x = randn({1, 4, 4, 2}, 14);
    check_op_gradient([](Graph& g, Var p) { return g.bilinear(p, 7, 9); }, x, 1e-4);
    check_op_gradient([](Graph& g, Var p) { return g.bilinear(p, 2, 3); }, x, 1e-4);
    check_op_gradient([](Graph& g, Var p) { return g.channel_resample_op(p, 5); }, x, 1e-4);
}

TEST_CASE("layer norm gradients") {
    DTensor x = randn({3, 4}, 15);
    DTensor gain = randn({4}, 16, 0.5);
    for (std::size_t i = 0; i < gain.numel(); ++i) gain.at(i) += 1.0;
    DTensor bias = randn({4}, 17, 0.3);
    check_op_gradient(
        [&](Graph& g, Var p) { return g.layer_norm_lastdim(p, g.constant(gain), g.constant(bias)); },
        x, 1e-4);
    check_op_gradient(
        [&](Graph& g, Var p) { return g.layer_norm_lastdim(g.constant(x), p, g.constant(bias)); },
        gain, 1e-4);
    check_op_gradient(
        [&](Graph& g, Var p) { return g.layer_norm_lastdim(g.constant(x), g.constant(gain), p); },
        bias, 1e-4);
}

TEST_CASE("l2 normalize, distances, pooling gradients") {
    DTensor x = randn({3, 5}, 18);
    DTensor y = randn({3, 5}, 19);
    check_op_gradient([](Graph& g, Var p) { return g.l2_normalize_rows(p); }, x, 1e-4);
    check_op_gradient([&](Graph& g, Var p) { return g.rows_l2_distance(p, g.constant(y)); }, x, 1e-4);
    check_op_gradient([&](Graph& g, Var p) { return g.rows_l2_distance(g.constant(x), p); }, y, 1e-4);
    DTensor grid = randn({2, 3, 3, 4}, 20);
    check_op_gradient([](Graph& g, Var p) { return g.global_max_pool(p); }, grid, 1e-4);
}

TEST_CASE("softmax, cross-entropy and bce gradients") {
    DTensor logits = randn({4, 6}, 21);
    check_op_gradient([](Graph& g, Var p) { return g.softmax_rows(p); }, logits, 1e-4);
    check_op_gradient([](Graph& g, Var p) { return g.ce_rows(p, {1, 0, 5, 3}); }, logits, 1e-4);
    DTensor probs = rand_uniform({8}, 22, 0.05, 0.95);
    DTensor target({8});
    for (std::size_t i = 0; i < 8; ++i) target.at(i) = i % 2 ? 1.0 : 0.0;
    check_op_gradient([&](Graph& g, Var p) { return g.bce_mean(p, target); }, probs, 1e-4);
}

TEST_CASE("global max pool picks first maximum deterministically") {
    DTensor x({1, 2, 2, 1}, {3.0, 3.0, 1.0, 0.0});
    Graph g;
    Var p = g.param(x);
    Var pooled = g.global_max_pool(p);
    REQUIRE(g.value(pooled)(0, 0) == 3.0);
    g.backward(g.sum(pooled));
    REQUIRE(g.grad(p).at(0) == 1.0);
    REQUIRE(g.grad(p).at(1) == 0.0);
}

TEST_CASE("graph rejects non-scalar backward and shape mismatches") {
    Graph g;
    Var a = g.param(randn({2, 2}, 1));
    REQUIRE_THROWS_AS(g.backward(a), std::invalid_argument);
    REQUIRE_THROWS_AS(g.add(a, g.constant(randn({2, 3}, 2))), std::invalid_argument);
    REQUIRE_THROWS_AS(g.ce_rows(a, {0, 5}), std::out_of_range);
}
