#pragma once

#include <array>
#include <stdexcept>

#include "sketchfuse/autograd.hpp"
#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

constexpr int kAggregationGrid = 60;

// One per-level residual block: channel projection to d_agg, then two
// conv-normalise-nonlinearity layers with an additive skip from the projection.
struct ResidualBlock {
    int in_channels = 0;
    int d_agg = 0;
    DTensor proj_w;  // [c_in, d_agg]
    DTensor proj_b;  // [d_agg]
    DTensor conv1_w; // [k,k,d_agg,d_agg]
    DTensor conv1_b;
    DTensor norm1_gain, norm1_bias;
    DTensor conv2_w;
    DTensor conv2_b;
    DTensor norm2_gain, norm2_bias;

    static ResidualBlock init(int in_channels, int d_agg, int kernel, std::uint64_t seed) {
        ResidualBlock blk;
        blk.in_channels = in_channels;
        blk.d_agg = d_agg;
        blk.proj_w = randn({in_channels, d_agg}, seed ^ 0xb10c0ull, std::sqrt(1.0 / in_channels));
        blk.proj_b = DTensor({d_agg});
        const double conv_std = std::sqrt(1.0 / (kernel * kernel * d_agg));
        blk.conv1_w = randn({kernel, kernel, d_agg, d_agg}, seed ^ 0xb10c1ull, conv_std);
        blk.conv1_b = DTensor({d_agg});
        blk.norm1_gain = DTensor::full({d_agg}, 1.0);
        blk.norm1_bias = DTensor({d_agg});
        blk.conv2_w = randn({kernel, kernel, d_agg, d_agg}, seed ^ 0xb10c2ull, conv_std);
        blk.conv2_b = DTensor({d_agg});
        blk.norm2_gain = DTensor::full({d_agg}, 1.0);
        blk.norm2_bias = DTensor({d_agg});
        return blk;
    }

    struct Bound {
        Var proj_w, proj_b, conv1_w, conv1_b, norm1_gain, norm1_bias;
        Var conv2_w, conv2_b, norm2_gain, norm2_bias;
    };

    Bound bind(Graph& g, bool trainable = true) const {
        return Bound{g.input(proj_w, trainable),  g.input(proj_b, trainable),
                     g.input(conv1_w, trainable), g.input(conv1_b, trainable),
                     g.input(norm1_gain, trainable), g.input(norm1_bias, trainable),
                     g.input(conv2_w, trainable), g.input(conv2_b, trainable),
                     g.input(norm2_gain, trainable), g.input(norm2_bias, trainable)};
    }
};

// Learnable branch weights for the three aggregated levels.
struct BranchWeights {
    std::array<DTensor, 3> alpha; // each [1]

    static BranchWeights init(double value = 1.0) {
        BranchWeights w;
        for (auto& a : w.alpha) a = DTensor({1}, {value});
        return w;
    }

    struct Bound {
        std::array<Var, 3> alpha;
    };

    Bound bind(Graph& g, bool trainable = true) const {
        Bound b;
        for (int n = 0; n < 3; ++n)
            b.alpha[static_cast<std::size_t>(n)] = g.input(alpha[static_cast<std::size_t>(n)], trainable);
        return b;
    }
};

// Three level-specific residual blocks mapping injected UNet features to the
// common 60x60xd_agg space.
struct Aggregator {
    int d_agg = 0;
    int kernel = 3;
    std::array<ResidualBlock, 3> blocks;
    BranchWeights weights;

    static Aggregator init(const std::array<int, 3>& level_channels, int d_agg, int kernel,
                           double alpha_init, std::uint64_t seed) {
        Aggregator a;
        a.d_agg = d_agg;
        a.kernel = kernel;
        for (int n = 0; n < 3; ++n)
            a.blocks[static_cast<std::size_t>(n)] =
                ResidualBlock::init(level_channels[static_cast<std::size_t>(n)], d_agg, kernel,
                                    seed ^ (0xa660ull + static_cast<std::uint64_t>(n)));
        a.weights = BranchWeights::init(alpha_init);
        return a;
    }

    struct Bound {
        std::array<ResidualBlock::Bound, 3> blocks;
        BranchWeights::Bound weights;
    };

    Bound bind(Graph& g, bool blocks_trainable = true, bool weights_trainable = true) const {
        Bound b;
        for (int n = 0; n < 3; ++n)
            b.blocks[static_cast<std::size_t>(n)] =
                blocks[static_cast<std::size_t>(n)].bind(g, blocks_trainable);
        b.weights = weights.bind(g, weights_trainable);
        return b;
    }
};

inline Var conv1x1(Graph& g, Var x, Var w, Var b) {
    const DTensor& vx = g.value(x);
    const int n = vx.dim(0), h = vx.dim(1), ww = vx.dim(2), ci = vx.dim(3);
    const int co = g.value(w).dim(1);
    Var x2 = g.reshape(x, {n * h * ww, ci});
    Var y2 = g.add_bias(g.matmul(x2, w), b);
    return g.reshape(y2, {n, h, ww, co});
}

// f_hat: [B,h,w,c_n] -> [B,60,60,d_agg]; level 4 is not aggregated.
inline Var aggregate_level(Graph& g, Var f_hat, int level, const ResidualBlock::Bound& blk) {
    if (level < 1 || level > 3)
        throw std::out_of_range("aggregate_level: only levels 1..3 are aggregated");
    Var x = g.bilinear(f_hat, kAggregationGrid, kAggregationGrid);
    Var skip = conv1x1(g, x, blk.proj_w, blk.proj_b);
    Var h = g.conv2d(skip, blk.conv1_w);
    h = g.add_bias(h, blk.conv1_b);
    h = g.layer_norm_lastdim(h, blk.norm1_gain, blk.norm1_bias);
    h = g.relu(h);
    h = g.conv2d(h, blk.conv2_w);
    h = g.add_bias(h, blk.conv2_b);
    h = g.layer_norm_lastdim(h, blk.norm2_gain, blk.norm2_bias);
    h = g.relu(h);
    return g.add(skip, h);
}

// Weighted summation over the three aggregated grids.
inline Var fuse(Graph& g, const std::array<Var, 3>& grids, const BranchWeights::Bound& weights) {
    Var acc = g.scalar_mul(weights.alpha[0], grids[0]);
    for (int n = 1; n < 3; ++n)
        acc = g.add(acc, g.scalar_mul(weights.alpha[static_cast<std::size_t>(n)],
                                      grids[static_cast<std::size_t>(n)]));
    return acc;
}

} // namespace sketchfuse
