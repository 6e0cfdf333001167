#pragma once

#include <array>
#include <stdexcept>

#include "sketchfuse/autograd.hpp"
#include "sketchfuse/backbone.hpp"
#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// Per-level channel adapters C(.): a 1D (across-channel, per spatial location)
// convolution mapping d_v -> c_n, applied after bilinear alignment of the
// patch grid to the level's spatial dims. f_hat_u^n = f_u^n + C(f_v).
struct AdapterStack {
    int patch_dim = 0;
    std::array<int, 4> channels = {};
    std::array<DTensor, 4> weight; // [d_v, c_n]
    std::array<DTensor, 4> bias;   // [c_n]

    static AdapterStack init(int patch_dim, const std::array<int, 4>& channels, std::uint64_t seed) {
        AdapterStack s;
        s.patch_dim = patch_dim;
        s.channels = channels;
        for (int n = 0; n < 4; ++n) {
            // weights ~ N(0, 1/d_v), bias 0
            s.weight[static_cast<std::size_t>(n)] =
                randn({patch_dim, channels[static_cast<std::size_t>(n)]},
                      seed ^ (0xadA0ull + static_cast<std::uint64_t>(n)), std::sqrt(1.0 / patch_dim));
            s.bias[static_cast<std::size_t>(n)] = DTensor({channels[static_cast<std::size_t>(n)]});
        }
        return s;
    }

    static AdapterStack zeros(int patch_dim, const std::array<int, 4>& channels) {
        AdapterStack s;
        s.patch_dim = patch_dim;
        s.channels = channels;
        for (int n = 0; n < 4; ++n) {
            s.weight[static_cast<std::size_t>(n)] =
                DTensor({patch_dim, channels[static_cast<std::size_t>(n)]});
            s.bias[static_cast<std::size_t>(n)] = DTensor({channels[static_cast<std::size_t>(n)]});
        }
        return s;
    }

    struct Bound {
        std::array<Var, 4> weight;
        std::array<Var, 4> bias;
    };

    Bound bind(Graph& g, bool trainable = true) const {
        Bound b;
        for (int n = 0; n < 4; ++n) {
            b.weight[static_cast<std::size_t>(n)] =
                g.input(weight[static_cast<std::size_t>(n)], trainable);
            b.bias[static_cast<std::size_t>(n)] = g.input(bias[static_cast<std::size_t>(n)], trainable);
        }
        return b;
    }
};

// f_v: [B,g,g,d_v] -> [B,h,w,c_n]. Bilinear spatial alignment, then the
// level's across-channel convolution.
inline Var adapt(Graph& g, Var f_v, int level, int target_h, int target_w,
                 const AdapterStack& stack, const AdapterStack::Bound& bound) {
    if (level < 1 || level > 4) throw std::out_of_range("adapt: level must be 1..4");
    const DTensor& v = g.value(f_v);
    if (v.rank() != 4 || v.dim(3) != stack.patch_dim)
        throw std::invalid_argument("adapt: patch width does not match adapter");
    const int b = v.dim(0);
    const int cn = stack.channels[static_cast<std::size_t>(level - 1)];
    Var x = g.bilinear(f_v, target_h, target_w);
    Var x2 = g.reshape(x, {b * target_h * target_w, stack.patch_dim});
    Var y2 = g.matmul(x2, bound.weight[static_cast<std::size_t>(level - 1)]);
    y2 = g.add_bias(y2, bound.bias[static_cast<std::size_t>(level - 1)]);
    return g.reshape(y2, {b, target_h, target_w, cn});
}

// Elementwise sum; the result replaces the tapped feature downstream.
inline Var inject(Graph& g, Var f_u, Var adapted) {
    if (!g.value(f_u).same_shape(g.value(adapted)))
        throw std::invalid_argument("inject: shape mismatch");
    return g.add(f_u, adapted);
}

// Non-learnable stand-in for the "w/o 1D convolutions" ablation: bilinear
// spatial alignment plus linear resampling across the channel axis.
inline DTensor adapt_interpolate(const DTensor& f_v, int target_h, int target_w, int out_c) {
    return channel_resample(bilinear_resize(f_v, target_h, target_w), out_c);
}

} // namespace sketchfuse
