#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "sketchfuse/aggregator.hpp"
#include "sketchfuse/autograd.hpp"
#include "sketchfuse/backbone.hpp"
#include "sketchfuse/injection.hpp"
#include "sketchfuse/schedule.hpp"

namespace sketchfuse {

// Structural toggles mirroring the ablation rows, plus the internal
// injection-off switch used by the neutrality check.
struct ExtractorToggles {
    bool no_aggregation_net = false;
    bool frozen_equal_weights = false;
    bool no_1d_convs = false;
    bool inject_level4 = true;
    bool injection_enabled = true;
};

struct ExtractorSettings {
    int image_size = 480;
    int timestep = 195;
    int d_agg = 768;
    int resblock_kernel = 3;
    int schedule_steps = 1000;
    double alpha_init = 1.0;
    std::uint64_t seed = 0;
    std::string prompt; // default null prompt
    ExtractorToggles toggles;
};

struct RawFeatures {
    UNetFeatureSet unet;
    PatchFeatureGrid patches;
};

struct NamedParam {
    std::string name;
    DTensor* tensor;
};

// The learnable feature extractor: frozen backbone, per-level channel
// adapters, per-level residual aggregation, learnable branch weights.
// Output is the fused [B,60,60,d_agg] map all task heads consume.
class FeatureExtractor {
public:
    FeatureExtractor(Backbone* backbone, const ExtractorSettings& s)
        : backbone_(backbone),
          settings_(s),
          schedule_(build_noise_schedule(s.schedule_steps)),
          prompt_(PromptTokens::from_string(s.prompt)) {
        if (s.image_size % 32 != 0)
            throw std::invalid_argument("feature extractor: image size must be divisible by 32");
        if (s.timestep < 1 || s.timestep > s.schedule_steps)
            throw std::invalid_argument("feature extractor: timestep outside schedule");
        const auto uc = backbone->unet_channels();
        adapters_ = AdapterStack::init(backbone->patch_dim(), uc, s.seed ^ 0xadull);
        aggregator_ = Aggregator::init({uc[0], uc[1], uc[2]}, s.d_agg, s.resblock_kernel,
                                       s.alpha_init, s.seed ^ 0xa6ull);
    }

    Backbone& backbone() { return *backbone_; }
    const ExtractorSettings& settings() const { return settings_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    AdapterStack& adapters() { return adapters_; }
    Aggregator& aggregator() { return aggregator_; }
    const Aggregator& aggregator() const { return aggregator_; }

    void zero_init_adapters() {
        adapters_ = AdapterStack::zeros(backbone_->patch_dim(), backbone_->unet_channels());
    }

    // Frozen single pass: encode, forward-noise with the run's seed, tap.
    RawFeatures extract_raw(const ImageBatch& images) {
        LatentBatch z0 = backbone_->encode_latent(images);
        DTensor eps = randn(z0.data.shape(), settings_.seed ^ 0xe9511ull);
        LatentBatch zt{add_noise(z0.data, settings_.timestep, eps, schedule_)};
        UNetFeatureSet unet =
            backbone_->extract_unet_features(zt, settings_.timestep, prompt_, nullptr);
        PatchFeatureGrid patches = backbone_->extract_patch_features(images);
        return RawFeatures{std::move(unet), std::move(patches)};
    }

    // Same pass, but with the adapters participating through the injection
    // hook so the returned taps are already CLIP-enhanced.
    UNetFeatureSet extract_injected(const ImageBatch& images) {
        LatentBatch z0 = backbone_->encode_latent(images);
        DTensor eps = randn(z0.data.shape(), settings_.seed ^ 0xe9511ull);
        LatentBatch zt{add_noise(z0.data, settings_.timestep, eps, schedule_)};
        PatchFeatureGrid patches = backbone_->extract_patch_features(images);
        InjectionHook hook = [this, &patches](int level, const DTensor& raw) {
            return inject_level_plain(raw, patches, level);
        };
        return backbone_->extract_unet_features(zt, settings_.timestep, prompt_, &hook);
    }

    struct Bound {
        AdapterStack::Bound adapters;
        Aggregator::Bound aggregator;
    };

    Bound bind(Graph& g, bool trainable = true) const {
        const auto& t = settings_.toggles;
        Bound b;
        b.adapters = adapters_.bind(g, trainable && t.injection_enabled && !t.no_1d_convs);
        b.aggregator = aggregator_.bind(g, trainable && !t.no_aggregation_net,
                                        trainable && !t.frozen_equal_weights);
        return b;
    }

    // Differentiable fused map from tapped features. Injection happens here
    // (outside the frozen pass); for the mock backbone this is bitwise
    // equivalent to the in-pass hook route, which a test asserts.
    Var fused_from_raw(Graph& g, const RawFeatures& raw, const Bound& bound) const {
        const auto& t = settings_.toggles;
        Var f_v{};
        if (t.injection_enabled && !t.no_1d_convs) f_v = g.constant(raw.patches.data);
        std::array<Var, 3> aggregated;
        for (int n = 1; n <= 3; ++n) {
            const DTensor& raw_level = raw.unet.level(n);
            Var f_u = g.constant(raw_level);
            Var f_hat = f_u;
            if (t.injection_enabled) {
                if (t.no_1d_convs) {
                    DTensor add = adapt_interpolate(raw.patches.data, raw_level.dim(1),
                                                    raw_level.dim(2), raw_level.dim(3));
                    f_hat = g.add(f_u, g.constant(std::move(add)));
                } else {
                    Var adapted = adapt(g, f_v, n, raw_level.dim(1), raw_level.dim(2), adapters_,
                                        bound.adapters);
                    f_hat = inject(g, f_u, adapted);
                }
            }
            if (t.no_aggregation_net) {
                Var resized = g.bilinear(f_hat, kAggregationGrid, kAggregationGrid);
                aggregated[static_cast<std::size_t>(n - 1)] =
                    g.channel_resample_op(resized, settings_.d_agg);
            } else {
                aggregated[static_cast<std::size_t>(n - 1)] = aggregate_level(
                    g, f_hat, n, bound.aggregator.blocks[static_cast<std::size_t>(n - 1)]);
            }
        }
        return fuse(g, aggregated, bound.aggregator.weights);
    }

    // Convenience non-training forward: [B,60,60,d_agg].
    DTensor fused_features(const ImageBatch& images) {
        RawFeatures raw = extract_raw(images);
        Graph g;
        Bound b = bind(g, false);
        return g.value(fused_from_raw(g, raw, b));
    }

    // Trainable parameters under the current toggles.
    std::vector<NamedParam> trainable_params() {
        const auto& t = settings_.toggles;
        std::vector<NamedParam> out;
        if (t.injection_enabled && !t.no_1d_convs) {
            for (int n = 0; n < 4; ++n) {
                out.push_back({"adapter" + std::to_string(n + 1) + ".weight",
                               &adapters_.weight[static_cast<std::size_t>(n)]});
                out.push_back({"adapter" + std::to_string(n + 1) + ".bias",
                               &adapters_.bias[static_cast<std::size_t>(n)]});
            }
        }
        if (!t.no_aggregation_net) {
            for (int n = 0; n < 3; ++n) {
                auto& blk = aggregator_.blocks[static_cast<std::size_t>(n)];
                const std::string p = "agg" + std::to_string(n + 1) + ".";
                out.push_back({p + "proj_w", &blk.proj_w});
                out.push_back({p + "proj_b", &blk.proj_b});
                out.push_back({p + "conv1_w", &blk.conv1_w});
                out.push_back({p + "conv1_b", &blk.conv1_b});
                out.push_back({p + "norm1_gain", &blk.norm1_gain});
                out.push_back({p + "norm1_bias", &blk.norm1_bias});
                out.push_back({p + "conv2_w", &blk.conv2_w});
                out.push_back({p + "conv2_b", &blk.conv2_b});
                out.push_back({p + "norm2_gain", &blk.norm2_gain});
                out.push_back({p + "norm2_bias", &blk.norm2_bias});
            }
        }
        if (!t.frozen_equal_weights) {
            for (int n = 0; n < 3; ++n)
                out.push_back({"alpha" + std::to_string(n + 1),
                               &aggregator_.weights.alpha[static_cast<std::size_t>(n)]});
        }
        return out;
    }

    // Bound graph vars aligned one-to-one with trainable_params().
    std::vector<Var> trainable_vars(const Bound& b) const {
        const auto& t = settings_.toggles;
        std::vector<Var> out;
        if (t.injection_enabled && !t.no_1d_convs) {
            for (int n = 0; n < 4; ++n) {
                out.push_back(b.adapters.weight[static_cast<std::size_t>(n)]);
                out.push_back(b.adapters.bias[static_cast<std::size_t>(n)]);
            }
        }
        if (!t.no_aggregation_net) {
            for (int n = 0; n < 3; ++n) {
                const auto& blk = b.aggregator.blocks[static_cast<std::size_t>(n)];
                out.push_back(blk.proj_w);
                out.push_back(blk.proj_b);
                out.push_back(blk.conv1_w);
                out.push_back(blk.conv1_b);
                out.push_back(blk.norm1_gain);
                out.push_back(blk.norm1_bias);
                out.push_back(blk.conv2_w);
                out.push_back(blk.conv2_b);
                out.push_back(blk.norm2_gain);
                out.push_back(blk.norm2_bias);
            }
        }
        if (!t.frozen_equal_weights) {
            for (int n = 0; n < 3; ++n)
                out.push_back(b.aggregator.weights.alpha[static_cast<std::size_t>(n)]);
        }
        return out;
    }

    // All module parameters regardless of toggles (checkpoint surface).
    std::vector<NamedParam> all_params() {
        ExtractorToggles saved = settings_.toggles;
        settings_.toggles = ExtractorToggles{};
        auto out = trainable_params();
        settings_.toggles = saved;
        return out;
    }

private:
    // Plain-tensor injection used by the in-pass hook. Runs the same graph
    // code as the training path so the two routes agree bitwise.
    DTensor inject_level_plain(const DTensor& raw, const PatchFeatureGrid& patches, int level) const {
        const auto& t = settings_.toggles;
        if (!t.injection_enabled) return raw;
        if (level == 4 && !t.inject_level4) return raw;
        if (t.no_1d_convs) {
            DTensor add = adapt_interpolate(patches.data, raw.dim(1), raw.dim(2), raw.dim(3));
            DTensor out = raw;
            for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += add.at(i);
            return out;
        }
        Graph g;
        AdapterStack::Bound b = adapters_.bind(g, false);
        Var f_v = g.constant(patches.data);
        Var adapted = adapt(g, f_v, level, raw.dim(1), raw.dim(2), adapters_, b);
        Var out = inject(g, g.constant(raw), adapted);
        return g.value(out);
    }

    Backbone* backbone_;
    ExtractorSettings settings_;
    NoiseSchedule schedule_;
    PromptTokens prompt_;
    AdapterStack adapters_;
    Aggregator aggregator_;
};

} // namespace sketchfuse
