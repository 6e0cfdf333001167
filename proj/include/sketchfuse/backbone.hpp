#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchfuse/schedule.hpp"
#include "sketchfuse/serialize.hpp"
#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// --- domain types --------------------------------------------------------

// [B, H, W, 3], values in [0,1], H == W, divisible by 32.
struct ImageBatch {
    DTensor data;

    int batch() const { return data.dim(0); }
    int image_size() const { return data.dim(1); }

    void validate() const {
        if (data.rank() != 4 || data.dim(3) != 3)
            throw std::invalid_argument("image batch: expected [B,H,W,3]");
        if (data.dim(0) < 1) throw std::invalid_argument("image batch: empty batch");
        if (data.dim(1) != data.dim(2))
            throw std::invalid_argument("image batch: images must be square");
        if (data.dim(1) % 32 != 0)
            throw std::invalid_argument("image batch: size must be divisible by 32");
        for (std::size_t i = 0; i < data.numel(); ++i)
            if (!(data.at(i) >= 0.0 && data.at(i) <= 1.0))
                throw std::invalid_argument("image batch: values must lie in [0,1]");
    }
};

// [B, H/8, W/8, c_lat]
struct LatentBatch {
    DTensor data;
};

// Activations tapped from the four skip-connected upsampling layers.
// level 1: [B, H/32, W/32, c1], level 2: [B, H/16, W/16, c2],
// level 3: [B, H/8,  W/8,  c3], level 4: [B, H/8,  W/8,  c4].
struct UNetFeatureSet {
    std::array<DTensor, 4> levels;
    int timestep = 0;

    const DTensor& level(int n) const {
        if (n < 1 || n > 4) throw std::out_of_range("unet feature set: level must be 1..4");
        return levels[static_cast<std::size_t>(n - 1)];
    }
};

// [B, g, g, d_v]
struct PatchFeatureGrid {
    DTensor data;

    int grid() const { return data.dim(1); }
    int width() const { return data.dim(3); }
};

// Deterministic embedding of the conditioning text. Default prompt is null ("").
struct PromptTokens {
    std::string text;
    DTensor embedding; // [L, 16]

    static PromptTokens from_string(const std::string& s) {
        PromptTokens p;
        p.text = s;
        const int len = std::max<int>(1, static_cast<int>(s.size()));
        p.embedding = randn({len, 16}, fnv1a64(s.data(), s.size()) ^ 0x70726f6d7074ull);
        return p;
    }
    static PromptTokens null_prompt() { return from_string(""); }

    std::uint64_t digest() const { return sketchfuse::digest(embedding); }
};

// Receives (level 1..4, tapped feature) inside the forward pass, returns the
// replacement of identical shape.
using InjectionHook = std::function<DTensor(int, const DTensor&)>;

inline std::array<int, 2> unet_level_spatial(int image_size, int level) {
    switch (level) {
        case 1: return {image_size / 32, image_size / 32};
        case 2: return {image_size / 16, image_size / 16};
        case 3: return {image_size / 8, image_size / 8};
        case 4: return {image_size / 8, image_size / 8};
        default: throw std::out_of_range("unet level must be 1..4");
    }
}

// --- backbone interface ----------------------------------------------------

inline const std::vector<std::string>& known_sd_variants() {
    static const std::vector<std::string> v = {"v1.4", "v1.5", "v2.1"};
    return v;
}
inline const std::vector<std::string>& known_clip_variants() {
    static const std::vector<std::string> v = {"ViT-B/16", "ViT-B/32", "ViT-L/14"};
    return v;
}

struct BackboneCallCounts {
    std::uint64_t encode = 0;
    std::uint64_t unet = 0;
    std::uint64_t patch = 0;

    std::uint64_t total() const { return encode + unet + patch; }
};

class Backbone {
public:
    virtual ~Backbone() = default;

    virtual LatentBatch encode_latent(const ImageBatch& images) = 0;
    virtual UNetFeatureSet extract_unet_features(const LatentBatch& zt, int t,
                                                 const PromptTokens& prompt,
                                                 const InjectionHook* hook) = 0;
    virtual PatchFeatureGrid extract_patch_features(const ImageBatch& images) = 0;

    virtual int latent_channels() const = 0;
    virtual std::array<int, 4> unet_channels() const = 0;
    virtual int patch_grid() const = 0;
    virtual int patch_dim() const = 0;
    virtual int max_timestep() const = 0;
    virtual std::uint64_t parameter_digest() const = 0;
    virtual std::string describe() const = 0;

    const BackboneCallCounts& call_counts() const { return counts_; }
    void reset_call_counts() { counts_ = {}; }

protected:
    BackboneCallCounts counts_;
};

// --- deterministic mock -----------------------------------------------------

// Features are fixed-seed random projections of block-averaged input patches:
// input-sensitive, deterministic, and frozen by construction.
struct MockBackboneConfig {
    std::uint64_t seed = 7;
    int latent_channels = 4;
    std::array<int, 4> unet_channels = {1280, 1280, 640, 320};
    int patch_grid = 16;  // ViT-L/14 at 224 input
    int patch_dim = 1024;
    int patch_size = 14;
    int max_timestep = 1000;
};

class MockBackbone : public Backbone {
public:
    explicit MockBackbone(const MockBackboneConfig& cfg = {}) : cfg_(cfg) {
        latent_w_ = randn({3, cfg.latent_channels}, cfg.seed ^ 0x1a7eull, std::sqrt(1.0 / 3.0));
        latent_b_ = randn({cfg.latent_channels}, cfg.seed ^ 0x1a7full, 0.1);
        for (int n = 0; n < 4; ++n) {
            const int cn = cfg.unet_channels[static_cast<std::size_t>(n)];
            level_w_[static_cast<std::size_t>(n)] =
                randn({cfg.latent_channels, cn}, cfg.seed ^ (0x11feull + static_cast<std::uint64_t>(n)),
                      std::sqrt(1.0 / cfg.latent_channels));
            level_b_[static_cast<std::size_t>(n)] =
                randn({cn}, cfg.seed ^ (0x22feull + static_cast<std::uint64_t>(n)), 0.1);
        }
        patch_w_ = randn({3, cfg.patch_dim}, cfg.seed ^ 0x9a7cull, std::sqrt(1.0 / 3.0));
        patch_b_ = randn({cfg.patch_dim}, cfg.seed ^ 0x9a7dull, 0.1);
    }

    LatentBatch encode_latent(const ImageBatch& images) override {
        images.validate();
        ++counts_.encode;
        const int hs = images.image_size() / 8;
        DTensor pooled = avg_pool_blocks(images.data, hs, hs); // [B,H/8,W/8,3]
        return LatentBatch{project_tanh(pooled, latent_w_, latent_b_)};
    }

    UNetFeatureSet extract_unet_features(const LatentBatch& zt, int t,
                                         const PromptTokens& prompt,
                                         const InjectionHook* hook) override {
        if (zt.data.rank() != 4 || zt.data.dim(3) != cfg_.latent_channels)
            throw std::invalid_argument("mock backbone: latent shape mismatch");
        if (t < 1 || t > cfg_.max_timestep)
            throw std::out_of_range("mock backbone: t outside schedule range");
        ++counts_.unet;
        const int h8 = zt.data.dim(1), w8 = zt.data.dim(2);
        if (h8 % 4 != 0 || w8 % 4 != 0)
            throw std::invalid_argument("mock backbone: latent dims must be divisible by 4");
        const double phase = static_cast<double>(prompt.digest() % 1024ull) / 1024.0;
        UNetFeatureSet out;
        out.timestep = t;
        const std::array<int, 4> factor = {4, 2, 1, 1};
        for (int n = 0; n < 4; ++n) {
            DTensor pooled = avg_pool_blocks(zt.data, h8 / factor[static_cast<std::size_t>(n)],
                                             w8 / factor[static_cast<std::size_t>(n)]);
            DTensor f = project_tanh(pooled, level_w_[static_cast<std::size_t>(n)],
                                     level_b_[static_cast<std::size_t>(n)]);
            const double gain =
                1.0 + 0.25 * std::sin(0.013 * t + 1.7 * (n + 1) + 6.28318530717958648 * phase);
            for (std::size_t i = 0; i < f.numel(); ++i) f.at(i) *= gain;
            if (hook) {
                DTensor replaced = (*hook)(n + 1, f);
                if (!replaced.same_shape(f))
                    throw std::invalid_argument("injection hook returned mismatched shape");
                f = std::move(replaced);
            }
            out.levels[static_cast<std::size_t>(n)] = std::move(f);
        }
        return out;
    }

    PatchFeatureGrid extract_patch_features(const ImageBatch& images) override {
        images.validate();
        ++counts_.patch;
        const int native = cfg_.patch_grid * cfg_.patch_size;
        DTensor resized = bilinear_resize(images.data, native, native);
        DTensor pooled = avg_pool_blocks(resized, cfg_.patch_grid, cfg_.patch_grid);
        return PatchFeatureGrid{project_tanh(pooled, patch_w_, patch_b_)};
    }

    int latent_channels() const override { return cfg_.latent_channels; }
    std::array<int, 4> unet_channels() const override { return cfg_.unet_channels; }
    int patch_grid() const override { return cfg_.patch_grid; }
    int patch_dim() const override { return cfg_.patch_dim; }
    int max_timestep() const override { return cfg_.max_timestep; }

    std::uint64_t parameter_digest() const override {
        std::uint64_t h = digest(latent_w_);
        h = digest(latent_b_, h);
        for (int n = 0; n < 4; ++n) {
            h = digest(level_w_[static_cast<std::size_t>(n)], h);
            h = digest(level_b_[static_cast<std::size_t>(n)], h);
        }
        h = digest(patch_w_, h);
        return digest(patch_b_, h);
    }

    std::string describe() const override { return "mock(seed=" + std::to_string(cfg_.seed) + ")"; }

private:
    static DTensor project_tanh(const DTensor& x, const DTensor& w, const DTensor& b) {
        // x: [B,H,W,Cin], w: [Cin,Cout], b: [Cout]
        const int cin = x.dim(3), cout = w.dim(1);
        DTensor y({x.dim(0), x.dim(1), x.dim(2), cout});
        const std::size_t cells = x.numel() / static_cast<std::size_t>(cin);
        for (std::size_t r = 0; r < cells; ++r) {
            const double* src = x.data() + r * cin;
            double* dst = y.data() + r * cout;
            for (int j = 0; j < cout; ++j) dst[j] = b.at(static_cast<std::size_t>(j));
            for (int i = 0; i < cin; ++i) {
                const double xv = src[i];
                const double* wr = w.data() + static_cast<std::size_t>(i) * cout;
                for (int j = 0; j < cout; ++j) dst[j] += xv * wr[j];
            }
            for (int j = 0; j < cout; ++j) dst[j] = std::tanh(dst[j]);
        }
        return y;
    }

    MockBackboneConfig cfg_;
    DTensor latent_w_, latent_b_;
    std::array<DTensor, 4> level_w_, level_b_;
    DTensor patch_w_, patch_b_;
};

// --- external adapter --------------------------------------------------------

// Binds operator-supplied pretrained weights through an extractor command that
// speaks the SFTN tensor format. Each call writes its inputs to a scratch
// directory, invokes the command, and reads the outputs back. Injection is
// supported for additive hooks: the additive component (hook applied to a zero
// tensor) is serialised per level so the extractor can add it at the tap
// points inside its own pass.
struct ExternalBackboneConfig {
    std::string command;      // extractor executable; empty = not configured
    std::string weights;      // filesystem path or registry identifier
    std::string sd_variant = "v2.1";
    std::string clip_variant = "ViT-L/14";
    std::string scratch_dir = ".sketchfuse_external";
    int max_timestep = 1000;
};

class ExternalBackbone : public Backbone {
public:
    explicit ExternalBackbone(const ExternalBackboneConfig& cfg) : cfg_(cfg) {
        auto member = [](const std::vector<std::string>& xs, const std::string& x) {
            for (const auto& v : xs)
                if (v == x) return true;
            return false;
        };
        if (!member(known_sd_variants(), cfg.sd_variant))
            throw std::invalid_argument("external backbone: unknown SD variant " + cfg.sd_variant);
        if (!member(known_clip_variants(), cfg.clip_variant))
            throw std::invalid_argument("external backbone: unknown encoder variant " + cfg.clip_variant);
        if (cfg.clip_variant == "ViT-L/14") { patch_grid_ = 16; patch_dim_ = 1024; patch_ = 14; }
        else if (cfg.clip_variant == "ViT-B/16") { patch_grid_ = 14; patch_dim_ = 768; patch_ = 16; }
        else { patch_grid_ = 7; patch_dim_ = 768; patch_ = 32; }
    }

    LatentBatch encode_latent(const ImageBatch& images) override {
        images.validate();
        ++counts_.encode;
        run({"encode", arg_tensor("in", images.data)});
        return LatentBatch{load_tensor(scratch("out.sftn"))};
    }

    UNetFeatureSet extract_unet_features(const LatentBatch& zt, int t,
                                         const PromptTokens& prompt,
                                         const InjectionHook* hook) override {
        if (t < 1 || t > cfg_.max_timestep)
            throw std::out_of_range("external backbone: t outside schedule range");
        ++counts_.unet;
        std::vector<std::string> args = {"unet", arg_tensor("in", zt.data),
                                         "--t", std::to_string(t),
                                         "--prompt", shell_quote(prompt.text)};
        if (hook) {
            // Additive hooks only: serialise hook(level, 0) per level.
            for (int n = 1; n <= 4; ++n) {
                auto sp = unet_level_spatial(zt.data.dim(1) * 8, n);
                DTensor zero({zt.data.dim(0), sp[0], sp[1],
                              unet_channels()[static_cast<std::size_t>(n - 1)]});
                DTensor add = (*hook)(n, zero);
                if (!add.same_shape(zero))
                    throw std::invalid_argument("injection hook returned mismatched shape");
                args.push_back(arg_tensor("inject" + std::to_string(n), add));
            }
        }
        run(args);
        UNetFeatureSet out;
        out.timestep = t;
        for (int n = 1; n <= 4; ++n)
            out.levels[static_cast<std::size_t>(n - 1)] =
                load_tensor(scratch("out" + std::to_string(n) + ".sftn"));
        return out;
    }

    PatchFeatureGrid extract_patch_features(const ImageBatch& images) override {
        images.validate();
        ++counts_.patch;
        run({"patch", arg_tensor("in", images.data)});
        return PatchFeatureGrid{load_tensor(scratch("out.sftn"))};
    }

    int latent_channels() const override { return 4; }
    std::array<int, 4> unet_channels() const override { return {1280, 1280, 640, 320}; }
    int patch_grid() const override { return patch_grid_; }
    int patch_dim() const override { return patch_dim_; }
    int max_timestep() const override { return cfg_.max_timestep; }

    std::uint64_t parameter_digest() const override {
        // Weights live outside the process; digest the binding instead.
        const std::string id = cfg_.weights + "|" + cfg_.sd_variant + "|" + cfg_.clip_variant;
        return fnv1a64(id.data(), id.size());
    }

    std::string describe() const override {
        return "external(" + cfg_.sd_variant + ", " + cfg_.clip_variant + ")";
    }

private:
    std::string scratch(const std::string& name) const { return cfg_.scratch_dir + "/" + name; }

    std::string arg_tensor(const std::string& name, const DTensor& t) {
        const std::string path = scratch(name + ".sftn");
        save_tensor(path, t);
        return path;
    }

    static std::string shell_quote(const std::string& s) {
        std::string q = "'";
        for (char c : s) {
            if (c == '\'') q += "'\\''";
            else q += c;
        }
        return q + "'";
    }

    void run(const std::vector<std::string>& args) {
        if (cfg_.command.empty())
            throw std::runtime_error(
                "external backbone: no extractor command configured (operator-supplied "
                "pretrained weights are required; use the mock backbone for desk-scale runs)");
        std::string cmd = cfg_.command + " --weights " + shell_quote(cfg_.weights) +
                          " --sd " + shell_quote(cfg_.sd_variant) +
                          " --clip " + shell_quote(cfg_.clip_variant) +
                          " --out-dir " + shell_quote(cfg_.scratch_dir);
        for (const auto& a : args) cmd += " " + a;
        const int rc = std::system(cmd.c_str());
        if (rc != 0)
            throw std::runtime_error("external backbone: extractor exited with status " +
                                     std::to_string(rc));
    }

    ExternalBackboneConfig cfg_;
    int patch_grid_ = 16, patch_dim_ = 1024, patch_ = 14;
};

} // namespace sketchfuse
