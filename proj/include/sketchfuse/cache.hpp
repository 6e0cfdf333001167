#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "sketchfuse/serialize.hpp"
#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// Per-sample fused-feature records. Fixed header (magic, version, config
// digest, shape), little-endian float32 payload. A digest mismatch counts as
// a miss and forces recomputation.
class FeatureCache {
public:
    FeatureCache(std::string dir, std::uint64_t config_digest)
        : dir_(std::move(dir)), digest_(config_digest) {
        std::filesystem::create_directories(dir_);
    }

    std::string record_path(const std::string& sample_id) const {
        std::string name = sample_id;
        for (char& c : name)
            if (c == '/' || c == '\\') c = '_';
        return dir_ + "/" + name + ".sfc";
    }

    // Returned values carry float32 precision (the payload format).
    std::optional<DTensor> load(const std::string& sample_id) const {
        const std::string path = record_path(sample_id);
        std::ifstream is(path, std::ios::binary);
        if (!is) return std::nullopt;
        try {
            expect_magic(is, "SFCH", "feature cache");
            if (detail::read_le<std::uint32_t>(is) != kVersion) return std::nullopt;
            if (detail::read_le<std::uint64_t>(is) != digest_) return std::nullopt;
            const auto rank = detail::read_le<std::uint32_t>(is);
            if (rank > 8) return std::nullopt;
            std::vector<int> shape(rank);
            for (auto& d : shape) d = static_cast<int>(detail::read_le<std::uint32_t>(is));
            DTensor t(shape);
            for (std::size_t i = 0; i < t.numel(); ++i)
                t.at(i) = static_cast<double>(detail::read_le<float>(is));
            return t;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    // Stores the float32-quantised tensor and returns it, so callers consume
    // exactly what later cache hits will deliver.
    DTensor store(const std::string& sample_id, const DTensor& fused) const {
        const std::string path = record_path(sample_id);
        {
            std::ofstream os(path, std::ios::binary);
            if (!os) throw std::runtime_error("feature cache: cannot open " + path);
            write_magic(os, "SFCH");
            detail::write_le<std::uint32_t>(os, kVersion);
            detail::write_le<std::uint64_t>(os, digest_);
            detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(fused.rank()));
            for (int d : fused.shape()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
            for (std::size_t i = 0; i < fused.numel(); ++i)
                detail::write_le<float>(os, static_cast<float>(fused.at(i)));
            if (!os) throw std::runtime_error("feature cache: write failed for " + path);
        }
        DTensor quantised(fused.shape());
        for (std::size_t i = 0; i < fused.numel(); ++i)
            quantised.at(i) = static_cast<double>(static_cast<float>(fused.at(i)));
        return quantised;
    }

    std::uint64_t config_digest() const { return digest_; }

private:
    static constexpr std::uint32_t kVersion = 1;
    std::string dir_;
    std::uint64_t digest_;
};

} // namespace sketchfuse
