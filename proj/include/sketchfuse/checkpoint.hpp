#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sketchfuse/model.hpp"
#include "sketchfuse/serialize.hpp"

namespace sketchfuse {

// Unified checkpoint: config digest plus named float64 tensors. Exact
// round-trip so a reloaded model reproduces its reports byte for byte.
inline void save_checkpoint(const std::string& path, std::uint64_t config_digest,
                            const std::vector<NamedParam>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
    write_magic(os, "SFCK");
    detail::write_le<std::uint32_t>(os, 1u);
    detail::write_le<std::uint64_t>(os, config_digest);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_tensor_f64(os, *p.tensor);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct CheckpointInfo {
    std::uint64_t config_digest = 0;
    std::vector<std::string> names;
};

// Loads tensors by name into the given parameter set. Every stored tensor
// must land, every expected parameter must be present, shapes must match.
inline CheckpointInfo load_checkpoint(const std::string& path, std::vector<NamedParam>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    expect_magic(is, "SFCK", "checkpoint");
    if (detail::read_le<std::uint32_t>(is) != 1u)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    CheckpointInfo info;
    info.config_digest = detail::read_le<std::uint64_t>(is);
    const auto count = detail::read_le<std::uint32_t>(is);
    std::map<std::string, DTensor*> by_name;
    for (auto& p : params) by_name[p.name] = p.tensor;
    std::size_t filled = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::read_le<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        DTensor t = read_tensor_f64(is);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: unexpected tensor " + name + " in " + path);
        if (!it->second->same_shape(t))
            throw std::runtime_error("checkpoint: shape mismatch for " + name + " in " + path);
        *it->second = std::move(t);
        ++filled;
        info.names.push_back(name);
    }
    if (filled != by_name.size())
        throw std::runtime_error("checkpoint: missing tensors in " + path);
    return info;
}

} // namespace sketchfuse
