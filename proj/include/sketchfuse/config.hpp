#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

enum class Task { zs_sbir, fg_sbir, recognition, correspondence, segmentation };

inline Task task_from_string(const std::string& s) {
    if (s == "zs_sbir") return Task::zs_sbir;
    if (s == "fg_sbir") return Task::fg_sbir;
    if (s == "recognition") return Task::recognition;
    if (s == "correspondence") return Task::correspondence;
    if (s == "segmentation") return Task::segmentation;
    throw std::invalid_argument("unknown task: " + s);
}

inline std::string to_string(Task t) {
    switch (t) {
        case Task::zs_sbir: return "zs_sbir";
        case Task::fg_sbir: return "fg_sbir";
        case Task::recognition: return "recognition";
        case Task::correspondence: return "correspondence";
        case Task::segmentation: return "segmentation";
    }
    return "?";
}

// Declarative run description: task, backbone variants, loss hyperparameters,
// ablation toggles, timestep, training knobs.
struct TaskConfig {
    Task task = Task::zs_sbir;

    // backbone selection
    std::string backbone = "mock"; // "mock" | "external"
    std::string sd_variant = "v2.1";
    std::string clip_variant = "ViT-L/14";
    std::string weights;           // path or registry id, external backbone
    std::string external_command;  // extractor executable, external backbone

    // mock dims (defaults mirror the published widths)
    std::uint64_t mock_seed = 7;
    int mock_latent_channels = 4;
    std::array<int, 4> mock_unet_channels = {1280, 1280, 640, 320};
    int mock_patch_grid = 16;
    int mock_patch_dim = 1024;

    // extractor
    int image_size = 480;
    int timestep = 195;
    int d_agg = 768;
    int resblock_kernel = 3;
    int schedule_steps = 1000;
    double alpha_init = 1.0;
    std::string prompt; // null prompt by default

    // loss hyperparameters
    double margin = 0.3;
    double temperature = 0.07;
    double softargmax_fraction = 0.05;
    double sigmoid_steepness = 50.0;
    double tau_train = 0.47;
    double tau_test = 0.47;
    bool epe_squared = true;

    // ablation toggles
    bool no_aggregation_net = false;
    bool frozen_equal_weights = false;
    bool no_1d_convs = false;
    bool inject_level4 = true;

    // training
    std::uint64_t seed = 0;
    int batch_size = 16;
    double learning_rate = 1e-4;
    int epochs = 1;
    int steps_per_epoch = 0; // 0: one pass over the anchor set

    // evaluation
    int eval_k = 200; // 0: gallery size ("@all")
    std::vector<double> pck_percents = {5.0, 10.0};

    // paths
    std::string data_root;
    std::string out_dir = ".";
    std::string cache_dir; // empty: no feature cache
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

} // namespace detail

// Apply one key=value setting; unknown keys are errors.
inline void apply_config_kv(TaskConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    auto to_i = [&](const std::string& v) { return std::stoi(v); };
    auto to_d = [&](const std::string& v) { return std::stod(v); };
    auto to_u = [&](const std::string& v) { return static_cast<std::uint64_t>(std::stoull(v)); };

    if (key == "task") c.task = task_from_string(value);
    else if (key == "backbone") c.backbone = value;
    else if (key == "sd_variant") c.sd_variant = value;
    else if (key == "clip_variant") c.clip_variant = value;
    else if (key == "weights") c.weights = value;
    else if (key == "external_command") c.external_command = value;
    else if (key == "mock_seed") c.mock_seed = to_u(value);
    else if (key == "mock_latent_channels") c.mock_latent_channels = to_i(value);
    else if (key == "mock_unet_channels") {
        std::istringstream ss(value);
        std::string part;
        for (int n = 0; n < 4; ++n) {
            if (!std::getline(ss, part, ','))
                throw std::invalid_argument("config: mock_unet_channels needs 4 comma-separated values");
            c.mock_unet_channels[static_cast<std::size_t>(n)] = std::stoi(detail::trim(part));
        }
    } else if (key == "mock_patch_grid") c.mock_patch_grid = to_i(value);
    else if (key == "mock_patch_dim") c.mock_patch_dim = to_i(value);
    else if (key == "image_size") c.image_size = to_i(value);
    else if (key == "timestep") c.timestep = to_i(value);
    else if (key == "d_agg") c.d_agg = to_i(value);
    else if (key == "resblock_kernel") c.resblock_kernel = to_i(value);
    else if (key == "schedule_steps") c.schedule_steps = to_i(value);
    else if (key == "alpha_init") c.alpha_init = to_d(value);
    else if (key == "prompt") c.prompt = value;
    else if (key == "margin") c.margin = to_d(value);
    else if (key == "temperature") c.temperature = to_d(value);
    else if (key == "softargmax_fraction") c.softargmax_fraction = to_d(value);
    else if (key == "sigmoid_steepness") c.sigmoid_steepness = to_d(value);
    else if (key == "tau_train") c.tau_train = to_d(value);
    else if (key == "tau_test") c.tau_test = to_d(value);
    else if (key == "epe_squared") c.epe_squared = parse_bool(value, key);
    else if (key == "no_aggregation_net") c.no_aggregation_net = parse_bool(value, key);
    else if (key == "frozen_equal_weights") c.frozen_equal_weights = parse_bool(value, key);
    else if (key == "no_1d_convs") c.no_1d_convs = parse_bool(value, key);
    else if (key == "inject_level4") c.inject_level4 = parse_bool(value, key);
    else if (key == "seed") c.seed = to_u(value);
    else if (key == "batch_size") c.batch_size = to_i(value);
    else if (key == "learning_rate") c.learning_rate = to_d(value);
    else if (key == "epochs") c.epochs = to_i(value);
    else if (key == "steps_per_epoch") c.steps_per_epoch = to_i(value);
    else if (key == "eval_k") c.eval_k = to_i(value);
    else if (key == "pck_percents") {
        c.pck_percents.clear();
        std::istringstream ss(value);
        std::string part;
        while (std::getline(ss, part, ',')) c.pck_percents.push_back(std::stod(detail::trim(part)));
        if (c.pck_percents.empty()) throw std::invalid_argument("config: pck_percents empty");
    } else if (key == "data_root") c.data_root = value;
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "cache_dir") c.cache_dir = value;
    else throw std::invalid_argument("config: unknown key " + key);
}

// Key-value text: one `key = value` per line, '#' starts a comment.
inline TaskConfig parse_task_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    TaskConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: missing '=' at " + path + ":" + std::to_string(lineno));
        apply_config_kv(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return c;
}

// Canonical serialisation; the digest keys cache records and checkpoints.
inline std::string canonical_string(const TaskConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "task=" << to_string(c.task) << "\n"
       << "backbone=" << c.backbone << "\n"
       << "sd_variant=" << c.sd_variant << "\n"
       << "clip_variant=" << c.clip_variant << "\n"
       << "weights=" << c.weights << "\n"
       << "mock_seed=" << c.mock_seed << "\n"
       << "mock_latent_channels=" << c.mock_latent_channels << "\n"
       << "mock_unet_channels=" << c.mock_unet_channels[0] << "," << c.mock_unet_channels[1] << ","
       << c.mock_unet_channels[2] << "," << c.mock_unet_channels[3] << "\n"
       << "mock_patch_grid=" << c.mock_patch_grid << "\n"
       << "mock_patch_dim=" << c.mock_patch_dim << "\n"
       << "image_size=" << c.image_size << "\n"
       << "timestep=" << c.timestep << "\n"
       << "d_agg=" << c.d_agg << "\n"
       << "resblock_kernel=" << c.resblock_kernel << "\n"
       << "schedule_steps=" << c.schedule_steps << "\n"
       << "alpha_init=" << c.alpha_init << "\n"
       << "prompt=" << c.prompt << "\n"
       << "margin=" << c.margin << "\n"
       << "temperature=" << c.temperature << "\n"
       << "softargmax_fraction=" << c.softargmax_fraction << "\n"
       << "sigmoid_steepness=" << c.sigmoid_steepness << "\n"
       << "tau_train=" << c.tau_train << "\n"
       << "tau_test=" << c.tau_test << "\n"
       << "epe_squared=" << c.epe_squared << "\n"
       << "no_aggregation_net=" << c.no_aggregation_net << "\n"
       << "frozen_equal_weights=" << c.frozen_equal_weights << "\n"
       << "no_1d_convs=" << c.no_1d_convs << "\n"
       << "inject_level4=" << c.inject_level4 << "\n"
       << "seed=" << c.seed << "\n";
    return os.str();
}

inline std::uint64_t config_digest(const TaskConfig& c) {
    const std::string s = canonical_string(c);
    return fnv1a64(s.data(), s.size());
}

inline void validate(const TaskConfig& c) {
    if (c.image_size % 32 != 0) throw std::invalid_argument("config: image_size must be divisible by 32");
    if (c.timestep < 1 || c.timestep > c.schedule_steps)
        throw std::invalid_argument("config: timestep outside schedule");
    if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (c.margin < 0) throw std::invalid_argument("config: margin must be >= 0");
    if (c.temperature <= 0) throw std::invalid_argument("config: temperature must be > 0");
    if (c.backbone != "mock" && c.backbone != "external")
        throw std::invalid_argument("config: backbone must be mock or external");
}

} // namespace sketchfuse
