#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sketchfuse/analysis.hpp"
#include "sketchfuse/pipeline.hpp"

using namespace sketchfuse;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::string task, backbone;
    std::string data_root, out_dir, cache_dir, split;
    int seed = -1, timestep = -1, image_size = -1;
    bool no_aggregation_net = false, frozen_equal_weights = false, no_1d_convs = false;
    bool no_inject_level4 = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, const std::string& default_split) {
    o.split = default_split;
    cmd->add_option("--config", o.config_file, "key-value config file");
    cmd->add_option("--set", o.sets, "extra key=value overrides")->take_all();
    cmd->add_option("--task", o.task, "zs_sbir|fg_sbir|recognition|correspondence|segmentation");
    cmd->add_option("--backbone", o.backbone, "mock|external");
    cmd->add_option("--data", o.data_root, "dataset root directory");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--cache", o.cache_dir, "fused-feature cache directory");
    cmd->add_option("--split", o.split, "dataset split name");
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--timestep", o.timestep, "extraction timestep t");
    cmd->add_option("--image-size", o.image_size, "input resolution (divisible by 32)");
    cmd->add_flag("--no-aggregation-net", o.no_aggregation_net, "ablation: fixed interpolation instead of A(.)");
    cmd->add_flag("--frozen-equal-weights", o.frozen_equal_weights, "ablation: freeze branch weights at 1");
    cmd->add_flag("--no-1d-convs", o.no_1d_convs, "ablation: channel interpolation instead of C(.)");
    cmd->add_flag("--no-inject-level4", o.no_inject_level4, "skip injection at the fourth tap");
}

TaskConfig build_config(const CommonOpts& o) {
    TaskConfig c = o.config_file.empty() ? TaskConfig{} : parse_task_config(o.config_file);
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
        apply_config_kv(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.task.empty()) c.task = task_from_string(o.task);
    if (!o.backbone.empty()) c.backbone = o.backbone;
    if (!o.data_root.empty()) c.data_root = o.data_root;
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    if (!o.cache_dir.empty()) c.cache_dir = o.cache_dir;
    if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
    if (o.timestep > 0) c.timestep = o.timestep;
    if (o.image_size > 0) c.image_size = o.image_size;
    if (o.no_aggregation_net) c.no_aggregation_net = true;
    if (o.frozen_equal_weights) c.frozen_equal_weights = true;
    if (o.no_1d_convs) c.no_1d_convs = true;
    if (o.no_inject_level4) c.inject_level4 = false;
    validate(c);
    std::filesystem::create_directories(c.out_dir);
    return c;
}

int cmd_extract(const CommonOpts& o) {
    TaskConfig cfg = build_config(o);
    if (cfg.cache_dir.empty()) throw std::runtime_error("extract: --cache (or cache_dir) is required");
    Pipeline pipe(cfg);
    Dataset ds = load_dataset(cfg.data_root, o.split, cfg.task, cfg.image_size);
    CacheStats stats = pipe.extract_and_cache(ds);
    std::printf("extracted %d fused maps, %d cache hits (digest %s)\n", stats.computed, stats.hits,
                hex64(config_digest(cfg)).c_str());
    return 0;
}

int cmd_train(const CommonOpts& o) {
    TaskConfig cfg = build_config(o);
    Pipeline pipe(cfg);
    Dataset ds = load_dataset(cfg.data_root, o.split, cfg.task, cfg.image_size);
    TrainStats stats = pipe.train(ds);
    std::printf("trained %d steps, final loss %.6f, alpha %.4f %.4f %.4f\n", stats.steps,
                stats.final_loss, stats.alpha[0], stats.alpha[1], stats.alpha[2]);
    std::printf("checkpoint: %s\n", stats.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint) {
    TaskConfig cfg = build_config(o);
    Pipeline pipe(cfg);
    Dataset ds = load_dataset(cfg.data_root, o.split, cfg.task, cfg.image_size);
    pipe.ensure_head(static_cast<int>(ds.classes.size()));
    if (!checkpoint.empty()) pipe.load(checkpoint);
    MetricReport report = pipe.evaluate(ds);
    const std::string path = cfg.out_dir + "/report.txt";
    report.write(path);
    std::fputs(report.to_string().c_str(), stdout);
    std::printf("report: %s\n", path.c_str());
    return 0;
}

int cmd_analyze(const CommonOpts& o, const std::string& image_path, int level, bool injected,
                std::vector<double> rhos) {
    TaskConfig cfg = build_config(o);
    Pipeline pipe(cfg);
    ImageBatch img = load_image_batch(image_path, cfg.image_size);
    DTensor feature;
    if (injected) {
        UNetFeatureSet set = pipe.extractor().extract_injected(img);
        const DTensor& lv = set.level(level);
        feature = lv.reshaped({lv.dim(1), lv.dim(2), lv.dim(3)});
    } else {
        RawFeatures raw = pipe.extractor().extract_raw(img);
        const DTensor& lv = raw.unet.level(level);
        feature = lv.reshaped({lv.dim(1), lv.dim(2), lv.dim(3)});
    }
    if (rhos.empty()) rhos = {0.1, 0.25, 0.5};
    const std::string stem = std::filesystem::path(image_path).stem().string() + "_level" +
                             std::to_string(level) + (injected ? "_injected" : "_raw");
    auto rows = analyze_feature_map(feature, stem, cfg.out_dir, rhos);
    write_analysis_report(cfg.out_dir + "/" + stem + "_report.txt", rows);
    for (const auto& r : rows)
        std::printf("%s rho=%.2f lf=%.6g hf=%.6g ratio=%.6f\n", r.feature_id.c_str(), r.rho,
                    r.split.lf, r.split.hf, r.split.ratio);
    return 0;
}

int cmd_ablate(const CommonOpts& o) {
    TaskConfig base = build_config(o);
    struct Row {
        const char* label;
        void (*apply)(TaskConfig&);
    };
    const std::vector<Row> rows = {
        {"full", [](TaskConfig&) {}},
        {"w/o Aggregation Network", [](TaskConfig& c) { c.no_aggregation_net = true; }},
        {"w/o Learnable Weights", [](TaskConfig& c) { c.frozen_equal_weights = true; }},
        {"w/o 1D Convolutions", [](TaskConfig& c) { c.no_1d_convs = true; }},
    };
    for (const auto& row : rows) {
        TaskConfig cfg = base;
        row.apply(cfg);
        Pipeline pipe(cfg);
        AblationProbe probe = pipe.probe();
        std::printf("%-26s adapters=%d aggregation=%d branch_weights=%d trainable_tensors=%zu\n",
                    row.label, probe.has_adapter_params ? 1 : 0,
                    probe.has_aggregation_params ? 1 : 0, probe.has_branch_weights ? 1 : 0,
                    probe.trainable_names.size());
        if (!cfg.data_root.empty()) {
            TaskConfig run = cfg;
            run.steps_per_epoch = 1;
            run.epochs = 1;
            Pipeline trainer(run);
            Dataset ds = load_dataset(run.data_root, o.split, run.task, run.image_size);
            TrainStats stats = trainer.train(ds);
            std::printf("%-26s one-step loss %.6f\n", row.label, stats.final_loss);
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sketch feature fusion toolkit"};
    app.require_subcommand(1);

    CommonOpts extract_o, train_o, eval_o, analyze_o, ablate_o;
    std::string checkpoint, image_path;
    int level = 2;
    bool injected = false;
    std::vector<double> rhos;

    auto* extract = app.add_subcommand("extract", "extract fused features into the cache");
    add_common(extract, extract_o, "train");
    auto* train = app.add_subcommand("train", "train adapters, aggregator and task head");
    add_common(train, train_o, "train");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write the metric report");
    add_common(eval, eval_o, "test");
    eval->add_option("--checkpoint", checkpoint, "checkpoint to load (fresh parameters if omitted)");
    auto* analyze = app.add_subcommand("analyze", "PCA / spectrum / LF-HF diagnostics for one image");
    add_common(analyze, analyze_o, "train");
    analyze->add_option("--image", image_path, "input image")->required();
    analyze->add_option("--level", level, "UNet tap to analyze (1..4, default 2)");
    analyze->add_flag("--injected", injected, "analyze CLIP-enhanced taps instead of raw ones");
    analyze->add_option("--rho", rhos, "LF/HF radius fractions")->take_all();
    auto* ablate = app.add_subcommand("ablate", "inspect the ablation toggles' parameter surfaces");
    add_common(ablate, ablate_o, "train");

    CLI11_PARSE(app, argc, argv);

    try {
        if (extract->parsed()) return cmd_extract(extract_o);
        if (train->parsed()) return cmd_train(train_o);
        if (eval->parsed()) return cmd_eval(eval_o, checkpoint);
        if (analyze->parsed()) return cmd_analyze(analyze_o, image_path, level, injected, rhos);
        if (ablate->parsed()) return cmd_ablate(ablate_o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
