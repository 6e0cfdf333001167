#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sketchfuse/cache.hpp"
#include "sketchfuse/checkpoint.hpp"
#include "sketchfuse/config.hpp"
#include "sketchfuse/dataset.hpp"
#include "sketchfuse/heads.hpp"
#include "sketchfuse/metrics.hpp"
#include "sketchfuse/model.hpp"

namespace sketchfuse {

struct AdamOptimizer {
    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int t = 0;
    std::vector<DTensor> m, v;

    explicit AdamOptimizer(double learning_rate) : lr(learning_rate) {}

    void init(const std::vector<NamedParam>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.tensor->shape());
            v.emplace_back(p.tensor->shape());
        }
    }

    void step(std::vector<NamedParam>& params, const std::vector<const DTensor*>& grads) {
        if (params.size() != grads.size() || params.size() != m.size())
            throw std::invalid_argument("adam: parameter/gradient count mismatch");
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            DTensor& p = *params[i].tensor;
            const DTensor& g = *grads[i];
            for (std::size_t j = 0; j < p.numel(); ++j) {
                m[i].at(j) = beta1 * m[i].at(j) + (1 - beta1) * g.at(j);
                v[i].at(j) = beta2 * v[i].at(j) + (1 - beta2) * g.at(j) * g.at(j);
                const double mh = m[i].at(j) / bc1;
                const double vh = v[i].at(j) / bc2;
                p.at(j) -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }
};

inline ExtractorSettings extractor_settings(const TaskConfig& c) {
    ExtractorSettings s;
    s.image_size = c.image_size;
    s.timestep = c.timestep;
    s.d_agg = c.d_agg;
    s.resblock_kernel = c.resblock_kernel;
    s.schedule_steps = c.schedule_steps;
    s.alpha_init = c.alpha_init;
    s.seed = c.seed;
    s.prompt = c.prompt;
    s.toggles.no_aggregation_net = c.no_aggregation_net;
    s.toggles.frozen_equal_weights = c.frozen_equal_weights;
    s.toggles.no_1d_convs = c.no_1d_convs;
    s.toggles.inject_level4 = c.inject_level4;
    return s;
}

inline std::unique_ptr<Backbone> make_backbone(const TaskConfig& c) {
    if (c.backbone == "mock") {
        MockBackboneConfig m;
        m.seed = c.mock_seed;
        m.latent_channels = c.mock_latent_channels;
        m.unet_channels = c.mock_unet_channels;
        m.patch_grid = c.mock_patch_grid;
        m.patch_dim = c.mock_patch_dim;
        m.max_timestep = c.schedule_steps;
        return std::make_unique<MockBackbone>(m);
    }
    if (c.backbone == "external") {
        ExternalBackboneConfig e;
        e.command = c.external_command;
        e.weights = c.weights;
        e.sd_variant = c.sd_variant;
        e.clip_variant = c.clip_variant;
        e.scratch_dir = c.out_dir + "/external_scratch";
        e.max_timestep = c.schedule_steps;
        std::filesystem::create_directories(e.scratch_dir);
        return std::make_unique<ExternalBackbone>(e);
    }
    throw std::invalid_argument("unknown backbone kind: " + c.backbone);
}

struct TrainStats {
    int steps = 0;
    double final_loss = 0;
    std::string checkpoint_path;
    std::array<double, 3> alpha = {0, 0, 0};
};

struct CacheStats {
    int computed = 0;
    int hits = 0;
};

// Trainable-parameter inspection for the ablation rows.
struct AblationProbe {
    bool has_adapter_params = false;
    bool has_aggregation_params = false;
    bool has_branch_weights = false;
    std::vector<std::string> trainable_names;
};

// Owns the backbone, the learnable extractor, the optional recognition head,
// raw-feature memoisation and the optional fused-feature cache.
class Pipeline {
public:
    explicit Pipeline(const TaskConfig& cfg)
        : cfg_(cfg), backbone_(make_backbone(cfg)),
          extractor_(std::make_unique<FeatureExtractor>(backbone_.get(), extractor_settings(cfg))) {
        validate(cfg_);
        if (!cfg_.cache_dir.empty())
            cache_.emplace(cfg_.cache_dir, config_digest(cfg_));
    }

    FeatureExtractor& extractor() { return *extractor_; }
    Backbone& backbone() { return *backbone_; }
    const TaskConfig& config() const { return cfg_; }

    void ensure_head(int classes) {
        if (cfg_.task != Task::recognition) return;
        if (head_ && head_->weight.dim(1) == classes) return;
        head_ = ClassifierHead::init(cfg_.d_agg, classes, cfg_.seed ^ 0x4eadull);
    }

    std::vector<NamedParam> checkpoint_params() {
        auto out = extractor_->all_params();
        if (head_) {
            out.push_back({"classifier.weight", &head_->weight});
            out.push_back({"classifier.bias", &head_->bias});
        }
        return out;
    }

    std::vector<NamedParam> trainable_params() {
        auto out = extractor_->trainable_params();
        if (head_) {
            out.push_back({"classifier.weight", &head_->weight});
            out.push_back({"classifier.bias", &head_->bias});
        }
        return out;
    }

    void save(const std::string& path) {
        auto params = checkpoint_params();
        save_checkpoint(path, config_digest(cfg_), params);
    }

    void load(const std::string& path, bool check_digest = true) {
        auto params = checkpoint_params();
        CheckpointInfo info = load_checkpoint(path, params);
        if (check_digest && info.config_digest != config_digest(cfg_))
            throw std::runtime_error("checkpoint: config digest mismatch for " + path);
    }

    // --- feature plumbing --------------------------------------------------

    const RawFeatures& raw_for(const std::string& sample_id, const std::string& image_path) {
        auto it = raw_memo_.find(sample_id);
        if (it != raw_memo_.end()) return it->second;
        ImageBatch img = load_image_batch(image_path, cfg_.image_size);
        auto [pos, ok] = raw_memo_.emplace(sample_id, extractor_->extract_raw(img));
        (void)ok;
        return pos->second;
    }

    // Non-training fused map [60,60,d_agg]; float32-quantised when cached.
    DTensor fused_plain(const std::string& sample_id, const std::string& image_path,
                        CacheStats* stats = nullptr) {
        if (cache_) {
            if (auto hit = cache_->load(sample_id)) {
                if (stats) ++stats->hits;
                return *hit;
            }
        }
        const RawFeatures& raw = raw_for(sample_id, image_path);
        Graph g;
        auto bound = extractor_->bind(g, false);
        DTensor fused = g.value(extractor_->fused_from_raw(g, raw, bound));
        const int grid = kAggregationGrid;
        DTensor map = fused.reshaped({grid, grid, fused.dim(3)});
        if (cache_) {
            if (stats) ++stats->computed;
            return cache_->store(sample_id, map);
        }
        if (stats) ++stats->computed;
        return map;
    }

    CacheStats extract_and_cache(const Dataset& ds) {
        if (!cache_) throw std::runtime_error("extract: cache_dir not configured");
        CacheStats stats;
        for (const auto& p : ds.photos) fused_plain("photo/" + p.id, p.path, &stats);
        for (const auto& s : ds.sketches) fused_plain("sketch/" + s.id, s.path, &stats);
        return stats;
    }

    // --- training ------------------------------------------------------------

    TrainStats train(const Dataset& ds) {
        ensure_head(static_cast<int>(ds.classes.size()));
        auto params = trainable_params();
        if (params.empty())
            throw std::runtime_error("train: no trainable parameters under the current toggles");
        AdamOptimizer opt(cfg_.learning_rate);
        opt.init(params);
        std::mt19937_64 rng(cfg_.seed);

        std::filesystem::create_directories(cfg_.out_dir);
        std::ofstream log(cfg_.out_dir + "/train_log.txt", std::ios::binary);

        std::vector<int> anchors = anchor_indices(ds);
        if (anchors.empty()) throw std::runtime_error("train: no training anchors for task");

        TrainStats stats;
        for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
            std::shuffle(anchors.begin(), anchors.end(), rng);
            const int per_epoch = cfg_.steps_per_epoch > 0
                                      ? cfg_.steps_per_epoch
                                      : (static_cast<int>(anchors.size()) + cfg_.batch_size - 1) /
                                            cfg_.batch_size;
            std::size_t cursor = 0;
            for (int step = 0; step < per_epoch; ++step) {
                std::vector<int> batch;
                for (int i = 0; i < cfg_.batch_size; ++i) {
                    batch.push_back(anchors[cursor % anchors.size()]);
                    ++cursor;
                }
                Graph g;
                auto bound = extractor_->bind(g, true);
                auto vars = extractor_->trainable_vars(bound);
                std::optional<ClassifierHead::Bound> head_bound;
                if (head_) {
                    head_bound = head_->bind(g, true);
                    vars.push_back(head_bound->weight);
                    vars.push_back(head_bound->bias);
                }
                Var loss = batch_loss(g, bound, head_bound, ds, batch, rng);
                const double loss_v = g.value(loss).at(0);
                if (!std::isfinite(loss_v)) {
                    save(cfg_.out_dir + "/diagnostic_snapshot.sfck");
                    throw std::runtime_error("train: non-finite loss at epoch " +
                                             std::to_string(epoch) + " step " + std::to_string(step) +
                                             "; snapshot written");
                }
                g.backward(loss);
                std::vector<const DTensor*> grads;
                grads.reserve(vars.size());
                for (Var v : vars) grads.push_back(&g.grad(v));
                opt.step(params, grads);

                ++stats.steps;
                stats.final_loss = loss_v;
                const auto& alpha = extractor_->aggregator().weights.alpha;
                for (int n = 0; n < 3; ++n) stats.alpha[static_cast<std::size_t>(n)] = alpha[static_cast<std::size_t>(n)].at(0);
                char line[160];
                std::snprintf(line, sizeof(line), "epoch %d step %d loss %.6f alpha %.6f %.6f %.6f\n",
                              epoch, stats.steps, loss_v, stats.alpha[0], stats.alpha[1],
                              stats.alpha[2]);
                log << line;
            }
            save(cfg_.out_dir + "/checkpoint_epoch" + std::to_string(epoch) + ".sfck");
        }
        stats.checkpoint_path = cfg_.out_dir + "/checkpoint.sfck";
        save(stats.checkpoint_path);
        return stats;
    }

    // --- evaluation ------------------------------------------------------------

    MetricReport evaluate(const Dataset& ds) {
        ensure_head(static_cast<int>(ds.classes.size()));
        switch (cfg_.task) {
            case Task::zs_sbir: return eval_category_retrieval(ds);
            case Task::fg_sbir: return eval_instance_retrieval(ds);
            case Task::recognition: return eval_recognition(ds);
            case Task::correspondence: return eval_correspondence(ds);
            case Task::segmentation: return eval_segmentation(ds);
        }
        throw std::logic_error("evaluate: unhandled task");
    }

    AblationProbe probe() {
        AblationProbe p;
        for (const auto& param : trainable_params()) {
            p.trainable_names.push_back(param.name);
            if (param.name.rfind("adapter", 0) == 0) p.has_adapter_params = true;
            if (param.name.rfind("agg", 0) == 0) p.has_aggregation_params = true;
            if (param.name.rfind("alpha", 0) == 0) p.has_branch_weights = true;
        }
        return p;
    }

private:
    // --- sample plumbing ---------------------------------------------------

    DTensor pooled_feature(Graph& g, Var fused) {
        return g.value(g.global_max_pool(fused));
    }

    Var fused_var(Graph& g, const FeatureExtractor::Bound& bound, const std::string& sample_id,
                  const std::string& path) {
        return extractor_->fused_from_raw(g, raw_for(sample_id, path), bound);
    }

    std::vector<int> anchor_indices(const Dataset& ds) const {
        std::vector<int> idx;
        if (cfg_.task == Task::correspondence) {
            idx.resize(ds.annotations.size());
        } else {
            idx.resize(ds.sketches.size());
        }
        std::iota(idx.begin(), idx.end(), 0);
        return idx;
    }

    // --- per-task losses ------------------------------------------------------

    Var batch_loss(Graph& g, const FeatureExtractor::Bound& bound,
                   const std::optional<ClassifierHead::Bound>& head_bound, const Dataset& ds,
                   const std::vector<int>& batch, std::mt19937_64& rng) {
        switch (cfg_.task) {
            case Task::recognition: {
                std::vector<Var> pooled;
                std::vector<int> labels;
                for (int i : batch) {
                    const auto& s = ds.sketches[static_cast<std::size_t>(i)];
                    Var f = fused_var(g, bound, "sketch/" + s.id, s.path);
                    pooled.push_back(g.global_max_pool(f));
                    labels.push_back(s.label);
                }
                return ce_loss(g, g.concat_rows(pooled), labels, *head_bound);
            }
            case Task::zs_sbir:
            case Task::fg_sbir: {
                std::vector<Var> fs, fp, fn;
                for (int i : batch) {
                    const auto& s = ds.sketches[static_cast<std::size_t>(i)];
                    const int pos = cfg_.task == Task::fg_sbir
                                        ? s.paired_photo
                                        : pick_same_class_photo(ds, s.label, -1, rng);
                    const int neg = cfg_.task == Task::fg_sbir
                                        ? pick_same_class_photo(ds, s.label, pos, rng)
                                        : pick_other_class_photo(ds, s.label, rng);
                    fs.push_back(g.global_max_pool(fused_var(g, bound, "sketch/" + s.id, s.path)));
                    const auto& pp = ds.photos[static_cast<std::size_t>(pos)];
                    const auto& np = ds.photos[static_cast<std::size_t>(neg)];
                    fp.push_back(g.global_max_pool(fused_var(g, bound, "photo/" + pp.id, pp.path)));
                    fn.push_back(g.global_max_pool(fused_var(g, bound, "photo/" + np.id, np.path)));
                }
                return triplet_loss(g, g.concat_rows(fs), g.concat_rows(fp), g.concat_rows(fn),
                                    cfg_.margin);
            }
            case Task::correspondence: {
                const int grid = kAggregationGrid;
                std::vector<Var> smaps, pmaps;
                std::vector<CorrespondenceAnnotation> anns;
                for (int i : batch) {
                    const auto& a = ds.annotations[static_cast<std::size_t>(i)];
                    const auto& s = ds.sketches[static_cast<std::size_t>(ds.find_sketch(a.sketch_id))];
                    const auto& p = ds.photos[static_cast<std::size_t>(ds.find_photo(a.photo_id))];
                    Var fsm = fused_var(g, bound, "sketch/" + s.id, s.path);
                    Var fpm = fused_var(g, bound, "photo/" + p.id, p.path);
                    smaps.push_back(g.reshape(fsm, {grid * grid, cfg_.d_agg}));
                    pmaps.push_back(g.reshape(fpm, {grid * grid, cfg_.d_agg}));
                    anns.push_back(a);
                }
                const int pairs = static_cast<int>(batch.size());
                Var big_s = g.reshape(g.concat_rows(smaps), {pairs, grid, grid, cfg_.d_agg});
                Var big_p = g.reshape(g.concat_rows(pmaps), {pairs, grid, grid, cfg_.d_agg});
                MatchedCells cells = match_cells(anns, cfg_.image_size);
                Var cl = patch_contrastive_loss(g, big_s, big_p, cells, cfg_.temperature);

                // end-point error over the matched cells, per pair
                std::vector<Var> est_parts;
                std::vector<double> gt_vals;
                std::size_t k = 0;
                for (int pair = 0; pair < pairs; ++pair) {
                    std::vector<int> rows;
                    while (k < cells.sketch_rows.size() &&
                           cells.sketch_rows[k] / (grid * grid) == pair) {
                        rows.push_back(cells.sketch_rows[k]);
                        gt_vals.push_back(cells.target_cells[k][0]);
                        gt_vals.push_back(cells.target_cells[k][1]);
                        ++k;
                    }
                    if (rows.empty()) continue;
                    est_parts.push_back(expected_target_cells(g, big_s, big_p, pair, rows, -1.0,
                                                              cfg_.softargmax_fraction));
                }
                Var est = g.concat_rows(est_parts);
                DTensor gt({static_cast<int>(gt_vals.size() / 2), 2}, gt_vals);
                Var epe = epe_loss(g, est, gt, cfg_.epe_squared);
                return g.add(cl, epe);
            }
            case Task::segmentation: {
                Var total = g.scalar_const(0.0);
                for (int i : batch) {
                    const auto& s = ds.sketches[static_cast<std::size_t>(i)];
                    const int pi = s.paired_photo >= 0 ? s.paired_photo
                                                       : pick_same_class_photo(ds, s.label, -1, rng);
                    const auto& p = ds.photos[static_cast<std::size_t>(pi)];
                    Var pooled = g.global_max_pool(fused_var(g, bound, "sketch/" + s.id, s.path));
                    Var fpm = fused_var(g, bound, "photo/" + p.id, p.path);
                    Var fpm3 = g.reshape(fpm, {kAggregationGrid, kAggregationGrid, cfg_.d_agg});
                    Var pooled1 = g.reshape(pooled, {cfg_.d_agg});
                    Var logits = correlation_mask_logits(g, pooled1, fpm3, cfg_.image_size,
                                                         cfg_.image_size);
                    SegMask gt{load_mask_for(p)};
                    Var l = seg_train_loss(g, logits, gt, cfg_.sigmoid_steepness, cfg_.tau_train);
                    total = g.add(total, l);
                }
                return g.scale(total, 1.0 / static_cast<double>(batch.size()));
            }
        }
        throw std::logic_error("batch_loss: unhandled task");
    }

    int pick_same_class_photo(const Dataset& ds, int label, int exclude, std::mt19937_64& rng) const {
        const auto& pool = ds.photos_by_class[static_cast<std::size_t>(label)];
        std::vector<int> candidates;
        for (int p : pool)
            if (p != exclude) candidates.push_back(p);
        if (candidates.empty())
            throw std::runtime_error("train: class lacks a distinct-instance photo for hard triplets");
        return candidates[rng() % candidates.size()];
    }

    int pick_other_class_photo(const Dataset& ds, int label, std::mt19937_64& rng) const {
        std::vector<int> candidates;
        for (std::size_t c = 0; c < ds.photos_by_class.size(); ++c)
            if (static_cast<int>(c) != label)
                for (int p : ds.photos_by_class[c]) candidates.push_back(p);
        if (candidates.empty())
            throw std::runtime_error("train: no other-class photos for category triplets");
        return candidates[rng() % candidates.size()];
    }

    DTensor load_mask_for(const PhotoRecord& p) {
        if (p.mask_path.empty()) throw std::runtime_error("segmentation: photo has no mask: " + p.id);
        DTensor mask = load_mask_image(p.mask_path);
        if (mask.dim(0) != cfg_.image_size || mask.dim(1) != cfg_.image_size)
            throw std::runtime_error("segmentation: mask dims differ from image_size: " + p.mask_path);
        return mask;
    }

    // --- per-task evaluation -----------------------------------------------------

    DTensor pooled_normalized_rows(const std::vector<DTensor>& pooled) {
        const int n = static_cast<int>(pooled.size());
        const int d = static_cast<int>(pooled[0].numel());
        DTensor rows({n, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) rows(i, j) = pooled[static_cast<std::size_t>(i)].at(static_cast<std::size_t>(j));
        Graph g;
        return g.value(g.l2_normalize_rows(g.constant(rows)));
    }

    DTensor pooled_of(const std::string& sample_id, const std::string& path) {
        DTensor fused = fused_plain(sample_id, path);
        Graph g;
        Var p = g.global_max_pool(g.constant(fused.reshaped({1, fused.dim(0), fused.dim(1), fused.dim(2)})));
        return g.value(p).reshaped({fused.dim(2)});
    }

    MetricReport eval_category_retrieval(const Dataset& ds) {
        std::vector<DTensor> q_feats, g_feats;
        for (const auto& s : ds.sketches) q_feats.push_back(pooled_of("sketch/" + s.id, s.path));
        for (const auto& p : ds.photos) g_feats.push_back(pooled_of("photo/" + p.id, p.path));
        DTensor q = pooled_normalized_rows(q_feats);
        DTensor gal = pooled_normalized_rows(g_feats);
        auto ranked = rank_gallery(q, gal);
        RankedRetrieval rr;
        for (std::size_t i = 0; i < ds.sketches.size(); ++i) {
            RetrievalQuery query;
            query.ranked = ranked[i];
            query.relevant.resize(ds.photos.size());
            for (std::size_t j = 0; j < ds.photos.size(); ++j)
                query.relevant[j] = ds.photos[j].label == ds.sketches[i].label ? 1 : 0;
            rr.push_back(std::move(query));
        }
        const int k = cfg_.eval_k > 0 ? cfg_.eval_k : static_cast<int>(ds.photos.size());
        MetricReport report;
        MetricNotes notes;
        report.add("map", k, map_at_k(rr, k, &notes));
        report.add("p", k, precision_at_k(rr, k, &notes));
        return report;
    }

    MetricReport eval_instance_retrieval(const Dataset& ds) {
        std::vector<DTensor> q_feats, g_feats;
        for (const auto& s : ds.sketches) q_feats.push_back(pooled_of("sketch/" + s.id, s.path));
        for (const auto& p : ds.photos) g_feats.push_back(pooled_of("photo/" + p.id, p.path));
        DTensor q = pooled_normalized_rows(q_feats);
        DTensor gal = pooled_normalized_rows(g_feats);
        auto ranked = rank_gallery(q, gal);
        RankedRetrieval rr;
        for (std::size_t i = 0; i < ds.sketches.size(); ++i) {
            RetrievalQuery query;
            query.ranked = ranked[i];
            query.true_match = ds.sketches[i].paired_photo;
            rr.push_back(std::move(query));
        }
        MetricReport report;
        report.add("acc", 1, acc_at_k(rr, 1));
        report.add("acc", 5, acc_at_k(rr, std::min<int>(5, static_cast<int>(ds.photos.size()))));
        return report;
    }

    MetricReport eval_recognition(const Dataset& ds) {
        if (!head_) throw std::runtime_error("recognition: classifier head missing");
        int hit1 = 0, hit5 = 0;
        for (const auto& s : ds.sketches) {
            DTensor pooled = pooled_of("sketch/" + s.id, s.path);
            const int classes = head_->weight.dim(1);
            std::vector<double> logits(static_cast<std::size_t>(classes));
            for (int c = 0; c < classes; ++c) {
                double acc = head_->bias.at(static_cast<std::size_t>(c));
                for (int j = 0; j < cfg_.d_agg; ++j) acc += pooled.at(static_cast<std::size_t>(j)) * head_->weight(j, c);
                logits[static_cast<std::size_t>(c)] = acc;
            }
            std::vector<int> order(static_cast<std::size_t>(classes));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)])
                    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
                return a < b;
            });
            if (order[0] == s.label) ++hit1;
            for (int k = 0; k < std::min(5, classes); ++k)
                if (order[static_cast<std::size_t>(k)] == s.label) {
                    ++hit5;
                    break;
                }
        }
        MetricReport report;
        report.add("acc", 1, static_cast<double>(hit1) / static_cast<double>(ds.sketches.size()));
        report.add("acc", 5, static_cast<double>(hit5) / static_cast<double>(ds.sketches.size()));
        return report;
    }

    MetricReport eval_correspondence(const Dataset& ds) {
        std::vector<std::array<double, 2>> all_pred, all_gt;
        for (const auto& a : ds.annotations) {
            const auto& s = ds.sketches[static_cast<std::size_t>(ds.find_sketch(a.sketch_id))];
            const auto& p = ds.photos[static_cast<std::size_t>(ds.find_photo(a.photo_id))];
            DTensor fsm = fused_plain("sketch/" + s.id, s.path);
            DTensor fpm = fused_plain("photo/" + p.id, p.path);
            std::vector<std::array<double, 2>> src, gt;
            for (const auto& kp : a.points) {
                src.push_back({kp.xs, kp.ys});
                gt.push_back({kp.xp, kp.yp});
            }
            auto pred = transfer_keypoints(fsm, fpm, src, cfg_.image_size, -1.0,
                                           cfg_.softargmax_fraction);
            for (std::size_t i = 0; i < pred.size(); ++i) {
                all_pred.push_back(pred[i]);
                all_gt.push_back(gt[i]);
            }
        }
        MetricReport report;
        for (double kp : cfg_.pck_percents)
            report.add("pck", static_cast<int>(kp), pck_at_k(all_pred, all_gt, kp, cfg_.image_size));
        return report;
    }

    MetricReport eval_segmentation(const Dataset& ds) {
        std::vector<SegMask> preds, gts;
        for (const auto& s : ds.sketches) {
            DTensor pooled = pooled_of("sketch/" + s.id, s.path);
            for (int pi : ds.photos_by_class[static_cast<std::size_t>(s.label)]) {
                const auto& p = ds.photos[static_cast<std::size_t>(pi)];
                DTensor fpm = fused_plain("photo/" + p.id, p.path);
                DTensor logits = correlation_mask_logits(pooled, fpm, cfg_.image_size, cfg_.image_size);
                preds.push_back(predict_mask(logits, cfg_.tau_test));
                gts.push_back(SegMask{load_mask_for(p)});
            }
        }
        SegScores scores = miou_pacc(preds, gts);
        MetricReport report;
        report.add("miou", scores.miou);
        report.add("pacc", scores.pacc);
        return report;
    }

    TaskConfig cfg_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<FeatureExtractor> extractor_;
    std::optional<ClassifierHead> head_;
    std::optional<FeatureCache> cache_;
    std::map<std::string, RawFeatures> raw_memo_;
};

} // namespace sketchfuse
