#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "sketchfuse/aggregator.hpp"
#include "sketchfuse/autograd.hpp"
#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// --- domain types ----------------------------------------------------------

// Binary mask over photo pixels, values {0,1}.
struct SegMask {
    DTensor data; // [H, W]

    void validate() const {
        if (data.rank() != 2) throw std::invalid_argument("seg mask: expected [H,W]");
        for (std::size_t i = 0; i < data.numel(); ++i)
            if (data.at(i) != 0.0 && data.at(i) != 1.0)
                throw std::invalid_argument("seg mask: values must be exactly {0,1}");
    }
};

// Paired sketch/photo keypoints in pixel coordinates.
struct KeypointPair {
    double xs = 0, ys = 0, xp = 0, yp = 0;
};

struct CorrespondenceAnnotation {
    std::string sketch_id;
    std::string photo_id;
    std::vector<KeypointPair> points;

    void validate(int image_size) const {
        if (points.empty()) throw std::invalid_argument("correspondence annotation: no keypoints");
        for (const auto& p : points) {
            const bool ok = p.xs >= 0 && p.xs < image_size && p.ys >= 0 && p.ys < image_size &&
                            p.xp >= 0 && p.xp < image_size && p.yp >= 0 && p.yp < image_size;
            if (!ok)
                throw std::invalid_argument("correspondence annotation: keypoint outside image");
        }
    }
};

// Pixel coordinate -> containing cell on the 60x60 grid; ties resolve down.
inline int keypoint_cell(double coord, int image_size) {
    int c = static_cast<int>(std::floor(coord * kAggregationGrid / image_size));
    return std::clamp(c, 0, kAggregationGrid - 1);
}

// --- pooling / retrieval -----------------------------------------------------

// [B,H,W,C] -> [B,C], per-channel max over spatial locations.
inline Var pool_global(Graph& g, Var fused) { return g.global_max_pool(fused); }

inline DTensor pool_global(const DTensor& fused) {
    Graph g;
    return g.value(g.global_max_pool(g.constant(fused)));
}

// Eq. max{0, mu + d(fs,fp) - d(fs,fn)} on L2-normalised pooled features,
// batch mean. fs/fp/fn: [B,d].
inline Var triplet_loss(Graph& g, Var fs, Var fp, Var fn, double margin) {
    if (margin < 0) throw std::invalid_argument("triplet_loss: margin must be >= 0");
    for (Var v : {fs, fp, fn})
        if (!g.value(v).all_finite()) throw std::invalid_argument("triplet_loss: non-finite input");
    Var ns = g.l2_normalize_rows(fs);
    Var np = g.l2_normalize_rows(fp);
    Var nn = g.l2_normalize_rows(fn);
    Var dp = g.rows_l2_distance(ns, np);
    Var dn = g.rows_l2_distance(ns, nn);
    Var hinge = g.relu(g.add_const(g.sub(dp, dn), margin));
    return g.mean(hinge);
}

// Linear recognition head d_agg -> C.
struct ClassifierHead {
    DTensor weight; // [d, C]
    DTensor bias;   // [C]

    static ClassifierHead init(int d, int classes, std::uint64_t seed) {
        ClassifierHead h;
        h.weight = randn({d, classes}, seed ^ 0xc1a55ull, std::sqrt(1.0 / d));
        h.bias = DTensor({classes});
        return h;
    }

    struct Bound {
        Var weight, bias;
    };
    Bound bind(Graph& g, bool trainable = true) const {
        return {g.input(weight, trainable), g.input(bias, trainable)};
    }
};

inline Var classifier_logits(Graph& g, Var pooled, const ClassifierHead::Bound& head) {
    return g.add_bias(g.matmul(pooled, head.weight), head.bias);
}

// Mean softmax cross-entropy of classifier logits.
inline Var ce_loss(Graph& g, Var pooled, const std::vector<int>& labels,
                   const ClassifierHead::Bound& head) {
    return g.ce_rows(classifier_logits(g, pooled, head), labels);
}

// --- correspondence ----------------------------------------------------------

// A matched sketch/photo patch pair, indexed into flattened [P*3600, d] maps.
struct MatchedCells {
    std::vector<int> sketch_rows;
    std::vector<int> photo_rows;
    std::vector<std::array<double, 2>> source_cells; // (cx, cy) of sketch cells
    std::vector<std::array<double, 2>> target_cells; // (cx, cy) of photo cells
    int duplicates_dropped = 0;
};

// Map annotations for a batch of pairs onto grid cells; keypoints landing in
// an occupied sketch cell are dropped (first wins).
inline MatchedCells match_cells(const std::vector<CorrespondenceAnnotation>& anns, int image_size) {
    MatchedCells m;
    const int g2 = kAggregationGrid * kAggregationGrid;
    for (std::size_t pair = 0; pair < anns.size(); ++pair) {
        std::vector<bool> seen(static_cast<std::size_t>(g2), false);
        for (const auto& p : anns[pair].points) {
            const int sx = keypoint_cell(p.xs, image_size), sy = keypoint_cell(p.ys, image_size);
            const int px = keypoint_cell(p.xp, image_size), py = keypoint_cell(p.yp, image_size);
            const int scell = sy * kAggregationGrid + sx;
            if (seen[static_cast<std::size_t>(scell)]) {
                ++m.duplicates_dropped;
                continue;
            }
            seen[static_cast<std::size_t>(scell)] = true;
            m.sketch_rows.push_back(static_cast<int>(pair) * g2 + scell);
            m.photo_rows.push_back(static_cast<int>(pair) * g2 + py * kAggregationGrid + px);
            m.source_cells.push_back({static_cast<double>(sx), static_cast<double>(sy)});
            m.target_cells.push_back({static_cast<double>(px), static_cast<double>(py)});
        }
    }
    return m;
}

// Symmetric InfoNCE over matched patch features. fs_maps/fp_maps: [P,60,60,d].
inline Var patch_contrastive_loss(Graph& g, Var fs_maps, Var fp_maps, const MatchedCells& cells,
                                  double temperature) {
    if (temperature <= 0) throw std::invalid_argument("patch_contrastive_loss: temperature <= 0");
    if (cells.sketch_rows.empty())
        throw std::invalid_argument("patch_contrastive_loss: no matched cells");
    const DTensor& vs = g.value(fs_maps);
    const int d = vs.dim(3);
    const int rows = vs.dim(0) * vs.dim(1) * vs.dim(2);
    Var s = g.select_rows(g.reshape(fs_maps, {rows, d}), cells.sketch_rows);
    Var p = g.select_rows(g.reshape(fp_maps, {rows, d}), cells.photo_rows);
    s = g.l2_normalize_rows(s);
    p = g.l2_normalize_rows(p);
    Var logits = g.scale(g.matmul(s, g.transpose2d(p)), 1.0 / temperature);
    std::vector<int> diag(cells.sketch_rows.size());
    for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
    Var fwd = g.ce_rows(logits, diag);
    Var bwd = g.ce_rows(g.transpose2d(logits), diag);
    return g.scale(g.add(fwd, bwd), 0.5);
}

inline std::vector<double> flat_cell_coords() {
    std::vector<double> coords;
    coords.reserve(static_cast<std::size_t>(kAggregationGrid) * kAggregationGrid * 2);
    for (int cy = 0; cy < kAggregationGrid; ++cy)
        for (int cx = 0; cx < kAggregationGrid; ++cx) {
            coords.push_back(static_cast<double>(cx));
            coords.push_back(static_cast<double>(cy));
        }
    return coords;
}

// Soft-argmax temperature: fraction of the max correlation magnitude.
inline double soft_argmax_temperature(const DTensor& corr, double fraction = 0.05) {
    double mx = 0;
    for (std::size_t i = 0; i < corr.numel(); ++i) mx = std::max(mx, std::abs(corr.at(i)));
    return mx > 0 ? fraction * mx : fraction;
}

// Differentiable expected target cells for selected sketch cells.
// Returns [K,2] (cx, cy).
inline Var expected_target_cells(Graph& g, Var fs_maps, Var fp_maps, int pair,
                                 const std::vector<int>& sketch_rows, double temperature,
                                 double fraction = 0.05) {
    const DTensor& vs = g.value(fs_maps);
    const int d = vs.dim(3), g2 = kAggregationGrid * kAggregationGrid;
    const int rows = vs.dim(0) * g2;
    Var s = g.select_rows(g.reshape(fs_maps, {rows, d}), sketch_rows);
    std::vector<int> pair_rows(static_cast<std::size_t>(g2));
    for (int i = 0; i < g2; ++i) pair_rows[static_cast<std::size_t>(i)] = pair * g2 + i;
    Var p = g.select_rows(g.reshape(fp_maps, {rows, d}), pair_rows);
    s = g.l2_normalize_rows(s);
    p = g.l2_normalize_rows(p);
    Var corr = g.matmul(s, g.transpose2d(p)); // [K, 3600]
    const double tau =
        temperature > 0 ? temperature : soft_argmax_temperature(g.value(corr), fraction);
    Var w = g.softmax_rows(g.scale(corr, 1.0 / tau));
    Var coords = g.constant(DTensor({g2, 2}, flat_cell_coords()));
    return g.matmul(w, coords);
}

// Dense flow via soft-argmax over cosine correlation; cell units.
// fs_map/fp_map: [60,60,d] -> [60,60,2]. temperature <= 0 selects the
// default fraction of the max correlation scale.
inline DTensor flow_from_correlation(const DTensor& fs_map, const DTensor& fp_map,
                                     double temperature = -1.0, double fraction = 0.05) {
    if (fs_map.rank() != 3 || !fs_map.same_shape(fp_map))
        throw std::invalid_argument("flow_from_correlation: expected matching [60,60,d]");
    const int gr = fs_map.dim(0), d = fs_map.dim(2), g2 = gr * fs_map.dim(1);
    Graph g;
    Var s = g.l2_normalize_rows(g.constant(fs_map.reshaped({g2, d})));
    Var p = g.l2_normalize_rows(g.constant(fp_map.reshaped({g2, d})));
    Var corr = g.matmul(s, g.transpose2d(p));
    const double tau =
        temperature > 0 ? temperature : soft_argmax_temperature(g.value(corr), fraction);
    Var w = g.softmax_rows(g.scale(corr, 1.0 / tau));
    std::vector<double> coords_v;
    coords_v.reserve(static_cast<std::size_t>(g2) * 2);
    for (int cy = 0; cy < gr; ++cy)
        for (int cx = 0; cx < fs_map.dim(1); ++cx) {
            coords_v.push_back(static_cast<double>(cx));
            coords_v.push_back(static_cast<double>(cy));
        }
    Var expected = g.matmul(w, g.constant(DTensor({g2, 2}, coords_v)));
    const DTensor& e = g.value(expected);
    DTensor flow({gr, fs_map.dim(1), 2});
    for (int cy = 0; cy < gr; ++cy)
        for (int cx = 0; cx < fs_map.dim(1); ++cx) {
            const int r = cy * fs_map.dim(1) + cx;
            flow(cy, cx, 0) = e(r, 0) - cx;
            flow(cy, cx, 1) = e(r, 1) - cy;
        }
    return flow;
}

// Mean per-cell flow error over valid cells. Squared L2 by default (matching
// the loss definition); unsquared end-point error available by flag.
inline Var epe_loss(Graph& g, Var flow_est, const DTensor& flow_gt, bool squared = true) {
    const DTensor& ve = g.value(flow_est);
    if (ve.rank() != 2 || ve.dim(1) != 2 || !ve.same_shape(flow_gt))
        throw std::invalid_argument("epe_loss: expected matching [M,2]");
    const int m = ve.dim(0);
    if (m == 0) throw std::invalid_argument("epe_loss: no valid cells");
    Var err = g.sub(flow_est, g.constant(flow_gt));
    if (squared) return g.scale(g.sum(g.mul(err, err)), 1.0 / m);
    Var zero = g.constant(DTensor({m, 2}));
    return g.mean(g.rows_l2_distance(err, zero));
}

// Per keypoint: source patch feature -> cosine similarity over target patches
// -> soft-argmax cell -> cell centre in pixels.
inline std::vector<std::array<double, 2>> transfer_keypoints(
    const DTensor& fs_map, const DTensor& fp_map,
    const std::vector<std::array<double, 2>>& source_px, int image_size,
    double temperature = -1.0, double fraction = 0.05) {
    const int gr = fs_map.dim(0), d = fs_map.dim(2), g2 = gr * fs_map.dim(1);
    Graph g;
    std::vector<int> rows;
    rows.reserve(source_px.size());
    for (const auto& kp : source_px) {
        const int cx = keypoint_cell(kp[0], image_size), cy = keypoint_cell(kp[1], image_size);
        rows.push_back(cy * fs_map.dim(1) + cx);
    }
    Var s = g.select_rows(g.constant(fs_map.reshaped({g2, d})), rows);
    Var p = g.constant(fp_map.reshaped({g2, d}));
    s = g.l2_normalize_rows(s);
    p = g.l2_normalize_rows(p);
    Var corr = g.matmul(s, g.transpose2d(p));
    const double tau =
        temperature > 0 ? temperature : soft_argmax_temperature(g.value(corr), fraction);
    Var w = g.softmax_rows(g.scale(corr, 1.0 / tau));
    std::vector<double> coords_v;
    coords_v.reserve(static_cast<std::size_t>(g2) * 2);
    for (int cy = 0; cy < gr; ++cy)
        for (int cx = 0; cx < fs_map.dim(1); ++cx) {
            coords_v.push_back(static_cast<double>(cx));
            coords_v.push_back(static_cast<double>(cy));
        }
    const DTensor& e = g.value(g.matmul(w, g.constant(DTensor({g2, 2}, coords_v))));
    const double cell_px = static_cast<double>(image_size) / gr;
    std::vector<std::array<double, 2>> out(source_px.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i][0] = (e(static_cast<int>(i), 0) + 0.5) * cell_px;
        out[i][1] = (e(static_cast<int>(i), 1) + 0.5) * cell_px;
    }
    return out;
}

// --- segmentation --------------------------------------------------------------

// Cosine map between a pooled sketch feature and every photo patch, upsampled
// to pixel resolution. fs: [d] (or [1,d]), fp_map: [60,60,d] -> [H,W] in [-1,1].
inline Var correlation_mask_logits(Graph& g, Var fs, Var fp_map, int out_h, int out_w) {
    const DTensor& vm = g.value(fp_map);
    if (vm.rank() != 3) throw std::invalid_argument("correlation_mask_logits: map must be [h,w,d]");
    const int gr = vm.dim(0), gc = vm.dim(1), d = vm.dim(2);
    if (g.value(fs).numel() != static_cast<std::size_t>(d))
        throw std::invalid_argument("correlation_mask_logits: feature width mismatch");
    // zero-norm features are a contract violation, not a NaN source
    {
        double n2 = 0;
        const DTensor& vf = g.value(fs);
        for (std::size_t i = 0; i < vf.numel(); ++i) n2 += vf.at(i) * vf.at(i);
        if (n2 == 0.0) throw std::invalid_argument("correlation_mask_logits: zero-norm sketch feature");
        for (int r = 0; r < gr * gc; ++r) {
            double p2 = 0;
            for (int k = 0; k < d; ++k) p2 += vm.at(static_cast<std::size_t>(r) * d + k) *
                                              vm.at(static_cast<std::size_t>(r) * d + k);
            if (p2 == 0.0)
                throw std::invalid_argument("correlation_mask_logits: zero-norm photo patch");
        }
    }
    Var fsn = g.l2_normalize_rows(g.reshape(fs, {1, d}));
    Var pn = g.l2_normalize_rows(g.reshape(fp_map, {gr * gc, d}));
    Var cosines = g.matmul(pn, g.transpose2d(fsn)); // [gr*gc, 1]
    Var grid = g.reshape(cosines, {1, gr, gc, 1});
    Var up = g.bilinear(grid, out_h, out_w);
    return g.reshape(up, {out_h, out_w});
}

inline DTensor correlation_mask_logits(const DTensor& fs, const DTensor& fp_map, int out_h,
                                       int out_w) {
    Graph g;
    return g.value(correlation_mask_logits(g, g.constant(fs), g.constant(fp_map), out_h, out_w));
}

// BCE on the differentiable sigmoid-thresholded map: y_hat = sigmoid(k(c - tau)).
inline Var seg_train_loss(Graph& g, Var logit_map, const SegMask& gt, double steepness,
                          double tau_train) {
    gt.validate();
    const DTensor& vm = g.value(logit_map);
    if (!vm.same_shape(gt.data)) throw std::invalid_argument("seg_train_loss: shape mismatch");
    Var pred = g.sigmoid(g.scale(g.add_const(logit_map, -tau_train), steepness));
    return g.bce_mean(pred, gt.data, 1e-7);
}

using MaskPostProcess = std::function<SegMask(const SegMask&, const DTensor& logit_map)>;

inline SegMask identity_post_process(const SegMask& m, const DTensor&) { return m; }

// Fixed-threshold binarisation plus a pluggable post-processing hook
// (CRF-style refinement slots in here; default is identity).
inline SegMask predict_mask(const DTensor& logit_map, double tau_test = 0.47,
                            const MaskPostProcess& post = identity_post_process) {
    if (logit_map.rank() != 2) throw std::invalid_argument("predict_mask: expected [H,W]");
    SegMask m{DTensor(logit_map.shape())};
    for (std::size_t i = 0; i < m.data.numel(); ++i)
        m.data.at(i) = logit_map.at(i) >= tau_test ? 1.0 : 0.0;
    return post(m, logit_map);
}

} // namespace sketchfuse
