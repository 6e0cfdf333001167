#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchfuse/heads.hpp"
#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// One retrieval query: gallery indices ordered by ascending feature distance
// (ties broken by ascending index), per-gallery-item relevance, and the true
// instance index when the task is instance-level.
struct RetrievalQuery {
    std::vector<int> ranked;
    std::vector<char> relevant; // indexed by gallery position
    int true_match = -1;
};

using RankedRetrieval = std::vector<RetrievalQuery>;

struct MetricNotes {
    int queries_excluded = 0; // zero relevant items
    int k_clamped = 0;        // k exceeded gallery size
};

// Order gallery indices by ascending Euclidean distance, index-ascending ties.
inline std::vector<int> rank_by_distance(const std::vector<double>& distances) {
    std::vector<int> order(distances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = distances[static_cast<std::size_t>(a)];
        const double db = distances[static_cast<std::size_t>(b)];
        if (da != db) return da < db;
        return a < b;
    });
    return order;
}

// query_feats: [Q,d], gallery_feats: [G,d]; features compared as-is.
inline std::vector<std::vector<int>> rank_gallery(const DTensor& query_feats,
                                                  const DTensor& gallery_feats) {
    if (query_feats.rank() != 2 || gallery_feats.rank() != 2 ||
        query_feats.dim(1) != gallery_feats.dim(1))
        throw std::invalid_argument("rank_gallery: feature width mismatch");
    const int q = query_feats.dim(0), g = gallery_feats.dim(0), d = query_feats.dim(1);
    std::vector<std::vector<int>> out(static_cast<std::size_t>(q));
    std::vector<double> dist(static_cast<std::size_t>(g));
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j < g; ++j) {
            double s = 0;
            for (int k = 0; k < d; ++k) {
                const double e = query_feats(i, k) - gallery_feats(j, k);
                s += e * e;
            }
            dist[static_cast<std::size_t>(j)] = std::sqrt(s);
        }
        out[static_cast<std::size_t>(i)] = rank_by_distance(dist);
    }
    return out;
}

// Truncated AP: precision-at-hit averaged over relevant hits in the top k,
// divided by min(k, total relevant).
inline double average_precision_at_k(const RetrievalQuery& q, int k) {
    int total_relevant = 0;
    for (char r : q.relevant) total_relevant += r ? 1 : 0;
    if (total_relevant == 0) throw std::invalid_argument("average_precision: no relevant items");
    const int kk = std::min<int>(k, static_cast<int>(q.ranked.size()));
    int hits = 0;
    double ap = 0;
    for (int i = 0; i < kk; ++i) {
        if (q.relevant[static_cast<std::size_t>(q.ranked[static_cast<std::size_t>(i)])]) {
            ++hits;
            ap += static_cast<double>(hits) / (i + 1);
        }
    }
    return ap / std::min(k, total_relevant);
}

inline double map_at_k(const RankedRetrieval& rr, int k, MetricNotes* notes = nullptr) {
    if (k < 1) throw std::invalid_argument("map_at_k: k must be >= 1");
    double sum = 0;
    int counted = 0;
    for (const auto& q : rr) {
        const bool any = std::any_of(q.relevant.begin(), q.relevant.end(), [](char c) { return c != 0; });
        if (!any) {
            if (notes) ++notes->queries_excluded;
            continue;
        }
        sum += average_precision_at_k(q, k);
        ++counted;
    }
    if (counted == 0) throw std::invalid_argument("map_at_k: no query has relevant items");
    return sum / counted;
}

inline double precision_at_k(const RankedRetrieval& rr, int k, MetricNotes* notes = nullptr) {
    if (k < 1) throw std::invalid_argument("precision_at_k: k must be >= 1");
    if (rr.empty()) throw std::invalid_argument("precision_at_k: no queries");
    double sum = 0;
    for (const auto& q : rr) {
        int kk = k;
        if (kk > static_cast<int>(q.ranked.size())) {
            kk = static_cast<int>(q.ranked.size());
            if (notes) ++notes->k_clamped;
        }
        int rel = 0;
        for (int i = 0; i < kk; ++i)
            rel += q.relevant[static_cast<std::size_t>(q.ranked[static_cast<std::size_t>(i)])] ? 1 : 0;
        sum += static_cast<double>(rel) / kk;
    }
    return sum / static_cast<double>(rr.size());
}

// Fraction of queries whose true instance appears in the top k.
inline double acc_at_k(const RankedRetrieval& rr, int k) {
    if (k < 1) throw std::invalid_argument("acc_at_k: k must be >= 1");
    if (rr.empty()) throw std::invalid_argument("acc_at_k: no queries");
    int hit = 0;
    for (const auto& q : rr) {
        const int kk = std::min<int>(k, static_cast<int>(q.ranked.size()));
        for (int i = 0; i < kk; ++i)
            if (q.ranked[static_cast<std::size_t>(i)] == q.true_match) {
                ++hit;
                break;
            }
    }
    return static_cast<double>(hit) / static_cast<double>(rr.size());
}

// Fraction of keypoints within k% of the image size (inclusive threshold).
inline double pck_at_k(const std::vector<std::array<double, 2>>& pred,
                       const std::vector<std::array<double, 2>>& gt, double k_percent,
                       int image_size) {
    if (pred.size() != gt.size()) throw std::invalid_argument("pck_at_k: length mismatch");
    if (pred.empty()) throw std::invalid_argument("pck_at_k: no keypoints");
    const double threshold = k_percent / 100.0 * image_size;
    int ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dx = pred[i][0] - gt[i][0], dy = pred[i][1] - gt[i][1];
        if (std::sqrt(dx * dx + dy * dy) <= threshold) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

struct SegScores {
    double miou = 0;
    double pacc = 0;
};

// Foreground IoU averaged over samples; per-sample pixel accuracy averaged.
// Empty-vs-empty IoU counts as perfect agreement (1.0).
inline SegScores miou_pacc(const std::vector<SegMask>& pred, const std::vector<SegMask>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("miou_pacc: sample count mismatch");
    double iou_sum = 0, pacc_sum = 0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        pred[s].validate();
        gt[s].validate();
        if (!pred[s].data.same_shape(gt[s].data))
            throw std::invalid_argument("miou_pacc: mask shape mismatch");
        std::size_t inter = 0, uni = 0, agree = 0;
        const auto n = pred[s].data.numel();
        for (std::size_t i = 0; i < n; ++i) {
            const bool p = pred[s].data.at(i) != 0.0, t = gt[s].data.at(i) != 0.0;
            inter += (p && t) ? 1 : 0;
            uni += (p || t) ? 1 : 0;
            agree += (p == t) ? 1 : 0;
        }
        iou_sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        pacc_sum += static_cast<double>(agree) / static_cast<double>(n);
    }
    return {iou_sum / static_cast<double>(pred.size()), pacc_sum / static_cast<double>(pred.size())};
}

// Flat metric report: one line per metric, "name k value", value to 4 decimals.
struct MetricReport {
    struct Row {
        std::string name;
        std::string k; // "-" when not applicable
        double value;
    };
    std::vector<Row> rows;

    void add(const std::string& name, int k, double value) {
        rows.push_back({name, std::to_string(k), value});
    }
    void add(const std::string& name, double value) { rows.push_back({name, "-", value}); }

    std::string to_string() const {
        std::string out;
        char buf[64];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%.4f", r.value);
            out += r.name + " " + r.k + " " + buf + "\n";
        }
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("metric report: cannot open " + path);
        os << to_string();
        if (!os) throw std::runtime_error("metric report: write failed for " + path);
    }
};

} // namespace sketchfuse
