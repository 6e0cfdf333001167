#pragma once

#include <cmath>
#include <complex>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sketchfuse/image.hpp"
#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// Pilot-study diagnostics: PCA-to-RGB maps, 2D Fourier magnitude spectra and
// the LF/HF energy split.

// First three principal components of the h*w channel vectors, min-max scaled
// per channel to [0,1]. Deficient components (fewer than 3 nonzero variance
// directions) come out as zero channels.
inline DTensor pca_rgb(const DTensor& feature_map) {
    if (feature_map.rank() != 3) throw std::invalid_argument("pca_rgb: expected [h,w,c]");
    const int h = feature_map.dim(0), w = feature_map.dim(1), c = feature_map.dim(2);
    const int n = h * w;
    if (c < 3) throw std::invalid_argument("pca_rgb: at least 3 channels required");
    if (n < 3) throw std::invalid_argument("pca_rgb: at least 3 spatial samples required");

    Eigen::MatrixXd x(n, c);
    for (int r = 0; r < n; ++r)
        for (int k = 0; k < c; ++k) x(r, k) = feature_map.at(static_cast<std::size_t>(r) * c + k);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;

    Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pca_rgb: eigendecomposition failed");

    const double max_eval = std::max(0.0, eig.eigenvalues().maxCoeff());
    const double tol = std::max(1e-12, 1e-9 * max_eval);

    DTensor out({h, w, 3});
    for (int comp = 0; comp < 3; ++comp) {
        const int idx = c - 1 - comp; // eigenvalues ascend in Eigen
        if (eig.eigenvalues()(idx) <= tol) continue; // rank-deficient: pad with zeros
        Eigen::VectorXd scores = x * eig.eigenvectors().col(idx);
        // sign convention: the max-magnitude score is positive
        int arg = 0;
        scores.cwiseAbs().maxCoeff(&arg);
        if (scores(arg) < 0) scores = -scores;
        const double lo = scores.minCoeff(), hi = scores.maxCoeff();
        if (hi - lo <= 0) continue;
        for (int r = 0; r < n; ++r)
            out.at(static_cast<std::size_t>(r) * 3 + comp) = (scores(r) - lo) / (hi - lo);
    }
    return out;
}

// Centred 2D Fourier magnitude spectrum of the channel-mean map.
// magnitude(u,v) is linear scale with DC shifted to (h/2, w/2).
struct Spectrum {
    DTensor magnitude; // [h, w]
};

inline Spectrum fft_magnitude(const DTensor& feature_map) {
    if (feature_map.rank() != 3 && feature_map.rank() != 2)
        throw std::invalid_argument("fft_magnitude: expected [h,w,c] or [h,w]");
    const int h = feature_map.dim(0), w = feature_map.dim(1);
    const int c = feature_map.rank() == 3 ? feature_map.dim(2) : 1;

    std::vector<double> spatial(static_cast<std::size_t>(h) * w, 0.0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0;
            for (int k = 0; k < c; ++k)
                acc += feature_map.at((static_cast<std::size_t>(i) * w + j) * c + k);
            spatial[static_cast<std::size_t>(i) * w + j] = acc / c;
        }

    using cd = std::complex<double>;
    const cd iu(0.0, 1.0);
    // separable naive DFT: rows then columns
    std::vector<cd> tw_w(static_cast<std::size_t>(w) * w), tw_h(static_cast<std::size_t>(h) * h);
    for (int v = 0; v < w; ++v)
        for (int j = 0; j < w; ++j)
            tw_w[static_cast<std::size_t>(v) * w + j] = std::exp(-2.0 * M_PI * iu * (static_cast<double>(v) * j / w));
    for (int u = 0; u < h; ++u)
        for (int i = 0; i < h; ++i)
            tw_h[static_cast<std::size_t>(u) * h + i] = std::exp(-2.0 * M_PI * iu * (static_cast<double>(u) * i / h));

    std::vector<cd> rows(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int v = 0; v < w; ++v) {
            cd acc(0, 0);
            for (int j = 0; j < w; ++j)
                acc += spatial[static_cast<std::size_t>(i) * w + j] * tw_w[static_cast<std::size_t>(v) * w + j];
            rows[static_cast<std::size_t>(i) * w + v] = acc;
        }

    Spectrum s{DTensor({h, w})};
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            cd acc(0, 0);
            for (int i = 0; i < h; ++i)
                acc += rows[static_cast<std::size_t>(i) * w + v] * tw_h[static_cast<std::size_t>(u) * h + i];
            // shift DC to the centre
            const int su = (u + h / 2) % h, sv = (v + w / 2) % w;
            s.magnitude(su, sv) = std::abs(acc);
        }
    return s;
}

// log(1 + |F|), centred.
inline DTensor fft_log_magnitude(const DTensor& feature_map) {
    Spectrum s = fft_magnitude(feature_map);
    DTensor out = s.magnitude;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::log1p(out.at(i));
    return out;
}

struct LfHfSplit {
    double lf = 0;
    double hf = 0;
    double ratio = 0; // lf / (lf + hf)
};

// Energy split on the squared (pre-log) magnitude: LF inside the central disc
// of radius rho * min(h,w)/2 (inclusive), HF is the remainder.
inline LfHfSplit lf_hf_ratio(const DTensor& magnitude, double rho) {
    if (magnitude.rank() != 2) throw std::invalid_argument("lf_hf_ratio: expected [h,w]");
    if (!(rho > 0 && rho < 1)) throw std::invalid_argument("lf_hf_ratio: rho must lie in (0,1)");
    const int h = magnitude.dim(0), w = magnitude.dim(1);
    const double cy = h / 2, cx = w / 2;
    const double radius = rho * std::min(h, w) / 2.0;
    LfHfSplit out;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const double e = magnitude(u, v) * magnitude(u, v);
            const double dist = std::hypot(u - cy, v - cx);
            if (dist <= radius) out.lf += e;
            else out.hf += e;
        }
    const double total = out.lf + out.hf;
    out.ratio = total > 0 ? out.lf / total : 1.0;
    return out;
}

// Normalise a map to [0,1] for 8-bit emission; constant maps become zeros.
inline DTensor normalize_unit(const DTensor& m) {
    double lo = m.at(0), hi = m.at(0);
    for (std::size_t i = 0; i < m.numel(); ++i) {
        lo = std::min(lo, m.at(i));
        hi = std::max(hi, m.at(i));
    }
    DTensor out(m.shape());
    if (hi - lo > 0)
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = (m.at(i) - lo) / (hi - lo);
    return out;
}

// Diagnostic emission for one feature map: PCA image, spectrum image and the
// LF/HF report rows swept over rho.
struct AnalysisRow {
    std::string feature_id;
    double rho;
    LfHfSplit split;
};

inline std::vector<AnalysisRow> analyze_feature_map(const DTensor& feature_map,
                                                    const std::string& feature_id,
                                                    const std::string& out_dir,
                                                    const std::vector<double>& rhos = {0.1, 0.25, 0.5}) {
    write_png(out_dir + "/" + feature_id + "_pca.png", pca_rgb(feature_map));
    Spectrum s = fft_magnitude(feature_map);
    DTensor logm = s.magnitude;
    for (std::size_t i = 0; i < logm.numel(); ++i) logm.at(i) = std::log1p(logm.at(i));
    DTensor gray = normalize_unit(logm).reshaped({logm.dim(0), logm.dim(1), 1});
    write_png(out_dir + "/" + feature_id + "_spectrum.png", gray);
    std::vector<AnalysisRow> rows;
    for (double rho : rhos) rows.push_back({feature_id, rho, lf_hf_ratio(s.magnitude, rho)});
    return rows;
}

inline void write_analysis_report(const std::string& path, const std::vector<AnalysisRow>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("analysis report: cannot open " + path);
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s %.2f %.6g %.6g %.6f\n", r.feature_id.c_str(), r.rho,
                      r.split.lf, r.split.hf, r.split.ratio);
        os << buf;
    }
}

} // namespace sketchfuse
