#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sketchfuse {

// Dense row-major tensor. 4D data uses NHWC: [B, H, W, C].
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), T(0));
    }
    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dim");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& at(std::size_t i) { return data_[i]; }
    const T& at(std::size_t i) const { return data_[i]; }

    // [N, C]
    T& operator()(int i, int j) {
        return data_[static_cast<std::size_t>(i) * dim(1) + j];
    }
    const T& operator()(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * dim(1) + j];
    }
    // [H, W, C]
    T& operator()(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    const T& operator()(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    // [B, H, W, C]
    T& operator()(int b, int h, int w, int c) {
        return data_[((static_cast<std::size_t>(b) * dim(1) + h) * dim(2) + w) * dim(3) + c];
    }
    const T& operator()(int b, int h, int w, int c) const {
        return data_[((static_cast<std::size_t>(b) * dim(1) + h) * dim(2) + w) * dim(3) + c];
    }

    Tensor reshaped(std::vector<int> shape) const {
        if (numel_of(shape) != numel())
            throw std::invalid_argument("tensor: reshape changes element count");
        return Tensor(std::move(shape), data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

using DTensor = Tensor<double>;

// --- hashing -----------------------------------------------------------

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
std::uint64_t digest(const Tensor<T>& t, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = fnv1a64(t.shape().data(), t.shape().size() * sizeof(int), seed);
    return fnv1a64(t.data(), t.numel() * sizeof(T), h);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

// --- random fills ------------------------------------------------------

inline DTensor randn(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
    DTensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = dist(rng);
    return t;
}

inline DTensor rand_uniform(std::vector<int> shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    DTensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = dist(rng);
    return t;
}

// --- resampling --------------------------------------------------------

// Half-pixel-center bilinear sampling with edge clamp, NHWC in, NHWC out.
inline DTensor bilinear_resize(const DTensor& x, int out_h, int out_w) {
    if (x.rank() != 4) throw std::invalid_argument("bilinear_resize: expected [B,H,W,C]");
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    DTensor y({b, out_h, out_w, c});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int n = 0; n < b; ++n) {
        for (int i = 0; i < out_h; ++i) {
            double fy = (i + 0.5) * sy - 0.5;
            int y0 = static_cast<int>(std::floor(fy));
            double wy = fy - y0;
            int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
            for (int j = 0; j < out_w; ++j) {
                double fx = (j + 0.5) * sx - 0.5;
                int x0 = static_cast<int>(std::floor(fx));
                double wx = fx - x0;
                int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
                for (int k = 0; k < c; ++k) {
                    double v00 = x(n, y0c, x0c, k), v01 = x(n, y0c, x1c, k);
                    double v10 = x(n, y1c, x0c, k), v11 = x(n, y1c, x1c, k);
                    y(n, i, j, k) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                    wy * ((1 - wx) * v10 + wx * v11);
                }
            }
        }
    }
    return y;
}

// Mean over complete blocks, NHWC. Requires H % out_h == 0, W % out_w == 0.
inline DTensor avg_pool_blocks(const DTensor& x, int out_h, int out_w) {
    if (x.rank() != 4) throw std::invalid_argument("avg_pool_blocks: expected [B,H,W,C]");
    const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % out_h != 0 || w % out_w != 0)
        throw std::invalid_argument("avg_pool_blocks: dims not divisible");
    const int bh = h / out_h, bw = w / out_w;
    DTensor y({b, out_h, out_w, c});
    for (int n = 0; n < b; ++n)
        for (int i = 0; i < out_h; ++i)
            for (int j = 0; j < out_w; ++j)
                for (int di = 0; di < bh; ++di)
                    for (int dj = 0; dj < bw; ++dj)
                        for (int k = 0; k < c; ++k)
                            y(n, i, j, k) += x(n, i * bh + di, j * bw + dj, k);
    const double inv = 1.0 / (bh * bw);
    for (std::size_t i = 0; i < y.numel(); ++i) y.at(i) *= inv;
    return y;
}

// Linear resampling along the channel axis (last dim): matches feature widths
// without learnable parameters.
inline DTensor channel_resample(const DTensor& x, int out_c) {
    const int in_c = x.dim(x.rank() - 1);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = out_c;
    DTensor y(out_shape);
    const std::size_t rows = x.numel() / static_cast<std::size_t>(in_c);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = x.data() + r * in_c;
        double* dst = y.data() + r * out_c;
        for (int j = 0; j < out_c; ++j) {
            if (out_c == 1) { dst[j] = src[0]; continue; }
            double pos = static_cast<double>(j) * (in_c - 1) / (out_c - 1);
            int p0 = static_cast<int>(std::floor(pos));
            int p1 = std::min(p0 + 1, in_c - 1);
            double f = pos - p0;
            dst[j] = (1 - f) * src[p0] + f * src[p1];
        }
    }
    return y;
}

} // namespace sketchfuse
