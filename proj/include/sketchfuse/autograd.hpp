#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// Reverse-mode tape over DTensor. Each op records a backward closure; calling
// backward(loss) walks the tape in reverse. Graphs are single-use and built
// per forward pass.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(DTensor v, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(v), DTensor(), requires_grad, nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }
    Var constant(DTensor v) { return input(std::move(v), false); }
    Var param(const DTensor& v) { return input(v, true); }
    Var scalar_const(double v) { return constant(DTensor({1}, {v})); }

    const DTensor& value(Var v) const { return node(v).value; }
    const DTensor& grad(Var v) const {
        if (node(v).grad.numel() == 0)
            throw std::logic_error("graph: grad not populated (run backward first)");
        return node(v).grad;
    }

    void backward(Var loss) {
        if (node(loss).value.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad = DTensor(n.value.shape());
        if (!node(loss).requires_grad)
            throw std::invalid_argument("backward: loss does not depend on any parameter");
        node(loss).grad.at(0) = 1.0;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
            if (nodes_[static_cast<std::size_t>(i)].backward) nodes_[static_cast<std::size_t>(i)].backward();
    }

    // --- elementwise ----------------------------------------------------

    Var add(Var a, Var b) {
        check_same_shape("add", a, b);
        DTensor out = value(a);
        const DTensor& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += vb.at(i);
        return make(std::move(out), {a, b}, [this, a, b](Var y) {
            accum(a, node(y).grad);
            accum(b, node(y).grad);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape("sub", a, b);
        DTensor out = value(a);
        const DTensor& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) -= vb.at(i);
        return make(std::move(out), {a, b}, [this, a, b](Var y) {
            accum(a, node(y).grad);
            if (node(b).requires_grad) {
                DTensor g = node(y).grad;
                for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) = -g.at(i);
                accum(b, g);
            }
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape("mul", a, b);
        DTensor out = value(a);
        const DTensor& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= vb.at(i);
        return make(std::move(out), {a, b}, [this, a, b](Var y) {
            const DTensor& g = node(y).grad;
            if (node(a).requires_grad) {
                DTensor ga = g;
                const DTensor& vb2 = value(b);
                for (std::size_t i = 0; i < ga.numel(); ++i) ga.at(i) *= vb2.at(i);
                accum(a, ga);
            }
            if (node(b).requires_grad) {
                DTensor gb = g;
                const DTensor& va2 = value(a);
                for (std::size_t i = 0; i < gb.numel(); ++i) gb.at(i) *= va2.at(i);
                accum(b, gb);
            }
        });
    }

    Var scale(Var a, double s) {
        DTensor out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= s;
        return make(std::move(out), {a}, [this, a, s](Var y) {
            DTensor g = node(y).grad;
            for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) *= s;
            accum(a, g);
        });
    }

    Var add_const(Var a, double c) {
        DTensor out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += c;
        return make(std::move(out), {a}, [this, a](Var y) { accum(a, node(y).grad); });
    }

    // s: [1] scalar var broadcast over a.
    Var scalar_mul(Var s, Var a) {
        if (value(s).numel() != 1) throw std::invalid_argument("scalar_mul: s must be [1]");
        DTensor out = value(a);
        const double sv = value(s).at(0);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= sv;
        return make(std::move(out), {s, a}, [this, s, a](Var y) {
            const DTensor& g = node(y).grad;
            if (node(a).requires_grad) {
                DTensor ga = g;
                const double sv2 = value(s).at(0);
                for (std::size_t i = 0; i < ga.numel(); ++i) ga.at(i) *= sv2;
                accum(a, ga);
            }
            if (node(s).requires_grad) {
                double acc = 0;
                const DTensor& va = value(a);
                for (std::size_t i = 0; i < g.numel(); ++i) acc += g.at(i) * va.at(i);
                accum(s, DTensor({1}, {acc}));
            }
        });
    }

    Var relu(Var a) {
        DTensor out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::max(0.0, out.at(i));
        return make(std::move(out), {a}, [this, a](Var y) {
            DTensor g = node(y).grad;
            const DTensor& va = value(a);
            for (std::size_t i = 0; i < g.numel(); ++i)
                if (va.at(i) <= 0.0) g.at(i) = 0.0;
            accum(a, g);
        });
    }

    Var sigmoid(Var a) {
        DTensor out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = 1.0 / (1.0 + std::exp(-out.at(i)));
        return make(std::move(out), {a}, [this, a](Var y) {
            DTensor g = node(y).grad;
            const DTensor& vy = node(y).value;
            for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) *= vy.at(i) * (1.0 - vy.at(i));
            accum(a, g);
        });
    }

    // --- shape ------------------------------------------------------------

    Var reshape(Var a, std::vector<int> shape) {
        DTensor out = value(a).reshaped(shape);
        return make(std::move(out), {a}, [this, a](Var y) {
            accum(a, node(y).grad.reshaped(value(a).shape()));
        });
    }

    Var transpose2d(Var a) {
        const DTensor& va = value(a);
        if (va.rank() != 2) throw std::invalid_argument("transpose2d: expected [M,N]");
        const int m = va.dim(0), n = va.dim(1);
        DTensor out({n, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out(j, i) = va(i, j);
        return make(std::move(out), {a}, [this, a, m, n](Var y) {
            const DTensor& g = node(y).grad;
            DTensor ga({m, n});
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga(i, j) = g(j, i);
            accum(a, ga);
        });
    }

    Var select_rows(Var a, std::vector<int> idx) {
        const DTensor& va = value(a);
        if (va.rank() != 2) throw std::invalid_argument("select_rows: expected [N,C]");
        const int c = va.dim(1);
        DTensor out({static_cast<int>(idx.size()), c});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] < 0 || idx[r] >= va.dim(0)) throw std::out_of_range("select_rows: index");
            std::memcpy(out.data() + r * c, va.data() + static_cast<std::size_t>(idx[r]) * c,
                        sizeof(double) * static_cast<std::size_t>(c));
        }
        return make(std::move(out), {a}, [this, a, idx, c](Var y) {
            const DTensor& g = node(y).grad;
            DTensor ga(value(a).shape());
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int j = 0; j < c; ++j) ga(idx[r], j) += g(static_cast<int>(r), j);
            accum(a, ga);
        });
    }

    // Stack [Ni, C] blocks into [sum Ni, C].
    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
        const int c = value(parts[0]).dim(1);
        int total = 0;
        for (Var v : parts) {
            const DTensor& t = value(v);
            if (t.rank() != 2 || t.dim(1) != c)
                throw std::invalid_argument("concat_rows: width mismatch");
            total += t.dim(0);
        }
        DTensor out({total, c});
        std::size_t off = 0;
        for (Var v : parts) {
            const DTensor& t = value(v);
            std::memcpy(out.data() + off, t.data(), t.numel() * sizeof(double));
            off += t.numel();
        }
        bool req = false;
        for (Var v : parts) req = req || node(v).requires_grad;
        nodes_.push_back(Node{std::move(out), DTensor(), req, nullptr});
        Var y{static_cast<int>(nodes_.size()) - 1};
        if (req) {
            std::vector<Var> inputs = parts;
            nodes_.back().backward = [this, inputs, y]() {
                const DTensor& g = node(y).grad;
                std::size_t off2 = 0;
                for (Var v : inputs) {
                    Node& n = node(v);
                    const std::size_t count = n.value.numel();
                    if (n.requires_grad)
                        for (std::size_t i = 0; i < count; ++i) n.grad.at(i) += g.at(off2 + i);
                    off2 += count;
                }
            };
        }
        return y;
    }

    // --- linear algebra ---------------------------------------------------

    Var matmul(Var a, Var b) {
        const DTensor& va = value(a);
        const DTensor& vb = value(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
            throw std::invalid_argument("matmul: shape mismatch");
        const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
        DTensor out({m, n});
        matmul_plain(va.data(), vb.data(), out.data(), m, k, n);
        return make(std::move(out), {a, b}, [this, a, b, m, k, n](Var y) {
            const DTensor& g = node(y).grad;
            if (node(a).requires_grad) { // dA = G * B^T
                const DTensor& vb2 = value(b);
                DTensor ga({m, k});
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gij = g(i, j);
                        if (gij == 0.0) continue;
                        for (int p = 0; p < k; ++p) ga(i, p) += gij * vb2(p, j);
                    }
                accum(a, ga);
            }
            if (node(b).requires_grad) { // dB = A^T * G
                const DTensor& va2 = value(a);
                DTensor gb({k, n});
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const double aip = va2(i, p);
                        if (aip == 0.0) continue;
                        for (int j = 0; j < n; ++j) gb(p, j) += aip * g(i, j);
                    }
                accum(b, gb);
            }
        });
    }

    // x: [..., C], b: [C]
    Var add_bias(Var x, Var b) {
        const DTensor& vx = value(x);
        const DTensor& vb = value(b);
        const int c = vx.dim(vx.rank() - 1);
        if (vb.rank() != 1 || vb.dim(0) != c) throw std::invalid_argument("add_bias: width mismatch");
        DTensor out = vx;
        const std::size_t rows = out.numel() / static_cast<std::size_t>(c);
        for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) out.at(r * c + j) += vb.at(static_cast<std::size_t>(j));
        return make(std::move(out), {x, b}, [this, x, b, c](Var y) {
            const DTensor& g = node(y).grad;
            if (node(x).requires_grad) accum(x, g);
            if (node(b).requires_grad) {
                DTensor gb({c});
                const std::size_t rows = g.numel() / static_cast<std::size_t>(c);
                for (std::size_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) gb.at(static_cast<std::size_t>(j)) += g.at(r * c + j);
                accum(b, gb);
            }
        });
    }

    // x: [B,H,W,Cin], w: [Kh,Kw,Cin,Cout], stride 1, zero 'same' padding.
    Var conv2d(Var x, Var w) {
        const DTensor& vx = value(x);
        const DTensor& vw = value(w);
        if (vx.rank() != 4 || vw.rank() != 4 || vx.dim(3) != vw.dim(2))
            throw std::invalid_argument("conv2d: shape mismatch");
        if (vw.dim(0) % 2 == 0 || vw.dim(1) % 2 == 0)
            throw std::invalid_argument("conv2d: kernel dims must be odd");
        const int b = vx.dim(0), h = vx.dim(1), ww = vx.dim(2), ci = vx.dim(3);
        const int kh = vw.dim(0), kw = vw.dim(1), co = vw.dim(3);
        const int ph = kh / 2, pw = kw / 2;
        DTensor out({b, h, ww, co});
        for (int n = 0; n < b; ++n)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < ww; ++j) {
                    double* dst = &out(n, i, j, 0);
                    for (int di = 0; di < kh; ++di) {
                        const int ii = i + di - ph;
                        if (ii < 0 || ii >= h) continue;
                        for (int dj = 0; dj < kw; ++dj) {
                            const int jj = j + dj - pw;
                            if (jj < 0 || jj >= ww) continue;
                            const double* src = &vx(n, ii, jj, 0);
                            const double* ker = &vw(di, dj, 0, 0);
                            for (int p = 0; p < ci; ++p) {
                                const double xv = src[p];
                                const double* kc = ker + static_cast<std::size_t>(p) * co;
                                for (int q = 0; q < co; ++q) dst[q] += xv * kc[q];
                            }
                        }
                    }
                }
        return make(std::move(out), {x, w}, [this, x, w, b, h, ww, ci, kh, kw, co, ph, pw](Var y) {
            const DTensor& g = node(y).grad;
            const DTensor& vx2 = value(x);
            const DTensor& vw2 = value(w);
            const bool need_x = node(x).requires_grad;
            const bool need_w = node(w).requires_grad;
            DTensor gx(need_x ? vx2.shape() : std::vector<int>{1});
            DTensor gw(need_w ? vw2.shape() : std::vector<int>{1});
            for (int n = 0; n < b; ++n)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < ww; ++j) {
                        const double* gout = &g(n, i, j, 0);
                        for (int di = 0; di < kh; ++di) {
                            const int ii = i + di - ph;
                            if (ii < 0 || ii >= h) continue;
                            for (int dj = 0; dj < kw; ++dj) {
                                const int jj = j + dj - pw;
                                if (jj < 0 || jj >= ww) continue;
                                for (int p = 0; p < ci; ++p) {
                                    const double xv = vx2(n, ii, jj, p);
                                    const double* kc = &vw2(di, dj, p, 0);
                                    double gacc = 0;
                                    for (int q = 0; q < co; ++q) {
                                        const double gq = gout[q];
                                        gacc += gq * kc[q];
                                        if (need_w) gw(di, dj, p, q) += xv * gq;
                                    }
                                    if (need_x) gx(n, ii, jj, p) += gacc;
                                }
                            }
                        }
                    }
            if (need_x) accum(x, gx);
            if (need_w) accum(w, gw);
        });
    }

    // --- resampling -------------------------------------------------------

    Var bilinear(Var x, int out_h, int out_w) {
        DTensor out = bilinear_resize(value(x), out_h, out_w);
        return make(std::move(out), {x}, [this, x, out_h, out_w](Var y) {
            const DTensor& g = node(y).grad;
            const DTensor& vx = value(x);
            const int b = vx.dim(0), h = vx.dim(1), w = vx.dim(2), c = vx.dim(3);
            DTensor gx(vx.shape());
            const double sy = static_cast<double>(h) / out_h;
            const double sx = static_cast<double>(w) / out_w;
            for (int n = 0; n < b; ++n)
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
                            const double gv = g(n, i, j, k);
                            gx(n, y0c, x0c, k) += gv * (1 - wy) * (1 - wx);
                            gx(n, y0c, x1c, k) += gv * (1 - wy) * wx;
                            gx(n, y1c, x0c, k) += gv * wy * (1 - wx);
                            gx(n, y1c, x1c, k) += gv * wy * wx;
                        }
                    }
                }
            accum(x, gx);
        });
    }

    // Linear resampling along the last dim, mirroring channel_resample().
    Var channel_resample_op(Var x, int out_c) {
        DTensor out = channel_resample(value(x), out_c);
        return make(std::move(out), {x}, [this, x, out_c](Var y) {
            const DTensor& g = node(y).grad;
            const DTensor& vx = value(x);
            const int in_c = vx.dim(vx.rank() - 1);
            DTensor gx(vx.shape());
            const std::size_t rows = vx.numel() / static_cast<std::size_t>(in_c);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * out_c;
                double* dst = gx.data() + r * in_c;
                for (int j = 0; j < out_c; ++j) {
                    if (out_c == 1) { dst[0] += gr[j]; continue; }
                    double pos = static_cast<double>(j) * (in_c - 1) / (out_c - 1);
                    int p0 = static_cast<int>(std::floor(pos));
                    int p1 = std::min(p0 + 1, in_c - 1);
                    double f = pos - p0;
                    dst[p0] += (1 - f) * gr[j];
                    dst[p1] += f * gr[j];
                }
            }
            accum(x, gx);
        });
    }

    // --- normalisation ----------------------------------------------------

    // Normalise across the last dim per location; learnable gain/bias [C].
    Var layer_norm_lastdim(Var x, Var gain, Var bias, double eps = 1e-5) {
        const DTensor& vx = value(x);
        const int c = vx.dim(vx.rank() - 1);
        if (value(gain).dim(0) != c || value(bias).dim(0) != c)
            throw std::invalid_argument("layer_norm: gain/bias width mismatch");
        const std::size_t rows = vx.numel() / static_cast<std::size_t>(c);
        DTensor out(vx.shape());
        DTensor xhat(vx.shape());
        std::vector<double> inv_std(rows);
        const DTensor& vg = value(gain);
        const DTensor& vb = value(bias);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* src = vx.data() + r * c;
            double mu = 0;
            for (int j = 0; j < c; ++j) mu += src[j];
            mu /= c;
            double var = 0;
            for (int j = 0; j < c; ++j) var += (src[j] - mu) * (src[j] - mu);
            var /= c;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[r] = is;
            for (int j = 0; j < c; ++j) {
                const double xh = (src[j] - mu) * is;
                xhat.at(r * c + j) = xh;
                out.at(r * c + j) = vg.at(static_cast<std::size_t>(j)) * xh + vb.at(static_cast<std::size_t>(j));
            }
        }
        auto xhat_p = std::make_shared<DTensor>(std::move(xhat));
        auto istd_p = std::make_shared<std::vector<double>>(std::move(inv_std));
        return make(std::move(out), {x, gain, bias},
                    [this, x, gain, bias, c, rows, xhat_p, istd_p](Var y) {
            const DTensor& g = node(y).grad;
            const DTensor& vg2 = value(gain);
            if (node(gain).requires_grad || node(bias).requires_grad) {
                DTensor gg({c}), gb({c});
                for (std::size_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) {
                        gg.at(static_cast<std::size_t>(j)) += g.at(r * c + j) * xhat_p->at(r * c + j);
                        gb.at(static_cast<std::size_t>(j)) += g.at(r * c + j);
                    }
                if (node(gain).requires_grad) accum(gain, gg);
                if (node(bias).requires_grad) accum(bias, gb);
            }
            if (node(x).requires_grad) {
                DTensor gx(value(x).shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0, m2 = 0;
                    for (int j = 0; j < c; ++j) {
                        const double gy = g.at(r * c + j) * vg2.at(static_cast<std::size_t>(j));
                        m1 += gy;
                        m2 += gy * xhat_p->at(r * c + j);
                    }
                    m1 /= c;
                    m2 /= c;
                    for (int j = 0; j < c; ++j) {
                        const double gy = g.at(r * c + j) * vg2.at(static_cast<std::size_t>(j));
                        gx.at(r * c + j) = ((*istd_p)[r]) * (gy - m1 - xhat_p->at(r * c + j) * m2);
                    }
                }
                accum(x, gx);
            }
        });
    }

    // Row-wise y = x / sqrt(|x|^2 + eps), x: [N,C].
    Var l2_normalize_rows(Var x, double eps = 1e-12) {
        const DTensor& vx = value(x);
        if (vx.rank() != 2) throw std::invalid_argument("l2_normalize_rows: expected [N,C]");
        const int n = vx.dim(0), c = vx.dim(1);
        DTensor out(vx.shape());
        std::vector<double> norms(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double s = 0;
            for (int j = 0; j < c; ++j) s += vx(i, j) * vx(i, j);
            const double nn = std::sqrt(s + eps);
            norms[static_cast<std::size_t>(i)] = nn;
            for (int j = 0; j < c; ++j) out(i, j) = vx(i, j) / nn;
        }
        auto norms_p = std::make_shared<std::vector<double>>(std::move(norms));
        return make(std::move(out), {x}, [this, x, n, c, norms_p](Var y) {
            const DTensor& g = node(y).grad;
            const DTensor& vy = node(y).value;
            DTensor gx(value(x).shape());
            for (int i = 0; i < n; ++i) {
                double gy = 0;
                for (int j = 0; j < c; ++j) gy += g(i, j) * vy(i, j);
                for (int j = 0; j < c; ++j)
                    gx(i, j) = (g(i, j) - gy * vy(i, j)) / (*norms_p)[static_cast<std::size_t>(i)];
            }
            accum(x, gx);
        });
    }

    // --- reductions -------------------------------------------------------

    Var sum(Var a) {
        double s = 0;
        const DTensor& va = value(a);
        for (std::size_t i = 0; i < va.numel(); ++i) s += va.at(i);
        return make(DTensor({1}, {s}), {a}, [this, a](Var y) {
            const double gv = node(y).grad.at(0);
            DTensor ga(value(a).shape());
            for (std::size_t i = 0; i < ga.numel(); ++i) ga.at(i) = gv;
            accum(a, ga);
        });
    }

    Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).numel())); }

    // x: [B,H,W,C] -> [B,C]; gradient routed to the first max per channel.
    Var global_max_pool(Var x) {
        const DTensor& vx = value(x);
        if (vx.rank() != 4) throw std::invalid_argument("global_max_pool: expected [B,H,W,C]");
        const int b = vx.dim(0), h = vx.dim(1), w = vx.dim(2), c = vx.dim(3);
        DTensor out({b, c});
        auto arg = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(b) * c);
        for (int n = 0; n < b; ++n)
            for (int k = 0; k < c; ++k) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_i = 0;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        const double v = vx(n, i, j, k);
                        if (v > best) {
                            best = v;
                            best_i = ((static_cast<std::size_t>(n) * h + i) * w + j) * c + k;
                        }
                    }
                out(n, k) = best;
                (*arg)[static_cast<std::size_t>(n) * c + k] = best_i;
            }
        return make(std::move(out), {x}, [this, x, b, c, arg](Var y) {
            const DTensor& g = node(y).grad;
            DTensor gx(value(x).shape());
            for (int n = 0; n < b; ++n)
                for (int k = 0; k < c; ++k)
                    gx.at((*arg)[static_cast<std::size_t>(n) * c + k]) += g(n, k);
            accum(x, gx);
        });
    }

    // Row-wise Euclidean distance with smoothing eps inside the sqrt.
    Var rows_l2_distance(Var a, Var b, double eps = 1e-12) {
        check_same_shape("rows_l2_distance", a, b);
        const DTensor& va = value(a);
        if (va.rank() != 2) throw std::invalid_argument("rows_l2_distance: expected [N,C]");
        const int n = va.dim(0), c = va.dim(1);
        DTensor out({n});
        const DTensor& vb = value(b);
        for (int i = 0; i < n; ++i) {
            double s = 0;
            for (int j = 0; j < c; ++j) {
                const double d = va(i, j) - vb(i, j);
                s += d * d;
            }
            out.at(static_cast<std::size_t>(i)) = std::sqrt(s + eps);
        }
        return make(std::move(out), {a, b}, [this, a, b, n, c](Var y) {
            const DTensor& g = node(y).grad;
            const DTensor& vy = node(y).value;
            const DTensor& va2 = value(a);
            const DTensor& vb2 = value(b);
            DTensor ga(va2.shape()), gb(vb2.shape());
            for (int i = 0; i < n; ++i) {
                const double f = g.at(static_cast<std::size_t>(i)) / vy.at(static_cast<std::size_t>(i));
                for (int j = 0; j < c; ++j) {
                    const double d = (va2(i, j) - vb2(i, j)) * f;
                    ga(i, j) = d;
                    gb(i, j) = -d;
                }
            }
            if (node(a).requires_grad) accum(a, ga);
            if (node(b).requires_grad) accum(b, gb);
        });
    }

    Var softmax_rows(Var x) {
        const DTensor& vx = value(x);
        if (vx.rank() != 2) throw std::invalid_argument("softmax_rows: expected [N,M]");
        const int n = vx.dim(0), m = vx.dim(1);
        DTensor out(vx.shape());
        for (int i = 0; i < n; ++i) {
            double mx = vx(i, 0);
            for (int j = 1; j < m; ++j) mx = std::max(mx, vx(i, j));
            double z = 0;
            for (int j = 0; j < m; ++j) {
                const double e = std::exp(vx(i, j) - mx);
                out(i, j) = e;
                z += e;
            }
            for (int j = 0; j < m; ++j) out(i, j) /= z;
        }
        return make(std::move(out), {x}, [this, x, n, m](Var y) {
            const DTensor& g = node(y).grad;
            const DTensor& vy = node(y).value;
            DTensor gx(value(x).shape());
            for (int i = 0; i < n; ++i) {
                double dot = 0;
                for (int j = 0; j < m; ++j) dot += g(i, j) * vy(i, j);
                for (int j = 0; j < m; ++j) gx(i, j) = vy(i, j) * (g(i, j) - dot);
            }
            accum(x, gx);
        });
    }

    // Mean softmax cross-entropy over rows.
    Var ce_rows(Var logits, std::vector<int> labels) {
        const DTensor& vx = value(logits);
        if (vx.rank() != 2) throw std::invalid_argument("ce_rows: expected [N,C]");
        const int n = vx.dim(0), c = vx.dim(1);
        if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("ce_rows: label count");
        for (int l : labels)
            if (l < 0 || l >= c) throw std::out_of_range("ce_rows: label out of range");
        double loss = 0;
        for (int i = 0; i < n; ++i) {
            double mx = vx(i, 0);
            for (int j = 1; j < c; ++j) mx = std::max(mx, vx(i, j));
            double z = 0;
            for (int j = 0; j < c; ++j) z += std::exp(vx(i, j) - mx);
            loss += (mx + std::log(z)) - vx(i, labels[static_cast<std::size_t>(i)]);
        }
        loss /= n;
        return make(DTensor({1}, {loss}), {logits}, [this, logits, labels, n, c](Var y) {
            const double gv = node(y).grad.at(0) / n;
            const DTensor& vx2 = value(logits);
            DTensor gx(vx2.shape());
            for (int i = 0; i < n; ++i) {
                double mx = vx2(i, 0);
                for (int j = 1; j < c; ++j) mx = std::max(mx, vx2(i, j));
                double z = 0;
                for (int j = 0; j < c; ++j) z += std::exp(vx2(i, j) - mx);
                for (int j = 0; j < c; ++j) {
                    double p = std::exp(vx2(i, j) - mx) / z;
                    gx(i, j) = gv * (p - (labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0));
                }
            }
            accum(logits, gx);
        });
    }

    // Mean binary cross-entropy; predictions clamped to [eps, 1-eps].
    // Clamped entries receive zero gradient.
    Var bce_mean(Var pred, const DTensor& target, double eps = 1e-7) {
        const DTensor& vp = value(pred);
        if (!vp.same_shape(target)) throw std::invalid_argument("bce_mean: shape mismatch");
        const std::size_t n = vp.numel();
        double loss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = std::clamp(vp.at(i), eps, 1.0 - eps);
            const double t = target.at(i);
            loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
        loss /= static_cast<double>(n);
        auto tgt = std::make_shared<DTensor>(target);
        return make(DTensor({1}, {loss}), {pred}, [this, pred, tgt, eps, n](Var y) {
            const double gv = node(y).grad.at(0) / static_cast<double>(n);
            const DTensor& vp2 = value(pred);
            DTensor gx(vp2.shape());
            for (std::size_t i = 0; i < n; ++i) {
                const double raw = vp2.at(i);
                if (raw <= eps || raw >= 1.0 - eps) continue;
                const double t = tgt->at(i);
                gx.at(i) = gv * (-t / raw + (1.0 - t) / (1.0 - raw));
            }
            accum(pred, gx);
        });
    }

private:
    struct Node {
        DTensor value;
        DTensor grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

    Var make(DTensor out, std::initializer_list<Var> inputs, std::function<void(Var)> back) {
        bool req = false;
        for (Var v : inputs) req = req || node(v).requires_grad;
        nodes_.push_back(Node{std::move(out), DTensor(), req, nullptr});
        Var y{static_cast<int>(nodes_.size()) - 1};
        if (req) nodes_.back().backward = [back, y]() { back(y); };
        return y;
    }

    void accum(Var v, const DTensor& g) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        for (std::size_t i = 0; i < g.numel(); ++i) n.grad.at(i) += g.at(i);
    }

    void check_same_shape(const char* op, Var a, Var b) const {
        if (!value(a).same_shape(value(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    static void matmul_plain(const double* a, const double* b, double* c, int m, int k, int n) {
        for (int i = 0; i < m; ++i) {
            double* crow = c + static_cast<std::size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const double av = a[static_cast<std::size_t>(i) * k + p];
                if (av == 0.0) continue;
                const double* brow = b + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    std::deque<Node> nodes_;
};

} // namespace sketchfuse
