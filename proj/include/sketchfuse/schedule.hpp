#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// Forward-diffusion schedule. alphas/alpha_bars are 1-indexed by timestep t,
// stored at [t-1].
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    void validate() const {
        if (steps < 1 || static_cast<int>(alphas.size()) != steps ||
            static_cast<int>(alpha_bars.size()) != steps)
            throw std::invalid_argument("noise schedule: inconsistent sizes");
        double prod = 1.0;
        double prev = 1.0 + 1e-15;
        for (int t = 0; t < steps; ++t) {
            if (!(alphas[static_cast<std::size_t>(t)] > 0.0 && alphas[static_cast<std::size_t>(t)] < 1.0))
                throw std::invalid_argument("noise schedule: alpha outside (0,1)");
            prod *= alphas[static_cast<std::size_t>(t)];
            const double ab = alpha_bars[static_cast<std::size_t>(t)];
            if (std::abs(ab - prod) > 1e-12)
                throw std::invalid_argument("noise schedule: alpha_bar is not the running product");
            if (!(ab < prev))
                throw std::invalid_argument("noise schedule: alpha_bar not strictly decreasing");
            prev = ab;
        }
    }
};

struct ScheduleParams {
    double beta_start = 8.5e-4;
    double beta_end = 1.2e-2;
};

// Linear-in-beta schedule; alpha_t = 1 - beta_t, alpha_bar by cumulative product.
inline NoiseSchedule build_noise_schedule(int steps, const ScheduleParams& params = {}) {
    if (steps < 1) throw std::invalid_argument("build_noise_schedule: steps must be >= 1");
    NoiseSchedule s;
    s.steps = steps;
    s.alphas.resize(static_cast<std::size_t>(steps));
    s.alpha_bars.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
        const double beta = params.beta_start + (params.beta_end - params.beta_start) * frac;
        const double alpha = 1.0 - beta;
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("build_noise_schedule: alpha outside (0,1)");
        prod *= alpha;
        s.alphas[static_cast<std::size_t>(t)] = alpha;
        s.alpha_bars[static_cast<std::size_t>(t)] = prod;
    }
    s.validate();
    return s;
}

inline NoiseSchedule schedule_from_alphas(std::vector<double> alphas) {
    NoiseSchedule s;
    s.steps = static_cast<int>(alphas.size());
    if (s.steps < 1) throw std::invalid_argument("schedule_from_alphas: empty");
    s.alphas = std::move(alphas);
    s.alpha_bars.resize(static_cast<std::size_t>(s.steps));
    double prod = 1.0;
    for (int t = 0; t < s.steps; ++t) {
        if (!(s.alphas[static_cast<std::size_t>(t)] > 0.0 && s.alphas[static_cast<std::size_t>(t)] < 1.0))
            throw std::invalid_argument("schedule_from_alphas: alpha outside (0,1)");
        prod *= s.alphas[static_cast<std::size_t>(t)];
        s.alpha_bars[static_cast<std::size_t>(t)] = prod;
    }
    s.validate();
    return s;
}

// z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps
inline DTensor add_noise(const DTensor& z0, int t, const DTensor& eps, const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps) throw std::out_of_range("add_noise: t outside schedule");
    if (!z0.same_shape(eps)) throw std::invalid_argument("add_noise: eps shape mismatch");
    const double abar = schedule.alpha_bars[static_cast<std::size_t>(t - 1)];
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    DTensor out(z0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a * z0.at(i) + b * eps.at(i);
    return out;
}

} // namespace sketchfuse
