#pragma once

// Variance schedule, forward noising of scalar labels, and the reverse
// (ancestral) sampling chain.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coroflow/error.hpp"

namespace coroflow::icd {

struct ScheduleParams {
    std::size_t steps = 200;
    double beta_start = 5e-4;
    double beta_end = 0.05;
    friend bool operator==(const ScheduleParams&, const ScheduleParams&) = default;
};

/// Tables indexed by timestep t in 1..T (entry 0 is unused and holds the
/// t = 0 values: beta 0, alpha 1, alpha_bar 1, sigma 0).
struct NoiseSchedule {
    ScheduleParams params;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;

    std::size_t steps() const { return params.steps; }
};

inline NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw UsageError("schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw UsageError("schedule requires 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.params = {steps, beta_start, beta_end};
    s.beta.assign(steps + 1, 0.0);
    s.alpha.assign(steps + 1, 1.0);
    s.alpha_bar.assign(steps + 1, 1.0);
    s.sigma.assign(steps + 1, 0.0);
    for (std::size_t t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.sigma[t] = std::sqrt(s.beta[t]);
    }
    return s;
}

inline NoiseSchedule make_schedule(const ScheduleParams& p) { return make_schedule(p.steps, p.beta_start, p.beta_end); }

inline void check_timestep(const NoiseSchedule& s, std::size_t t) {
    if (t < 1 || t > s.steps())
        throw UsageError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(s.steps()));
}

/// y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps.
inline double q_sample(double y0, std::size_t t, double eps, const NoiseSchedule& s) {
    check_timestep(s, t);
    return std::sqrt(s.alpha_bar[t]) * y0 + std::sqrt(1.0 - s.alpha_bar[t]) * eps;
}

/// Algebraic inverse of q_sample for a known eps.
inline double q_invert(double yt, std::size_t t, double eps, const NoiseSchedule& s) {
    check_timestep(s, t);
    return (yt - std::sqrt(1.0 - s.alpha_bar[t]) * eps) / std::sqrt(s.alpha_bar[t]);
}

/// One reverse transition: (y_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z.
inline double reverse_step(double yt, std::size_t t, double eps_hat, double z, const NoiseSchedule& s,
                           double sigma_scale = 1.0) {
    const double mean = (yt - s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]) * eps_hat) / std::sqrt(s.alpha[t]);
    return mean + sigma_scale * s.sigma[t] * z;
}

/// Batched eps predictor: given all current y_t and the step t, fill eps_hat.
using EpsBatchFn = std::function<void(std::span<const double> yt, std::size_t t, std::span<double> eps_hat)>;

/// Run the reverse chain from t = T down to 1 for a batch of independent
/// chains. Chain i draws its start value and its per-step noise from rngs[i]
/// only; no noise is added on the final step.
inline std::vector<double> reverse_chain(const NoiseSchedule& s, const EpsBatchFn& eps_fn,
                                         std::span<std::mt19937_64> rngs, double sigma_scale = 1.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = rngs.size();
    std::vector<double> y(n), eps(n);
    for (std::size_t i = 0; i < n; ++i) {
        normal.reset();
        y[i] = normal(rngs[i]);
    }
    for (std::size_t t = s.steps(); t >= 1; --t) {
        eps_fn(y, t, eps);
        for (std::size_t i = 0; i < n; ++i) {
            double z = 0.0;
            if (t > 1) {
                normal.reset();
                z = normal(rngs[i]);
            }
            y[i] = reverse_step(y[i], t, eps[i], z, s, sigma_scale);
        }
    }
    return y;
}

/// Independent stream seed for (base seed, point index, repeat).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t repeat = 0) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ index) ^ repeat);
}

}  // namespace coroflow::icd
