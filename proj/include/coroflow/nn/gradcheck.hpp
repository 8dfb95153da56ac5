#pragma once

// Central-difference gradient verification in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "coroflow/nn/sequential.hpp"

namespace coroflow::nn {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Gradients smaller than this are compared on an absolute scale.
    double magnitude_floor = 1e-5;
    /// Check at most this many entries per tensor (0 = all of them).
    std::size_t max_entries_per_tensor = 0;
    /// Perturbations whose one-sided slopes disagree by more than this
    /// (relative) straddle a ReLU or max-pool switch and are skipped.
    double kink_threshold = 1e-2;
    std::uint64_t seed = 7;
};

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    double tolerance = 0.0;
    std::vector<GradCheckEntry> entries;

    bool passed() const {
        return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
    }
    double max_rel_error() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_error);
        return m;
    }
    std::size_t checked() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.checked;
        return n;
    }
    std::size_t skipped() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.skipped_kinks;
        return n;
    }
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compare `analytic[t]` with central differences of `loss` under perturbation
/// of each `targets[t]` entry. `loss` must read the targets' current values.
inline GradCheckReport check_gradients(const std::vector<NamedTensor<double>>& targets,
                                       const std::vector<Tensor<double>>& analytic,
                                       const std::function<double()>& loss, const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    report.tolerance = opt.tolerance;
    std::mt19937_64 rng(opt.seed);
    const double h = opt.step;
    const double mid = loss();
    for (std::size_t t = 0; t < targets.size(); ++t) {
        Tensor<double>& x = *targets[t].tensor;
        if (analytic[t].shape != x.shape) throw ShapeError(-1, "analytic gradient shape differs for " + targets[t].name);
        GradCheckEntry entry;
        entry.name = targets[t].name;

        std::vector<std::size_t> idx(x.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (opt.max_entries_per_tensor > 0 && idx.size() > opt.max_entries_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opt.max_entries_per_tensor);
            std::sort(idx.begin(), idx.end());
        }

        for (std::size_t i : idx) {
            const double orig = x.data[i];
            x.data[i] = orig + h;
            const double up = loss();
            x.data[i] = orig - h;
            const double down = loss();
            x.data[i] = orig;

            const double right = (up - mid) / h;
            const double left = (mid - down) / h;
            if (std::abs(right - left) > opt.kink_threshold * std::max({std::abs(right), std::abs(left), 1e-3})) {
                ++entry.skipped_kinks;
                continue;
            }
            const double numeric = (up - down) / (2.0 * h);
            const double err = relative_error(analytic[t].data[i], numeric, opt.magnitude_floor);
            entry.max_rel_error = std::max(entry.max_rel_error, err);
            ++entry.checked;
        }
        entry.passed = entry.max_rel_error <= opt.tolerance;
        report.entries.push_back(entry);
    }
    return report;
}

/// Gradient check for a layer stack in train mode, against the scalar
/// objective sum(w * output) with fixed random weights w. Covers every
/// parameter and the input. The stack is not modified.
inline GradCheckReport grad_check(const Sequential<double>& stack_in, const Tensor<double>& input,
                                  const GradCheckOptions& opt = {}) {
    if (stack_in.empty()) return GradCheckReport{opt.tolerance, {}};
    Sequential<double> stack = stack_in;
    Tensor<double> x = input;

    StackCache<double> cache;
    const Tensor<double> out = stack.forward(x, Mode::Train, &cache);
    Tensor<double> weights(out.shape);
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& w : weights.data) w = dist(rng);

    Gradients<double> grads = stack.zero_grads();
    Tensor<double> dx = stack.backward(cache, weights, grads, true);

    auto objective = [&]() {
        // Train mode normalises with batch statistics, so the running-stat
        // updates made by each probe do not affect the objective.
        const Tensor<double> y = stack.forward(x, Mode::Train, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += weights.data[i] * y.data[i];
        return s;
    };

    std::vector<NamedTensor<double>> targets = stack.parameters();
    targets.push_back({"input", &x});
    grads.push_back(std::move(dx));
    return check_gradients(targets, grads, objective, opt);
}

}  // namespace coroflow::nn
