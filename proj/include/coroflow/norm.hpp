#pragma once

// Label and coordinate standardisation fitted on the training split.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "coroflow/error.hpp"
#include "coroflow/sample.hpp"

namespace coroflow {

struct NormStats {
    double mean = 0.0;
    double std = 1.0;
    friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline double apply_norm(double label, const NormStats& s) { return (label - s.mean) / s.std; }
inline double invert_norm(double y, const NormStats& s) { return y * s.std + s.mean; }

/// Population mean/std. A single value (or a constant set) gets std 1 so the
/// map stays invertible.
inline NormStats fit_norm(std::span<const double> values) {
    if (values.empty()) throw DataError("cannot fit normalisation on zero values");
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(values.size()));
    return {mean, sd > 0.0 ? sd : 1.0};
}

/// Per-axis standardisation of world coordinates.
struct CoordNorm {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};
    friend bool operator==(const CoordNorm&, const CoordNorm&) = default;

    std::array<double, 3> apply(const WorldPoint& p) const {
        return {(p.x - mean[0]) / std[0], (p.y - mean[1]) / std[1], (p.z - mean[2]) / std[2]};
    }
};

inline CoordNorm fit_coord_norm(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw DataError("cannot fit coordinate normalisation on zero samples");
    CoordNorm c;
    for (std::size_t a = 0; a < 3; ++a) {
        std::vector<double> v;
        v.reserve(samples.size());
        for (const auto* s : samples) v.push_back(s->world.vec()[a]);
        const NormStats n = fit_norm(v);
        c.mean[a] = n.mean;
        c.std[a] = n.std;
    }
    return c;
}

}  // namespace coroflow
