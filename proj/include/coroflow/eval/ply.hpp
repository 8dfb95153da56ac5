#pragma once

// Error-coloured ASCII PLY point clouds.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "coroflow/error.hpp"
#include "coroflow/icd/train.hpp"

namespace coroflow::eval {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kGreen{0, 160, 0};
inline constexpr Rgb kYellow{255, 220, 0};
inline constexpr Rgb kOrange{255, 140, 0};
inline constexpr Rgb kRed{220, 0, 0};

/// |error| < t1 green, < t2 yellow, < t3 orange, otherwise red (mmHg).
struct ColorMapSpec {
    double t1 = 0.5;
    double t2 = 1.0;
    double t3 = 2.0;

    void validate() const {
        if (!(t1 > 0.0 && t1 < t2 && t2 < t3)) throw UsageError("colour thresholds must satisfy 0 < t1 < t2 < t3");
    }
    Rgb color(double abs_error) const {
        if (abs_error < t1) return kGreen;
        if (abs_error < t2) return kYellow;
        if (abs_error < t3) return kOrange;
        return kRed;
    }

    /// 0.5, 1 and 2 label standard deviations of the given predictions.
    static ColorMapSpec from_label_std(const std::vector<icd::PredictionRecord>& preds) {
        double mean = 0.0;
        for (const auto& p : preds) mean += p.y_true;
        mean /= static_cast<double>(std::max<std::size_t>(1, preds.size()));
        double sq = 0.0;
        for (const auto& p : preds) sq += (p.y_true - mean) * (p.y_true - mean);
        double sd = std::sqrt(sq / static_cast<double>(std::max<std::size_t>(1, preds.size())));
        if (!(sd > 0.0)) sd = 1e-6;  // constant labels: any error is visible
        return {0.5 * sd, 1.0 * sd, 2.0 * sd};
    }
};

inline std::string to_ply(const std::vector<icd::PredictionRecord>& preds, const ColorMapSpec& cmap,
                          const std::string& comment = {}) {
    if (preds.empty()) throw DataError("no predictions to export");
    cmap.validate();
    std::string out = "ply\nformat ascii 1.0\n";
    if (!comment.empty()) out += "comment " + comment + "\n";
    out += "element vertex " + std::to_string(preds.size()) + "\n";
    out += "property float x\nproperty float y\nproperty float z\n";
    out += "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    char line[160];
    for (const auto& p : preds) {
        const Rgb c = cmap.color(std::abs(p.y_pred - p.y_true));
        std::snprintf(line, sizeof line, "%.9g %.9g %.9g %u %u %u\n", static_cast<double>(static_cast<float>(p.world.x)),
                      static_cast<double>(static_cast<float>(p.world.y)), static_cast<double>(static_cast<float>(p.world.z)),
                      unsigned(c[0]), unsigned(c[1]), unsigned(c[2]));
        out += line;
    }
    return out;
}

inline void write_ply(const std::vector<icd::PredictionRecord>& preds, const ColorMapSpec& cmap,
                      const std::filesystem::path& path, const std::string& comment = {}) {
    const std::string text = to_ply(preds, cmap, comment);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError(ParseErrc::Io, "cannot write " + path.string());
    f << text;
    if (!f) throw ParseError(ParseErrc::Io, "write failed for " + path.string());
}

}  // namespace coroflow::eval
