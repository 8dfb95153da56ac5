#pragma once

// Paired (patch, coordinate, pressure) samples from aligned volumes and
// centerline pressure clouds, with case-level splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "coroflow/error.hpp"
#include "coroflow/geomcore.hpp"
#include "coroflow/ingest/dataset.hpp"
#include "coroflow/ingest/vtp.hpp"
#include "coroflow/norm.hpp"
#include "coroflow/parallel.hpp"
#include "coroflow/sample.hpp"

namespace coroflow::patchset {

struct LabelSpec {
    double epsilon_mm = 5.0;
};

/// Linear intensity map [lo, hi] -> [0, 1], clipped.
struct IntensityWindow {
    double lo = 0.0;
    double hi = 1.0;
    double operator()(double v) const { return std::clamp((v - lo) / (hi - lo), 0.0, 1.0); }
};

/// Nearest-rank percentile, q in [0, 1].
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("percentile of an empty set");
    const auto rank = static_cast<std::size_t>(std::llround(q * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank), values.end());
    return values[rank];
}

/// The volume's [p1, p99] window; a flat volume gets a unit-wide window.
inline IntensityWindow percentile_window(const Volume& v, double lo_q = 0.01, double hi_q = 0.99) {
    IntensityWindow w{percentile(v.intensities, lo_q), percentile(v.intensities, hi_q)};
    if (!(w.hi > w.lo)) w.hi = w.lo + 1.0;
    return w;
}

/// Patch of `shape` = (d, h, w) around round(world_to_voxel(p)), k-major.
/// Patch axes follow the world axes: on a grid axis with negative sign the
/// voxel index runs backwards. Voxels outside the volume are 0; `window`, if
/// given, is applied to in-volume voxels only.
inline std::vector<float> extract_patch(const Volume& vol, const WorldPoint& p, const PatchShape& shape,
                                        const IntensityWindow* window = nullptr) {
    const VolumeGrid& g = vol.grid;
    if (vol.intensities.size() != g.voxel_count()) throw DataError("volume intensity count does not match its grid");
    const VoxelCoord v = world_to_voxel(g, p);
    const std::array<long, 3> centre{std::lround(v.i), std::lround(v.j), std::lround(v.k)};
    const std::array<std::size_t, 3> n{shape[2], shape[1], shape[0]};  // extents along i, j, k
    std::vector<float> out(patch_size(shape), 0.0f);
    for (std::size_t c = 0; c < 3; ++c)
        if (n[c] == 0) throw UsageError("patch extents must be positive");

    auto index = [&](std::size_t axis, std::size_t t) {
        const long off = static_cast<long>(t) - static_cast<long>(n[axis] / 2);
        return centre[axis] + g.axis_sign[axis] * off;
    };
    for (std::size_t tk = 0; tk < n[2]; ++tk) {
        const long k = index(2, tk);
        if (k < 0 || k >= static_cast<long>(g.dims[2])) continue;
        for (std::size_t tj = 0; tj < n[1]; ++tj) {
            const long j = index(1, tj);
            if (j < 0 || j >= static_cast<long>(g.dims[1])) continue;
            float* row = out.data() + (tk * n[1] + tj) * n[0];
            for (std::size_t ti = 0; ti < n[0]; ++ti) {
                const long i = index(0, ti);
                if (i < 0 || i >= static_cast<long>(g.dims[0])) continue;
                const double x = vol.intensities[g.linear_index(std::size_t(i), std::size_t(j), std::size_t(k))];
                row[ti] = static_cast<float>(window ? (*window)(x) : x);
            }
        }
    }
    return out;
}

/// True when no voxel of the patch lies inside the volume.
inline bool patch_outside(const VolumeGrid& g, const WorldPoint& p, const PatchShape& shape) {
    const VoxelCoord v = world_to_voxel(g, p);
    const std::array<std::size_t, 3> n{shape[2], shape[1], shape[0]};
    for (std::size_t a = 0; a < 3; ++a) {
        const long c = std::lround(v[a]);
        const long below = static_cast<long>(n[a] / 2), above = static_cast<long>(n[a]) - 1 - below;
        const long lo = g.axis_sign[a] > 0 ? c - below : c - above;
        const long hi = g.axis_sign[a] > 0 ? c + above : c + below;
        if (hi < 0 || lo >= static_cast<long>(g.dims[a])) return true;
    }
    return false;
}

struct LabelResult {
    double value = 0.0;
    std::size_t members = 0;    ///< cloud points inside the ball
    bool fallback = false;      ///< nearest neighbour used
    double fallback_distance = 0.0;
};

/// Mean pressure of the cloud points within epsilon of p, or the nearest
/// point's pressure when the ball is empty. Members are summed in sorted order
/// and nearest-point ties go to the lower pressure, so the result does not
/// depend on the cloud's point order.
inline LabelResult label_pressure(const WorldPoint& p, const ingest::PolyData& cloud, const LabelSpec& spec) {
    if (!(spec.epsilon_mm > 0.0)) throw UsageError("label radius epsilon must be positive");
    if (cloud.points.empty()) throw DataError("pressure cloud is empty");
    const auto& pressure = cloud.pressure().values;
    if (pressure.size() != cloud.points.size()) throw ParseError(ParseErrc::LengthMismatch, "pressure array length");
    std::vector<double> members;
    double best_d = std::numeric_limits<double>::infinity(), best_p = 0.0;
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const WorldPoint& q = cloud.points[i];
        if (q.frame != p.frame) throw FrameMismatchError("pressure cloud and query point frames differ");
        const double d = distance(p.vec(), q.vec());
        if (d <= spec.epsilon_mm) members.push_back(pressure[i]);
        if (d < best_d || (d == best_d && pressure[i] < best_p)) {
            best_d = d;
            best_p = pressure[i];
        }
    }
    LabelResult r;
    r.members = members.size();
    if (members.empty()) {
        r.value = best_p;
        r.fallback = true;
        r.fallback_distance = best_d;
        return r;
    }
    std::sort(members.begin(), members.end());
    double sum = 0.0;
    for (double v : members) sum += v;
    r.value = sum / static_cast<double>(members.size());
    return r;
}

/// One case's inputs. The volume and point sets may be RAS or LPS; they are
/// brought to LPS before use.
struct CaseInput {
    std::string id;
    Volume volume;
    ingest::PolyData centerline;
    ingest::PolyData pressure_cloud;
};

struct SplitRatios {
    double train = 40.0 / 55.0;
    double val = 5.0 / 55.0;
    double test = 10.0 / 55.0;

    /// Ratios as given must sum to 1 (within 1e-9).
    void validate() const {
        if (train < 0 || val < 0 || test < 0) throw UsageError("split ratios must be non-negative");
        if (std::abs(train + val + test - 1.0) > 1e-9) throw UsageError("split ratios must sum to 1");
    }
    /// Scale arbitrary non-negative weights (e.g. case counts) to sum to 1.
    static SplitRatios from_weights(double a, double b, double c) {
        const double s = a + b + c;
        if (!(a >= 0 && b >= 0 && c >= 0) || !(s > 0.0)) throw UsageError("split weights must be non-negative with a positive sum");
        return {a / s, b / s, c / s};
    }
};

/// Case-level split assignment: cases are shuffled with `seed`, then the
/// first n_train become train, the next n_val val, the rest test. Counts use
/// largest remainders, ties broken in train, val, test order.
inline std::vector<Split> assign_splits(std::size_t n_cases, const SplitRatios& r, std::uint64_t seed) {
    r.validate();
    const std::array<double, 3> ratio{r.train, r.val, r.test};
    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double exact = ratio[s] * static_cast<double>(n_cases);
        // Guard against 19.999999 from ratios like 20/25.
        count[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[s] = exact - static_cast<double>(count[s]);
        used += count[s];
    }
    while (used < n_cases) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s)
            if (rem[s] > rem[best] + 1e-12) best = s;
        ++count[best];
        rem[best] = -1.0;
        ++used;
    }
    std::vector<std::size_t> order(n_cases);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Split> out(n_cases, Split::Test);
    for (std::size_t i = 0; i < n_cases; ++i)
        out[order[i]] = i < count[0] ? Split::Train : (i < count[0] + count[1] ? Split::Val : Split::Test);
    return out;
}

struct BuildOptions {
    PatchShape patch_shape = kDefaultPatchShape;
    LabelSpec label;
    SplitRatios ratios = SplitRatios::from_weights(40, 5, 10);
    std::uint64_t seed = 42;
    bool window = true;  ///< per-volume [p1, p99] -> [0, 1]
};

struct FallbackRecord {
    std::string case_id;
    std::size_t index = 0;
    double distance_mm = 0.0;
};

struct BuildResult {
    ingest::DatasetManifest manifest;
    std::vector<Sample> samples;
    std::vector<FallbackRecord> fallbacks;
    std::vector<std::string> warnings;  ///< points whose patch lies wholly outside the volume
};

/// Samples for a single case (index = point position in the centerline).
inline std::vector<Sample> case_samples(const CaseInput& in_case, const BuildOptions& opt,
                                        std::vector<FallbackRecord>* fallbacks = nullptr,
                                        std::vector<std::string>* warnings = nullptr) {
    const Volume vol = align_volume_lps(in_case.volume);
    vol.grid.validate();
    auto to_lps = [](WorldPoint p) { return p.frame == Frame::RAS ? ras_to_lps(p) : p; };
    ingest::PolyData cloud = in_case.pressure_cloud;
    for (auto& q : cloud.points) q = to_lps(q);
    const IntensityWindow win = percentile_window(vol);

    std::vector<Sample> out;
    out.reserve(in_case.centerline.points.size());
    for (std::size_t m = 0; m < in_case.centerline.points.size(); ++m) {
        Sample s;
        s.case_id = in_case.id;
        s.index = m;
        s.world = to_lps(in_case.centerline.points[m]);
        if (!s.world.finite()) throw DataError("non-finite centerline point in " + in_case.id);
        s.local = world_to_voxel(vol.grid, s.world);
        if (warnings && patch_outside(vol.grid, s.world, opt.patch_shape))
            warnings->push_back(in_case.id + "#" + std::to_string(m) + ": patch has no support inside the volume");
        s.patch = extract_patch(vol, s.world, opt.patch_shape, opt.window ? &win : nullptr);
        const LabelResult lab = label_pressure(s.world, cloud, opt.label);
        if (!std::isfinite(lab.value)) throw DataError("non-finite pressure label in " + in_case.id);
        s.label_mmhg = lab.value;
        if (lab.fallback && fallbacks) fallbacks->push_back({in_case.id, m, lab.fallback_distance});
        out.push_back(std::move(s));
    }
    return out;
}

/// Training-split label statistics of `samples` under `manifest`'s splits.
inline NormStats train_label_stats(const ingest::DatasetManifest& manifest, const std::vector<Sample>& samples) {
    std::vector<double> labels;
    for (const auto& s : samples) {
        const auto* c = manifest.find_case(s.case_id);
        if (c && c->split == Split::Train) labels.push_back(s.label_mmhg);
    }
    if (labels.empty()) throw DataError("no training samples to fit label statistics on");
    return fit_norm(labels);
}

/// Reassign case splits and refit the label statistics.
inline void resplit(ingest::DatasetManifest& manifest, const std::vector<Sample>& samples, const SplitRatios& ratios,
                    std::uint64_t seed) {
    const auto splits = assign_splits(manifest.cases.size(), ratios, seed);
    for (std::size_t c = 0; c < manifest.cases.size(); ++c) manifest.cases[c].split = splits[c];
    const NormStats st = train_label_stats(manifest, samples);
    manifest.label_mean = st.mean;
    manifest.label_std = st.std;
}

inline BuildResult build_dataset(const std::vector<CaseInput>& cases, const BuildOptions& opt) {
    opt.ratios.validate();
    std::set<std::string> ids;
    for (const auto& c : cases)
        if (!ids.insert(c.id).second) throw DataError("duplicate case id '" + c.id + "'");

    std::vector<std::vector<Sample>> per_case(cases.size());
    std::vector<std::vector<FallbackRecord>> fb(cases.size());
    std::vector<std::vector<std::string>> warn(cases.size());
    parallel_for(cases.size(), [&](std::size_t c) { per_case[c] = case_samples(cases[c], opt, &fb[c], &warn[c]); });

    BuildResult r;
    r.manifest.patch_shape = opt.patch_shape;
    const auto splits = assign_splits(cases.size(), opt.ratios, opt.seed);
    for (std::size_t c = 0; c < cases.size(); ++c) {
        r.manifest.cases.push_back({cases[c].id, splits[c], per_case[c].size()});
        for (auto& s : per_case[c]) r.samples.push_back(std::move(s));
        r.fallbacks.insert(r.fallbacks.end(), fb[c].begin(), fb[c].end());
        r.warnings.insert(r.warnings.end(), warn[c].begin(), warn[c].end());
    }
    r.manifest.count = r.samples.size();
    const NormStats st = train_label_stats(r.manifest, r.samples);
    r.manifest.label_mean = st.mean;
    r.manifest.label_std = st.std;
    return r;
}

inline void write_fallback_log(const std::vector<FallbackRecord>& rows, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError(ParseErrc::Io, "cannot write " + path.string());
    f << "case_id,index,fallback_distance_mm\n";
    for (const auto& r : rows) f << r.case_id << ',' << r.index << ',' << ingest::detail::format_double(r.distance_mm) << '\n';
}

}  // namespace coroflow::patchset
