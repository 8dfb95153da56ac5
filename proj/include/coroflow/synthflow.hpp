#pragma once

// Synthetic coronary trees with steady Hagen-Poiseuille pressures, and a
// contrast-CT-like rasterisation of them.
//
// Geometry is in LPS millimetres, flow in mm^3/s, viscosity in Pa s. With
// those units 8 mu Q L / (pi r^4) comes out directly in pascals.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "coroflow/error.hpp"
#include "coroflow/geomcore.hpp"
#include "coroflow/ingest/vtp.hpp"

namespace coroflow::synth {

inline constexpr double kPascalPerMmHg = 133.322;
inline constexpr const char* kPressureArray = "pressure_ave_mmhg";

struct StenosisSpec {
    std::size_t segment = 0;
    double center_fraction = 0.5;  ///< arclength fraction in (0, 1)
    double length_mm = 5.0;
    double severity = 0.5;  ///< fractional radius reduction at the centre, in [0, 1)
};

struct Segment {
    int parent = -1;
    std::vector<std::size_t> children;
    std::size_t depth = 0;
    std::vector<WorldPoint> points;  ///< first point is the parent's last point
    std::vector<double> radius;      ///< mm, per point, stenosis included
    double flow = 0.0;               ///< mm^3/s
    std::optional<StenosisSpec> stenosis;

    double length() const {
        double l = 0.0;
        for (std::size_t i = 1; i < points.size(); ++i) l += distance(points[i - 1].vec(), points[i].vec());
        return l;
    }
};

struct ArteryTree {
    std::vector<Segment> segments;  ///< parents precede children; segment 0 is the root

    void validate() const {
        if (segments.empty()) throw DataError("artery tree has no segments");
        for (std::size_t s = 0; s < segments.size(); ++s) {
            const Segment& seg = segments[s];
            if ((s == 0) != (seg.parent < 0)) throw DataError("artery tree must have exactly one root, segment 0");
            if (seg.parent >= static_cast<int>(s)) throw DataError("segment parents must precede children");
            if (seg.points.size() < 2 || seg.radius.size() != seg.points.size())
                throw DataError("segment " + std::to_string(s) + " needs >= 2 points and one radius per point");
            for (double r : seg.radius)
                if (!(r > 0.0)) throw DataError("segment " + std::to_string(s) + " has a non-positive radius");
            if (!(seg.flow >= 0.0)) throw DataError("segment " + std::to_string(s) + " has negative flow");
        }
    }
};

struct SynthConfig {
    std::size_t cases = 25;
    std::array<std::size_t, 3> dims{128, 128, 128};
    std::array<double, 3> spacing{0.5, 0.5, 0.5};
    double inlet_pressure_mmhg = 100.0;
    double viscosity_pa_s = 0.0035;
    double inlet_flow = 2000.0;  ///< mm^3/s
    std::size_t depth = 2;
    std::uint64_t seed = 42;

    double root_radius = 1.8;  ///< mm
    double root_length = 18.0;  ///< mm
    double child_length_ratio = 0.85;
    double taper = 0.9;             ///< end radius / start radius within a segment
    double vertex_spacing = 1.0;    ///< mm between centerline points
    double curvature = 0.06;        ///< per-step direction jitter (radians, std)
    double stenosis_probability = 0.4;  ///< per case
    double min_severity = 0.2;
    double max_severity = 0.5;
    double margin = 4.0;  ///< mm kept free between the tree and the volume faces

    double lumen_intensity = 400.0;
    double background_intensity = 0.0;
    double noise_amplitude = 20.0;  ///< noise is clamped to +-amplitude
    /// Radius of a contrast-filled aortic trunk along the x axis above the
    /// inlet; 0 disables it.
    double aorta_radius = 6.0;

    double max_spacing() const { return std::max({spacing[0], spacing[1], spacing[2]}); }

    VolumeGrid grid() const {
        VolumeGrid g;
        g.dims = dims;
        g.spacing = spacing;
        g.origin = {-0.5 * spacing[0] * static_cast<double>(dims[0] - 1), -0.5 * spacing[1] * static_cast<double>(dims[1] - 1),
                    -0.5 * spacing[2] * static_cast<double>(dims[2] - 1), Frame::LPS};
        return g;
    }

    void validate() const {
        if (cases == 0) throw UsageError("at least one case is required");
        for (std::size_t a = 0; a < 3; ++a) {
            if (dims[a] < 2) throw UsageError("volume dims must be at least 2");
            if (!(spacing[a] > 0.0)) throw UsageError("spacing must be positive");
        }
        if (!(inlet_pressure_mmhg > 0.0) || !(viscosity_pa_s > 0.0) || !(inlet_flow >= 0.0))
            throw UsageError("inlet pressure and viscosity must be positive, inlet flow non-negative");
        if (!(root_radius > 0.0) || !(root_length > 0.0) || !(vertex_spacing > 0.0))
            throw UsageError("root radius, root length and vertex spacing must be positive");
        if (!(taper > 0.0) || !(child_length_ratio > 0.0)) throw UsageError("taper and length ratio must be positive");
        if (!(min_severity >= 0.0) || !(min_severity <= max_severity) || !(max_severity < 1.0))
            throw UsageError("stenosis severities must satisfy 0 <= min <= max < 1");
        if (!(lumen_intensity > background_intensity)) throw UsageError("lumen must be brighter than background");
        if (!(noise_amplitude >= 0.0) || !(aorta_radius >= 0.0)) throw UsageError("noise and aorta radius must be >= 0");
    }
};

/// Cosine bump of the stenosis profile: 1 at the centre, 0 beyond length/2.
inline double stenosis_bump(double s, double center, double length) {
    const double u = std::abs(s - center) / (0.5 * length);
    return u >= 1.0 ? 0.0 : 0.5 * (1.0 + std::cos(M_PI * u));
}

/// Reapply a segment's radius profile: linear taper from r0 to taper * r0
/// along arclength, narrowed by its stenosis if any.
inline void apply_radius_profile(Segment& seg, double r0, double taper) {
    std::vector<double> arc(seg.points.size(), 0.0);
    for (std::size_t i = 1; i < seg.points.size(); ++i)
        arc[i] = arc[i - 1] + distance(seg.points[i - 1].vec(), seg.points[i].vec());
    const double total = arc.back();
    seg.radius.resize(seg.points.size());
    for (std::size_t i = 0; i < seg.points.size(); ++i) {
        const double f = total > 0.0 ? arc[i] / total : 0.0;
        double r = r0 * (1.0 + (taper - 1.0) * f);
        if (seg.stenosis)
            r *= 1.0 - seg.stenosis->severity *
                           stenosis_bump(arc[i], seg.stenosis->center_fraction * total, seg.stenosis->length_mm);
        seg.radius[i] = r;
    }
}

namespace detail {

inline Vec3 any_perpendicular(Vec3 d) {
    const Vec3 helper = std::abs(d.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    return d.cross(helper).normalized();
}

/// Rotate `v` about unit axis `k` by `angle` (Rodrigues).
inline Vec3 rotate(Vec3 v, Vec3 k, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c));
}

struct Box {
    Vec3 lo, hi;
    bool inside(Vec3 p, double margin) const {
        for (std::size_t a = 0; a < 3; ++a)
            if (p[a] < lo[a] + margin || p[a] > hi[a] - margin) return false;
        return true;
    }
};

inline Box world_box(const VolumeGrid& g) {
    const WorldPoint a = voxel_to_world(g, {0, 0, 0});
    const WorldPoint b = voxel_to_world(
        g, {static_cast<double>(g.dims[0] - 1), static_cast<double>(g.dims[1] - 1), static_cast<double>(g.dims[2] - 1)});
    Box box;
    for (std::size_t a2 = 0; a2 < 3; ++a2) {
        box.lo[a2] = std::min(a.vec()[a2], b.vec()[a2]);
        box.hi[a2] = std::max(a.vec()[a2], b.vec()[a2]);
    }
    return box;
}

/// Grow a polyline from `start` along `dir`, with bounded random bending and
/// a pull toward the box centre near the faces.
inline std::vector<WorldPoint> grow_polyline(Vec3 start, Vec3 dir, double length, const SynthConfig& cfg,
                                             const Box& box, std::mt19937_64& rng) {
    std::normal_distribution<double> bend(0.0, cfg.curvature);
    std::uniform_real_distribution<double> turn(0.0, 2.0 * M_PI);
    const std::size_t steps = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(length / cfg.vertex_spacing)));
    const double ds = length / static_cast<double>(steps);
    const Vec3 centre = (box.lo + box.hi) * 0.5;
    std::vector<WorldPoint> pts{WorldPoint::from(start, Frame::LPS)};
    Vec3 p = start, d = dir.normalized();
    for (std::size_t i = 0; i < steps; ++i) {
        const Vec3 axis = rotate(any_perpendicular(d), d, turn(rng));
        d = rotate(d, axis, bend(rng)).normalized();
        // Look a few steps ahead; steer inward if that would leave the margin.
        if (!box.inside(p + d * (4.0 * ds), cfg.margin + 2.0)) d = (d + (centre - p).normalized() * 0.35).normalized();
        p = p + d * ds;
        pts.push_back(WorldPoint::from(p, Frame::LPS));
    }
    return pts;
}

}  // namespace detail

/// Deterministic in (config, seed). Segments are emitted breadth-first.
inline ArteryTree generate_tree(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const detail::Box box = detail::world_box(cfg.grid());
    const Vec3 centre = (box.lo + box.hi) * 0.5;
    const double top = box.hi.z;

    // Inlet just below the aortic trunk (or near the top face without one).
    const double trunk_z = top - cfg.margin - std::max(cfg.aorta_radius, 0.0);
    const double inlet_z = trunk_z - cfg.aorta_radius;
    const Vec3 inlet{centre.x + (unit(rng) - 0.5) * 6.0, centre.y + (unit(rng) - 0.5) * 6.0, inlet_z};
    if (!box.inside(inlet, 0.0)) throw UsageError("volume too small for the configured inlet");
    Vec3 root_dir{(unit(rng) - 0.5) * 0.4, (unit(rng) - 0.5) * 0.4, -1.0};

    ArteryTree tree;
    struct Pending {
        int parent;
        std::size_t depth;
        Vec3 start, dir;
        double length, r0, flow;
    };
    std::vector<Pending> queue{{-1, 0, inlet, root_dir, cfg.root_length * (0.9 + 0.2 * unit(rng)),
                                cfg.root_radius * (0.95 + 0.1 * unit(rng)), cfg.inlet_flow}};
    std::vector<double> start_radius;
    for (std::size_t q = 0; q < queue.size(); ++q) {
        const Pending job = queue[q];
        Segment seg;
        seg.parent = job.parent;
        seg.depth = job.depth;
        seg.flow = job.flow;
        seg.points = detail::grow_polyline(job.start, job.dir, job.length, cfg, box, rng);
        const std::size_t id = tree.segments.size();
        if (job.parent >= 0) tree.segments[static_cast<std::size_t>(job.parent)].children.push_back(id);
        apply_radius_profile(seg, job.r0, cfg.taper);
        start_radius.push_back(job.r0);
        tree.segments.push_back(std::move(seg));

        if (job.depth >= cfg.depth) continue;
        const Segment& s = tree.segments.back();
        const Vec3 end = s.points.back().vec();
        const Vec3 d = (s.points.back().vec() - s.points[s.points.size() - 2].vec()).normalized();
        const double r_end = job.r0 * cfg.taper;
        // Larger child takes fraction f >= 1/2; the other takes the exact remainder.
        const double f = 0.5 + 0.2 * unit(rng);
        const double q1 = f * job.flow;
        const double q2 = job.flow - q1;
        const Vec3 plane = detail::rotate(detail::any_perpendicular(d), d, 2.0 * M_PI * unit(rng));
        const double a1 = (20.0 + 15.0 * unit(rng)) * M_PI / 180.0;
        const double a2 = (30.0 + 20.0 * unit(rng)) * M_PI / 180.0;
        const double len = job.length * cfg.child_length_ratio * (0.9 + 0.2 * unit(rng));
        // Murray's law: r^3 splits like the flow.
        queue.push_back({static_cast<int>(id), job.depth + 1, end, detail::rotate(d, plane, a1), len,
                         r_end * std::cbrt(f), q1});
        queue.push_back({static_cast<int>(id), job.depth + 1, end, detail::rotate(d, plane, -a2), len * 0.9,
                         r_end * std::cbrt(1.0 - f), q2});
    }

    if (unit(rng) < cfg.stenosis_probability) {
        StenosisSpec st;
        st.segment = tree.segments.size() > 1 ? 1 + static_cast<std::size_t>(unit(rng) * (tree.segments.size() - 1)) : 0;
        st.segment = std::min(st.segment, tree.segments.size() - 1);
        st.center_fraction = 0.3 + 0.4 * unit(rng);
        st.length_mm = 4.0 + 3.0 * unit(rng);
        st.severity = cfg.min_severity + (cfg.max_severity - cfg.min_severity) * unit(rng);
        Segment& seg = tree.segments[st.segment];
        seg.stenosis = st;
        apply_radius_profile(seg, start_radius[st.segment], cfg.taper);
    }
    tree.validate();
    return tree;
}

/// Pressure drop in pascals over one polyline edge: 8 mu Q / pi * integral of
/// r^-4 ds, by the trapezoidal rule.
inline double edge_drop_pa(double mu, double flow, double length, double r_a, double r_b) {
    if (!(r_a > 0.0) || !(r_b > 0.0)) throw DataError("zero radius in pressure integration");
    return 8.0 * mu * flow / M_PI * 0.5 * length * (1.0 / std::pow(r_a, 4) + 1.0 / std::pow(r_b, 4));
}

/// Pressure drop (Pa) of a uniform tube.
inline double poiseuille_drop_pa(double mu, double flow, double length, double radius) {
    return 8.0 * mu * length * flow / (M_PI * std::pow(radius, 4));
}

/// Per-segment, per-point pressures in mmHg. Each child starts at its
/// parent's end pressure.
inline std::vector<std::vector<double>> poiseuille_pressure(const ArteryTree& tree, const SynthConfig& cfg) {
    tree.validate();
    std::vector<std::vector<double>> p(tree.segments.size());
    for (std::size_t s = 0; s < tree.segments.size(); ++s) {
        const Segment& seg = tree.segments[s];
        auto& ps = p[s];
        ps.resize(seg.points.size());
        ps[0] = seg.parent < 0 ? cfg.inlet_pressure_mmhg : p[static_cast<std::size_t>(seg.parent)].back();
        for (std::size_t i = 1; i < seg.points.size(); ++i) {
            const double len = distance(seg.points[i - 1].vec(), seg.points[i].vec());
            ps[i] = ps[i - 1] - edge_drop_pa(cfg.viscosity_pa_s, seg.flow, len, seg.radius[i - 1], seg.radius[i]) /
                                    kPascalPerMmHg;
        }
    }
    return p;
}

/// Centerline points with pressure and radius scalars. Each child's first
/// point duplicates its parent's last point and is omitted; lines still
/// connect through it.
inline ingest::PolyData centerline_polydata(const ArteryTree& tree, const std::vector<std::vector<double>>& pressure) {
    ingest::PolyData pd;
    ingest::ScalarArray pa{kPressureArray, {}}, ra{"radius_mm", {}};
    std::vector<std::size_t> last_index(tree.segments.size());
    for (std::size_t s = 0; s < tree.segments.size(); ++s) {
        const Segment& seg = tree.segments[s];
        std::vector<std::size_t> line;
        const std::size_t first = seg.parent < 0 ? 0 : 1;
        if (seg.parent >= 0) line.push_back(last_index[static_cast<std::size_t>(seg.parent)]);
        for (std::size_t i = first; i < seg.points.size(); ++i) {
            line.push_back(pd.points.size());
            pd.points.push_back(seg.points[i]);
            pa.values.push_back(pressure[s][i]);
            ra.values.push_back(seg.radius[i]);
        }
        last_index[s] = pd.points.size() - 1;
        pd.lines.push_back(std::move(line));
    }
    pd.point_scalars.push_back(std::move(pa));
    pd.point_scalars.push_back(std::move(ra));
    return pd;
}

/// Intensity volume: lumen inside the local radius, a linear falloff over one
/// voxel spacing outside it, background elsewhere, plus clamped Gaussian noise.
inline Volume rasterize_volume(const ArteryTree& tree, const SynthConfig& cfg, std::uint64_t noise_seed) {
    const VolumeGrid g = cfg.grid();
    const detail::Box box = detail::world_box(g);
    for (const auto& seg : tree.segments)
        for (const auto& p : seg.points)
            if (!box.inside(p.vec(), 0.0)) throw DataError("artery tree leaves the volume bounds");

    const double lumen = cfg.lumen_intensity, bg = cfg.background_intensity;
    const double shell = cfg.max_spacing();
    Volume vol;
    vol.grid = g;
    vol.intensities.assign(g.voxel_count(), bg);

    auto shade = [&](double d, double r) {
        if (d <= r) return lumen;
        if (d >= r + shell) return bg;
        return lumen + (bg - lumen) * (d - r) / shell;
    };
    auto splat = [&](Vec3 lo, Vec3 hi, auto&& value_at) {
        const VoxelCoord a = world_to_voxel(g, WorldPoint::from(lo, Frame::LPS));
        const VoxelCoord b = world_to_voxel(g, WorldPoint::from(hi, Frame::LPS));
        std::array<long, 3> from{}, to{};
        for (std::size_t ax = 0; ax < 3; ++ax) {
            from[ax] = std::max(0L, static_cast<long>(std::floor(std::min(a[ax], b[ax]))));
            to[ax] = std::min(static_cast<long>(g.dims[ax]) - 1, static_cast<long>(std::ceil(std::max(a[ax], b[ax]))));
        }
        for (long k = from[2]; k <= to[2]; ++k)
            for (long j = from[1]; j <= to[1]; ++j)
                for (long i = from[0]; i <= to[0]; ++i) {
                    const WorldPoint w = voxel_to_world(g, {double(i), double(j), double(k)});
                    const double v = value_at(w.vec());
                    double& slot = vol.intensities[g.linear_index(std::size_t(i), std::size_t(j), std::size_t(k))];
                    slot = std::max(slot, v);
                }
    };

    for (const auto& seg : tree.segments)
        for (std::size_t e = 1; e < seg.points.size(); ++e) {
            const Vec3 p0 = seg.points[e - 1].vec(), p1 = seg.points[e].vec();
            const double r0 = seg.radius[e - 1], r1 = seg.radius[e];
            const double reach = std::max(r0, r1) + shell;
            Vec3 lo, hi;
            for (std::size_t ax = 0; ax < 3; ++ax) {
                lo[ax] = std::min(p0[ax], p1[ax]) - reach;
                hi[ax] = std::max(p0[ax], p1[ax]) + reach;
            }
            const Vec3 d = p1 - p0;
            const double dd = d.dot(d);
            splat(lo, hi, [&](Vec3 w) {
                const double t = dd > 0.0 ? std::clamp((w - p0).dot(d) / dd, 0.0, 1.0) : 0.0;
                return shade(distance(w, p0 + d * t), r0 + (r1 - r0) * t);
            });
        }

    if (cfg.aorta_radius > 0.0) {
        // Trunk along x, centred above the inlet (the root segment's first point).
        const Vec3 inlet = tree.segments[0].points[0].vec();
        const Vec3 axis_pt{0.0, inlet.y, inlet.z + cfg.aorta_radius};
        const double reach = cfg.aorta_radius + shell;
        splat({box.lo.x, axis_pt.y - reach, axis_pt.z - reach}, {box.hi.x, axis_pt.y + reach, axis_pt.z + reach},
              [&](Vec3 w) { return shade(std::hypot(w.y - axis_pt.y, w.z - axis_pt.z), cfg.aorta_radius); });
    }

    if (cfg.noise_amplitude > 0.0) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> normal(0.0, 0.5 * cfg.noise_amplitude);
        for (auto& v : vol.intensities) {
            normal.reset();
            v += std::clamp(normal(rng), -cfg.noise_amplitude, cfg.noise_amplitude);
        }
    }
    return vol;
}

struct SynthCase {
    std::string id;
    ArteryTree tree;
    Volume volume;
    ingest::PolyData centerline;  ///< carries the pressure array; also serves as the pressure cloud
};

inline std::string case_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03zu", index);
    return buf;
}

/// Case i uses seed + i for the tree and a derived stream for the noise.
inline SynthCase make_case(const SynthConfig& cfg, std::size_t index) {
    SynthCase c;
    c.id = case_id(index);
    const std::uint64_t seed = cfg.seed + index;
    c.tree = generate_tree(cfg, seed);
    c.volume = rasterize_volume(c.tree, cfg, seed ^ 0x5bd1e995ULL);
    c.centerline = centerline_polydata(c.tree, poiseuille_pressure(c.tree, cfg));
    return c;
}

/// ASCII VTP with points, point scalars and polylines, readable by read_vtp_ascii.
inline std::string to_vtp_ascii(const ingest::PolyData& pd) {
    std::ostringstream out;
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "<?xml version=\"1.0\"?>\n"
        << "<VTKFile type=\"PolyData\" version=\"1.0\" byte_order=\"LittleEndian\">\n"
        << "  <PolyData>\n"
        << "    <Piece NumberOfPoints=\"" << pd.points.size() << "\" NumberOfVerts=\"0\" NumberOfLines=\""
        << pd.lines.size() << "\" NumberOfStrips=\"0\" NumberOfPolys=\"0\">\n"
        << "      <PointData>\n";
    for (const auto& a : pd.point_scalars) {
        out << "        <DataArray type=\"Float64\" Name=\"" << a.name << "\" format=\"ascii\">\n         ";
        for (double v : a.values) out << ' ' << num(v);
        out << "\n        </DataArray>\n";
    }
    out << "      </PointData>\n"
        << "      <Points>\n"
        << "        <DataArray type=\"Float64\" NumberOfComponents=\"3\" format=\"ascii\">\n         ";
    for (const auto& p : pd.points) out << ' ' << num(p.x) << ' ' << num(p.y) << ' ' << num(p.z);
    out << "\n        </DataArray>\n"
        << "      </Points>\n"
        << "      <Lines>\n"
        << "        <DataArray type=\"Int64\" Name=\"connectivity\" format=\"ascii\">\n         ";
    for (const auto& l : pd.lines)
        for (std::size_t i : l) out << ' ' << i;
    out << "\n        </DataArray>\n"
        << "        <DataArray type=\"Int64\" Name=\"offsets\" format=\"ascii\">\n         ";
    std::size_t off = 0;
    for (const auto& l : pd.lines) out << ' ' << (off += l.size());
    out << "\n        </DataArray>\n"
        << "      </Lines>\n"
        << "    </Piece>\n"
        << "  </PolyData>\n"
        << "</VTKFile>\n";
    return out.str();
}

inline void write_vtp_ascii(const ingest::PolyData& pd, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError(ParseErrc::Io, "cannot write " + path.string());
    f << to_vtp_ascii(pd);
    if (!f) throw ParseError(ParseErrc::Io, "write failed for " + path.string());
}

}  // namespace coroflow::synth
