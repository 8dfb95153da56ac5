#pragma once

// Coordinate frames and world <-> voxel mappings for axis-aligned volumes.
//
// Everything downstream of ingestion works in LPS millimetres. A grid stores
// an origin, positive spacing, and a per-axis sign so that an RAS volume can be
// re-tagged as LPS without touching its intensity array.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "coroflow/error.hpp"

namespace coroflow {

enum class Frame { RAS, LPS };

inline const char* to_string(Frame f) { return f == Frame::RAS ? "RAS" : "LPS"; }

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend Vec3 operator*(double s, Vec3 a) { return a * s; }
    friend bool operator==(const Vec3&, const Vec3&) = default;

    double dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(Vec3 o) const { return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x}; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return n > 0.0 ? *this * (1.0 / n) : *this;
    }
    double operator[](std::size_t a) const { return a == 0 ? x : (a == 1 ? y : z); }
    double& operator[](std::size_t a) { return a == 0 ? x : (a == 1 ? y : z); }
};

inline double distance(Vec3 a, Vec3 b) { return (a - b).norm(); }

/// A position in millimetres, tagged with the frame it is expressed in.
struct WorldPoint {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    Frame frame = Frame::LPS;

    Vec3 vec() const { return {x, y, z}; }
    static WorldPoint from(Vec3 v, Frame f) { return {v.x, v.y, v.z, f}; }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
    friend bool operator==(const WorldPoint&, const WorldPoint&) = default;
};

/// Continuous voxel index. Rounding happens only at patch extraction.
struct VoxelCoord {
    double i = 0.0;
    double j = 0.0;
    double k = 0.0;

    double operator[](std::size_t a) const { return a == 0 ? i : (a == 1 ? j : k); }
    friend bool operator==(const VoxelCoord&, const VoxelCoord&) = default;
};

struct VolumeGrid {
    WorldPoint origin;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<std::size_t, 3> dims{1, 1, 1};
    /// +1 or -1 per axis: world = origin + sign * index * spacing.
    std::array<int, 3> axis_sign{1, 1, 1};

    Frame orientation() const { return origin.frame; }

    std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

    /// Linear offset with i fastest and k slowest.
    std::size_t linear_index(std::size_t i, std::size_t j, std::size_t k) const {
        return i + dims[0] * (j + dims[1] * k);
    }

    bool contains(long i, long j, long k) const {
        return i >= 0 && j >= 0 && k >= 0 && static_cast<std::size_t>(i) < dims[0] &&
               static_cast<std::size_t>(j) < dims[1] && static_cast<std::size_t>(k) < dims[2];
    }

    void validate() const {
        for (std::size_t a = 0; a < 3; ++a) {
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw DataError("grid spacing must be positive and finite on axis " + std::to_string(a));
            if (dims[a] < 1) throw DataError("grid dims must be >= 1 on axis " + std::to_string(a));
            if (axis_sign[a] != 1 && axis_sign[a] != -1)
                throw DataError("grid axis sign must be +1 or -1");
        }
        if (!origin.finite()) throw DataError("grid origin must be finite");
    }
};

/// A grid plus its intensity samples, indexed by VolumeGrid::linear_index.
struct Volume {
    VolumeGrid grid;
    std::vector<double> intensities;

    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return intensities[grid.linear_index(i, j, k)];
    }
};

inline WorldPoint ras_to_lps(const WorldPoint& p) {
    if (p.frame != Frame::RAS) throw FrameMismatchError("ras_to_lps expects an RAS point, got LPS");
    return {-p.x, -p.y, p.z, Frame::LPS};
}

inline WorldPoint lps_to_ras(const WorldPoint& p) {
    if (p.frame != Frame::LPS) throw FrameMismatchError("lps_to_ras expects an LPS point, got RAS");
    return {-p.x, -p.y, p.z, Frame::RAS};
}

/// Re-tag an RAS grid as LPS. The origin and the first two axis directions are
/// negated, so index (i,j,k) keeps addressing the same physical sample and its
/// world position becomes ras_to_lps of the old one. LPS input is returned as is.
inline VolumeGrid align_volume_lps(const VolumeGrid& g) {
    if (g.orientation() == Frame::LPS) return g;
    VolumeGrid out = g;
    out.origin = ras_to_lps(g.origin);
    out.axis_sign[0] = -g.axis_sign[0];
    out.axis_sign[1] = -g.axis_sign[1];
    return out;
}

inline Volume align_volume_lps(const Volume& v) { return {align_volume_lps(v.grid), v.intensities}; }

inline VoxelCoord world_to_voxel(const VolumeGrid& g, const WorldPoint& p) {
    if (p.frame != g.orientation())
        throw FrameMismatchError(std::string("point is ") + to_string(p.frame) + ", grid is " +
                                 to_string(g.orientation()));
    return {(p.x - g.origin.x) / (g.axis_sign[0] * g.spacing[0]),
            (p.y - g.origin.y) / (g.axis_sign[1] * g.spacing[1]),
            (p.z - g.origin.z) / (g.axis_sign[2] * g.spacing[2])};
}

inline WorldPoint voxel_to_world(const VolumeGrid& g, const VoxelCoord& v) {
    return {g.origin.x + g.axis_sign[0] * v.i * g.spacing[0], g.origin.y + g.axis_sign[1] * v.j * g.spacing[1],
            g.origin.z + g.axis_sign[2] * v.k * g.spacing[2], g.orientation()};
}

/// Bounding-box centre: origin + sign * spacing * dims / 2.
inline WorldPoint volume_center(const VolumeGrid& g) {
    return voxel_to_world(g, {static_cast<double>(g.dims[0]) / 2.0, static_cast<double>(g.dims[1]) / 2.0,
                              static_cast<double>(g.dims[2]) / 2.0});
}

}  // namespace coroflow
