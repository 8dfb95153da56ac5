#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "coroflow/geomcore.hpp"

namespace coroflow {

/// Patch extent as (d, h, w): d runs along k, h along j, w along i.
using PatchShape = std::array<std::size_t, 3>;

inline constexpr PatchShape kDefaultPatchShape{28, 28, 28};

inline std::size_t patch_size(const PatchShape& s) { return s[0] * s[1] * s[2]; }

/// One training unit: an intensity patch around a centerline point and the
/// averaged pressure there.
struct Sample {
    std::string case_id;
    std::size_t index = 0;  ///< position of the point along its case's centerline list
    WorldPoint world;       ///< LPS millimetres
    VoxelCoord local;       ///< continuous voxel coordinate of `world`
    double label_mmhg = 0.0;
    std::vector<float> patch;  ///< d*h*w values, i fastest, k slowest
};

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

}  // namespace coroflow
