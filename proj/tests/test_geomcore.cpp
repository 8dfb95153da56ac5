#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "coroflow/geomcore.hpp"

using namespace coroflow;

namespace {

VolumeGrid grid(WorldPoint origin, std::array<double, 3> spacing, std::array<std::size_t, 3> dims) {
    VolumeGrid g;
    g.origin = origin;
    g.spacing = spacing;
    g.dims = dims;
    return g;
}

void expect_point(const WorldPoint& p, double x, double y, double z, Frame f, double tol = 1e-12) {
    EXPECT_NEAR(p.x, x, tol);
    EXPECT_NEAR(p.y, y, tol);
    EXPECT_NEAR(p.z, z, tol);
    EXPECT_EQ(p.frame, f);
}

}  // namespace

TEST(RasToLps, FlipsFirstTwoAxes) {
    expect_point(ras_to_lps({10, -20, 30, Frame::RAS}), -10, 20, 30, Frame::LPS);
    expect_point(ras_to_lps({0, 0, 5, Frame::RAS}), 0, 0, 5, Frame::LPS);
}

TEST(RasToLps, RejectsLpsInput) {
    EXPECT_THROW(ras_to_lps({1, 2, 3, Frame::LPS}), FrameMismatchError);
}

TEST(RasToLps, Involution) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-500, 500);
    for (int n = 0; n < 1000; ++n) {
        const WorldPoint p{u(rng), u(rng), u(rng), Frame::RAS};
        const WorldPoint back = lps_to_ras(ras_to_lps(p));
        EXPECT_EQ(back, p);
        // Applying the flip twice to the coordinates alone.
        WorldPoint twice = ras_to_lps(p);
        twice.frame = Frame::RAS;
        twice = ras_to_lps(twice);
        EXPECT_EQ(twice.x, p.x);
        EXPECT_EQ(twice.y, p.y);
        EXPECT_EQ(twice.z, p.z);
    }
}

TEST(WorldToVoxel, WorkedExample) {
    const auto g = grid({-100, -100, -50, Frame::LPS}, {0.5, 0.5, 0.5}, {64, 64, 64});
    const VoxelCoord v = world_to_voxel(g, {-90, -95, -40, Frame::LPS});
    EXPECT_DOUBLE_EQ(v.i, 20);
    EXPECT_DOUBLE_EQ(v.j, 10);
    EXPECT_DOUBLE_EQ(v.k, 20);
    const VoxelCoord o = world_to_voxel(g, g.origin);
    EXPECT_EQ(o, (VoxelCoord{0, 0, 0}));
}

TEST(WorldToVoxel, FrameMismatch) {
    const auto g = grid({0, 0, 0, Frame::LPS}, {1, 1, 1}, {2, 2, 2});
    EXPECT_THROW(world_to_voxel(g, {0, 0, 0, Frame::RAS}), FrameMismatchError);
}

TEST(VoxelToWorld, WorkedExample) {
    const auto g = grid({0, 0, 0, Frame::LPS}, {2, 2, 2}, {20, 20, 20});
    expect_point(voxel_to_world(g, {5, 10, 15}), 10, 20, 30, Frame::LPS);
    expect_point(voxel_to_world(g, {0, 0, 0}), 0, 0, 0, Frame::LPS);
}

TEST(WorldVoxel, RandomRoundTrips) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> pos(-1000, 1000), sp(0.05, 5), idx(-50, 600);
    std::uniform_int_distribution<int> sign(0, 1);
    double worst = 0.0;
    for (int n = 0; n < 10000; ++n) {
        VolumeGrid g = grid({pos(rng), pos(rng), pos(rng), sign(rng) ? Frame::LPS : Frame::RAS},
                            {sp(rng), sp(rng), sp(rng)}, {64, 64, 64});
        for (auto& s : g.axis_sign) s = sign(rng) ? 1 : -1;
        const WorldPoint p{pos(rng), pos(rng), pos(rng), g.orientation()};
        const WorldPoint back = voxel_to_world(g, world_to_voxel(g, p));
        worst = std::max({worst, std::abs(back.x - p.x), std::abs(back.y - p.y), std::abs(back.z - p.z)});
        const VoxelCoord v{idx(rng), idx(rng), idx(rng)};
        const VoxelCoord vb = world_to_voxel(g, voxel_to_world(g, v));
        EXPECT_NEAR(vb.i, v.i, 1e-9);
        EXPECT_NEAR(vb.j, v.j, 1e-9);
        EXPECT_NEAR(vb.k, v.k, 1e-9);
    }
    EXPECT_LE(worst, 1e-9);
}

TEST(AlignVolumeLps, WorkedExample) {
    const auto g = grid({-100, -100, -50, Frame::RAS}, {0.5, 0.5, 0.5}, {4, 4, 4});
    expect_point(voxel_to_world(g, {3, 3, 0}), -98.5, -98.5, -50, Frame::RAS);
    const VolumeGrid a = align_volume_lps(g);
    expect_point(voxel_to_world(a, {3, 3, 0}), 98.5, 98.5, -50, Frame::LPS);
}

TEST(AlignVolumeLps, DefiningPropertyOnRandomGrids) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pos(-200, 200), sp(0.1, 3);
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    for (int n = 0; n < 200; ++n) {
        VolumeGrid g = grid({pos(rng), pos(rng), pos(rng), Frame::RAS}, {sp(rng), sp(rng), sp(rng)},
                            {dim(rng), dim(rng), dim(rng)});
        const VolumeGrid a = align_volume_lps(g);
        ASSERT_EQ(a.orientation(), Frame::LPS);
        ASSERT_EQ(a.dims, g.dims);
        for (std::size_t k = 0; k < g.dims[2]; ++k)
            for (std::size_t j = 0; j < g.dims[1]; ++j)
                for (std::size_t i = 0; i < g.dims[0]; ++i) {
                    const VoxelCoord v{double(i), double(j), double(k)};
                    const WorldPoint want = ras_to_lps(voxel_to_world(g, v));
                    const WorldPoint got = voxel_to_world(a, v);
                    ASSERT_NEAR(got.x, want.x, 1e-9);
                    ASSERT_NEAR(got.y, want.y, 1e-9);
                    ASSERT_NEAR(got.z, want.z, 1e-9);
                }
    }
}

TEST(AlignVolumeLps, PreservesIntensitiesAndIsNoOpOnLps) {
    Volume v{grid({1, 2, 3, Frame::RAS}, {1, 1, 1}, {3, 2, 2}), {}};
    for (int n = 0; n < 12; ++n) v.intensities.push_back(n * 1.5 - 4);
    const Volume a = align_volume_lps(v);
    EXPECT_EQ(a.intensities, v.intensities);
    // Same physical sample at the same index: value lookups agree.
    EXPECT_EQ(a.at(2, 1, 1), v.at(2, 1, 1));

    const Volume again = align_volume_lps(a);
    EXPECT_EQ(again.grid.origin, a.grid.origin);
    EXPECT_EQ(again.grid.axis_sign, a.grid.axis_sign);
    EXPECT_EQ(again.intensities, a.intensities);
}

TEST(VolumeCenter, WorkedExamples) {
    expect_point(volume_center(grid({0, 0, 0, Frame::LPS}, {1, 1, 1}, {10, 10, 10})), 5, 5, 5, Frame::LPS);
    expect_point(volume_center(grid({0, 0, 0, Frame::LPS}, {2, 2, 2}, {1, 1, 1})), 1, 1, 1, Frame::LPS);
}

TEST(VolumeCenter, TranslationEquivariance) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int n = 0; n < 100; ++n) {
        const auto g = grid({u(rng), u(rng), u(rng), Frame::LPS}, {0.7, 1.1, 2.0}, {5, 9, 12});
        const Vec3 t{u(rng), u(rng), u(rng)};
        auto h = g;
        h.origin = WorldPoint::from(g.origin.vec() + t, Frame::LPS);
        const Vec3 d = volume_center(h).vec() - volume_center(g).vec() - t;
        EXPECT_LT(d.norm(), 1e-9);
    }
}

TEST(VolumeGrid, Validate) {
    auto g = grid({0, 0, 0, Frame::LPS}, {1, 1, 1}, {2, 2, 2});
    EXPECT_NO_THROW(g.validate());
    g.spacing[1] = 0;
    EXPECT_THROW(g.validate(), DataError);
    g.spacing[1] = 1;
    g.dims[2] = 0;
    EXPECT_THROW(g.validate(), DataError);
}
