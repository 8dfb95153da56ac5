#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <numeric>
#include <random>

#include "coroflow/norm.hpp"
#include "coroflow/patchset.hpp"
#include "coroflow/synthflow.hpp"
#include "support/tmpdir.hpp"

using namespace coroflow;
using namespace coroflow::patchset;

namespace {

Volume numbered_volume(std::array<std::size_t, 3> dims, WorldPoint origin = {0, 0, 0, Frame::LPS},
                       std::array<double, 3> spacing = {1, 1, 1}) {
    Volume v;
    v.grid.origin = origin;
    v.grid.spacing = spacing;
    v.grid.dims = dims;
    for (std::size_t n = 0; n < v.grid.voxel_count(); ++n) v.intensities.push_back(double(n + 1));
    return v;
}

/// Patch entry (ti, tj, tk) sits at world p + (t - floor(n/2)) * spacing on
/// each world axis; look that position up through the grid.
float oracle_value(const Volume& v, const WorldPoint& p, std::array<long, 3> offset) {
    const VoxelCoord c = world_to_voxel(v.grid, p);
    const double ci = double(std::lround(c.i)), cj = double(std::lround(c.j)), ck = double(std::lround(c.k));
    const WorldPoint centre = voxel_to_world(v.grid, {ci, cj, ck});
    const WorldPoint at{centre.x + double(offset[0]) * v.grid.spacing[0], centre.y + double(offset[1]) * v.grid.spacing[1],
                        centre.z + double(offset[2]) * v.grid.spacing[2], v.grid.orientation()};
    const VoxelCoord idx = world_to_voxel(v.grid, at);
    const long i = std::lround(idx.i), j = std::lround(idx.j), k = std::lround(idx.k);
    if (!v.grid.contains(i, j, k)) return 0.0f;
    return float(v.at(std::size_t(i), std::size_t(j), std::size_t(k)));
}

void expect_matches_oracle(const Volume& v, const WorldPoint& p, PatchShape shape) {
    const auto patch = extract_patch(v, p, shape);
    const std::array<std::size_t, 3> n{shape[2], shape[1], shape[0]};
    std::size_t at = 0;
    for (std::size_t tk = 0; tk < n[2]; ++tk)
        for (std::size_t tj = 0; tj < n[1]; ++tj)
            for (std::size_t ti = 0; ti < n[0]; ++ti, ++at) {
                const std::array<long, 3> off{long(ti) - long(n[0] / 2), long(tj) - long(n[1] / 2), long(tk) - long(n[2] / 2)};
                ASSERT_EQ(patch[at], oracle_value(v, p, off)) << ti << "," << tj << "," << tk;
            }
}

ingest::PolyData cloud(std::vector<WorldPoint> pts, std::vector<double> pressure) {
    ingest::PolyData pd;
    pd.points = std::move(pts);
    pd.point_scalars.push_back({"pressure_ave_mmhg", std::move(pressure)});
    return pd;
}

}  // namespace

TEST(ExtractPatch, CornerOfTiny4Cube) {
    const Volume v = numbered_volume({4, 4, 4});
    const auto patch = extract_patch(v, {0, 0, 0, Frame::LPS}, {4, 4, 4});
    // Hand enumeration: offsets -2..1 around voxel (0,0,0); negative indices are zero.
    std::size_t at = 0, zeros = 0;
    for (int tk = -2; tk < 2; ++tk)
        for (int tj = -2; tj < 2; ++tj)
            for (int ti = -2; ti < 2; ++ti, ++at) {
                const bool inside = ti >= 0 && tj >= 0 && tk >= 0;
                const float want = inside ? float(1 + ti + 4 * (tj + 4 * tk)) : 0.0f;
                EXPECT_EQ(patch[at], want);
                zeros += !inside;
            }
    EXPECT_EQ(zeros, 64u - 8u);
    expect_matches_oracle(v, {0, 0, 0, Frame::LPS}, {4, 4, 4});
}

TEST(ExtractPatch, MatchesWorldOracleOnRandomGrids) {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::size_t> dim(1, 7), ext(1, 6);
    std::uniform_real_distribution<double> sp(0.3, 2.0), off(-20, 20);
    std::uniform_int_distribution<int> coin(0, 1);
    for (int n = 0; n < 300; ++n) {
        Volume v = numbered_volume({dim(rng), dim(rng), dim(rng)}, {off(rng), off(rng), off(rng), Frame::RAS},
                                   {sp(rng), sp(rng), sp(rng)});
        if (coin(rng)) v = align_volume_lps(v);
        if (coin(rng)) v.grid.axis_sign[2] = -1;
        // Point somewhere around (and sometimes outside) the volume.
        std::uniform_real_distribution<double> fi(-2.0, double(v.grid.dims[0]) + 1.0), fj(-2.0, double(v.grid.dims[1]) + 1.0),
            fk(-2.0, double(v.grid.dims[2]) + 1.0);
        const WorldPoint p = voxel_to_world(v.grid, {fi(rng), fj(rng), fk(rng)});
        expect_matches_oracle(v, p, {ext(rng), ext(rng), ext(rng)});
    }
}

TEST(ExtractPatch, ConstantVolumeAndCentreVoxel) {
    Volume v = numbered_volume({30, 30, 30});
    std::fill(v.intensities.begin(), v.intensities.end(), 7.0);
    const auto flat = extract_patch(v, volume_center(v.grid), {28, 28, 28});
    EXPECT_TRUE(std::all_of(flat.begin(), flat.end(), [](float x) { return x == 7.0f; }));

    const Volume num = numbered_volume({9, 8, 7}, {5, -3, 2, Frame::LPS}, {0.5, 0.75, 1.25});
    const WorldPoint p{6.3, -1.1, 4.0, Frame::LPS};
    const PatchShape shape{5, 4, 6};  // d, h, w
    const auto patch = extract_patch(num, p, shape);
    const VoxelCoord c = world_to_voxel(num.grid, p);
    const float centre = float(num.at(std::size_t(std::lround(c.i)), std::size_t(std::lround(c.j)), std::size_t(std::lround(c.k))));
    const std::size_t w = shape[2], h = shape[1];
    EXPECT_EQ(patch[(shape[0] / 2 * h + h / 2) * w + w / 2], centre);
}

TEST(ExtractPatch, WindowLeavesOutsideAtZero) {
    const Volume v = numbered_volume({3, 3, 3});
    const IntensityWindow win{-10.0, 10.0};
    const auto patch = extract_patch(v, {0, 0, 0, Frame::LPS}, {2, 2, 2}, &win);
    EXPECT_EQ(patch[0], 0.0f);                          // outside
    EXPECT_EQ(patch[7], float(win(v.at(0, 0, 0))));     // inside: (1 + 10) / 20
    EXPECT_FLOAT_EQ(patch[7], 0.55f);
}

TEST(ExtractPatch, EmptySupport) {
    const Volume v = numbered_volume({4, 4, 4});
    const WorldPoint far{100, 100, 100, Frame::LPS};
    EXPECT_TRUE(patch_outside(v.grid, far, {4, 4, 4}));
    const auto patch = extract_patch(v, far, {4, 4, 4});
    EXPECT_TRUE(std::all_of(patch.begin(), patch.end(), [](float x) { return x == 0.0f; }));
    EXPECT_FALSE(patch_outside(v.grid, {0, 0, 0, Frame::LPS}, {4, 4, 4}));
    EXPECT_FALSE(patch_outside(v.grid, {5, 0, 0, Frame::LPS}, {4, 4, 4}));  // reaches back to i = 3
    EXPECT_TRUE(patch_outside(v.grid, {6, 0, 0, Frame::LPS}, {4, 4, 4}));
}

TEST(Percentile, NearestRank) {
    EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 0.0), 1.0);
    EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 1.0), 5.0);
    EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 0.5), 3.0);
    std::vector<double> hundred1;
    for (int i = 1; i <= 101; ++i) hundred1.push_back(i);
    EXPECT_EQ(percentile(hundred1, 0.99), 100.0);
    EXPECT_THROW(percentile({}, 0.5), DataError);
}

TEST(LabelPressure, ConstantCloud) {
    const auto pd = cloud({{0, 0, 0}, {1, 0, 0}, {9, 9, 9}}, {88.5, 88.5, 88.5});
    for (double eps : {0.1, 1.0, 5.0, 50.0}) EXPECT_EQ(label_pressure({0.5, 0, 0}, pd, {eps}).value, 88.5);
}

TEST(LabelPressure, TwoPointMean) {
    const auto pd = cloud({{-2, 0, 0}, {2, 0, 0}}, {90, 100});
    const LabelResult r = label_pressure({0, 0, 0, Frame::LPS}, pd, {5.0});
    EXPECT_EQ(r.value, 95.0);
    EXPECT_EQ(r.members, 2u);
    EXPECT_FALSE(r.fallback);
}

TEST(LabelPressure, NearestNeighbourFallback) {
    const auto pd = cloud({{10, 0, 0}, {0, 8, 0}, {0, 0, 30}}, {90, 97.5, 99});
    const LabelResult r = label_pressure({0, 0, 0, Frame::LPS}, pd, {5.0});
    EXPECT_EQ(r.value, 97.5);
    EXPECT_TRUE(r.fallback);
    EXPECT_EQ(r.fallback_distance, 8.0);
}

TEST(LabelPressure, PermutationInvariant) {
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> pos(-10, 10), pr(80, 100);
    for (int n = 0; n < 100; ++n) {
        std::vector<WorldPoint> pts;
        std::vector<double> p;
        for (int i = 0; i < 40; ++i) {
            pts.push_back({pos(rng), pos(rng), pos(rng), Frame::LPS});
            p.push_back(pr(rng));
        }
        // A tie in the fallback path: two nearest points at the same distance.
        pts.push_back({30, 0, 0, Frame::LPS});
        p.push_back(91);
        pts.push_back({0, 30, 0, Frame::LPS});
        p.push_back(90);
        const WorldPoint q{pos(rng), pos(rng), pos(rng), Frame::LPS};
        std::vector<std::size_t> perm(pts.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<WorldPoint> pts2;
        std::vector<double> p2;
        for (std::size_t i : perm) {
            pts2.push_back(pts[i]);
            p2.push_back(p[i]);
        }
        for (double eps : {2.0, 5.0}) {
            const double a = label_pressure(q, cloud(pts, p), {eps}).value;
            const double b = label_pressure(q, cloud(pts2, p2), {eps}).value;
            EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
        }
        const WorldPoint tie{0, 0, 0, Frame::LPS};
        const auto only_far = cloud({pts[40], pts[41]}, {91, 90});
        const auto only_far2 = cloud({pts[41], pts[40]}, {90, 91});
        EXPECT_EQ(label_pressure(tie, only_far, {5.0}).value, 90.0);
        EXPECT_EQ(label_pressure(tie, only_far2, {5.0}).value, 90.0);
    }
}

TEST(LabelPressure, Errors) {
    EXPECT_THROW(label_pressure({0, 0, 0, Frame::LPS}, cloud({}, {}), {5.0}), DataError);
    EXPECT_THROW(label_pressure({0, 0, 0, Frame::LPS}, cloud({{0, 0, 0}}, {1}), {0.0}), UsageError);
    EXPECT_THROW(label_pressure({0, 0, 0, Frame::RAS}, cloud({{0, 0, 0}}, {1}), {5.0}), FrameMismatchError);
}

TEST(Splits, ReproduceCaseCounts) {
    auto count = [](const std::vector<Split>& s) {
        std::map<Split, std::size_t> c;
        for (Split x : s) ++c[x];
        return std::array<std::size_t, 3>{c[Split::Train], c[Split::Val], c[Split::Test]};
    };
    EXPECT_EQ(count(assign_splits(55, SplitRatios::from_weights(40, 5, 10), 42)), (std::array<std::size_t, 3>{40, 5, 10}));
    EXPECT_EQ(count(assign_splits(55, SplitRatios{}, 1)), (std::array<std::size_t, 3>{40, 5, 10}));
    EXPECT_EQ(count(assign_splits(25, SplitRatios::from_weights(20, 2, 3), 42)), (std::array<std::size_t, 3>{20, 2, 3}));
    for (std::size_t n = 1; n < 80; ++n) {
        const auto c = count(assign_splits(n, SplitRatios::from_weights(40, 5, 10), 3));
        EXPECT_EQ(c[0] + c[1] + c[2], n);
    }
    EXPECT_EQ(assign_splits(30, SplitRatios{}, 5), assign_splits(30, SplitRatios{}, 5));
    EXPECT_NE(assign_splits(30, SplitRatios{}, 5), assign_splits(30, SplitRatios{}, 6));
}

TEST(Splits, RatiosMustSumToOne) {
    EXPECT_THROW(assign_splits(10, SplitRatios{0.5, 0.2, 0.2}, 1), UsageError);
    EXPECT_THROW(SplitRatios::from_weights(0, 0, 0), UsageError);
    EXPECT_THROW(SplitRatios::from_weights(-1, 2, 3), UsageError);
}

TEST(Norm, ApplyAndInvert) {
    const NormStats s{100.0, 5.0};
    EXPECT_EQ(apply_norm(110.0, s), 2.0);
    EXPECT_EQ(apply_norm(100.0, s), 0.0);
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int n = 0; n < 1000; ++n) {
        const double x = u(rng);
        EXPECT_NEAR(invert_norm(apply_norm(x, s), s), x, 1e-12);
    }
}

TEST(Norm, FittedStatsStandardise) {
    std::mt19937_64 rng(24);
    std::normal_distribution<double> g(97.0, 0.8);
    std::vector<double> labels(2000);
    for (auto& x : labels) x = g(rng);
    const NormStats s = fit_norm(labels);
    double mean = 0, var = 0;
    for (double x : labels) mean += apply_norm(x, s);
    mean /= double(labels.size());
    for (double x : labels) var += (apply_norm(x, s) - mean) * (apply_norm(x, s) - mean);
    var /= double(labels.size());
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(var), 1.0, 1e-9);
}

namespace {

std::vector<CaseInput> synthetic_cases(std::size_t n) {
    synth::SynthConfig cfg;
    cfg.dims = {64, 64, 72};
    cfg.spacing = {0.5, 0.5, 0.5};
    cfg.root_length = 9.0;
    cfg.aorta_radius = 0.0;
    cfg.depth = 1;
    cfg.margin = 2.0;
    std::vector<CaseInput> out;
    for (std::size_t i = 0; i < n; ++i) {
        synth::SynthCase c = synth::make_case(cfg, i);
        out.push_back({c.id, c.volume, c.centerline, c.centerline});
    }
    return out;
}

}  // namespace

TEST(BuildDataset, StructureAndNormalisation) {
    const auto cases = synthetic_cases(6);
    BuildOptions opt;
    opt.patch_shape = {8, 8, 8};
    opt.ratios = SplitRatios::from_weights(4, 1, 1);
    const BuildResult r = build_dataset(cases, opt);

    std::size_t points = 0;
    for (const auto& c : cases) points += c.centerline.points.size();
    EXPECT_EQ(r.samples.size(), points);
    EXPECT_EQ(r.manifest.count, points);
    EXPECT_EQ(r.manifest.cases.size(), 6u);

    std::vector<double> train_labels;
    for (const auto& s : r.samples) {
        const auto* c = r.manifest.find_case(s.case_id);
        ASSERT_NE(c, nullptr);
        if (c->split == Split::Train) train_labels.push_back(s.label_mmhg);
        const auto& vol = std::find_if(cases.begin(), cases.end(), [&](const CaseInput& ci) { return ci.id == s.case_id; })->volume;
        EXPECT_EQ(s.local, world_to_voxel(vol.grid, s.world));
        EXPECT_EQ(s.patch.size(), 512u);
        for (float x : s.patch) ASSERT_TRUE(x >= 0.0f && x <= 1.0f);
    }
    const NormStats st = fit_norm(train_labels);
    EXPECT_EQ(r.manifest.label_mean, st.mean);
    EXPECT_EQ(r.manifest.label_std, st.std);
    double m = 0, v = 0;
    for (double x : train_labels) m += apply_norm(x, st);
    m /= double(train_labels.size());
    for (double x : train_labels) v += std::pow(apply_norm(x, st) - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(v / double(train_labels.size())), 1.0, 1e-9);
}

TEST(BuildDataset, RebuildIsBitwiseIdentical) {
    const auto cases = synthetic_cases(3);
    BuildOptions opt;
    opt.patch_shape = {6, 6, 6};
    fixture::TempDir a, b;
    const BuildResult ra = build_dataset(cases, opt), rb = build_dataset(cases, opt);
    ingest::write_dataset(ra.manifest, ra.samples, a.path());
    ingest::write_dataset(rb.manifest, rb.samples, b.path());
    for (const char* f : {"manifest.json", "patches.bin", "points.csv"})
        EXPECT_EQ(fixture::read_text(a / f), fixture::read_text(b / f)) << f;
}

TEST(BuildDataset, RasInputsMatchLpsInputs) {
    auto lps = synthetic_cases(1);
    CaseInput ras = lps[0];
    ras.volume.grid.origin = lps_to_ras(lps[0].volume.grid.origin);
    ras.volume.grid.axis_sign = {-1, -1, 1};
    for (auto* pd : {&ras.centerline, &ras.pressure_cloud})
        for (auto& p : pd->points) p = lps_to_ras(p);
    BuildOptions opt;
    opt.patch_shape = {5, 6, 7};
    opt.ratios = SplitRatios::from_weights(1, 0, 0);
    const auto a = build_dataset(lps, opt), b = build_dataset({ras}, opt);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t n = 0; n < a.samples.size(); ++n) {
        EXPECT_EQ(a.samples[n].patch, b.samples[n].patch);
        EXPECT_EQ(a.samples[n].label_mmhg, b.samples[n].label_mmhg);
        EXPECT_NEAR(a.samples[n].world.x, b.samples[n].world.x, 1e-12);
    }
}

TEST(BuildDataset, Errors) {
    auto cases = synthetic_cases(2);
    cases[1].id = cases[0].id;
    EXPECT_THROW(build_dataset(cases, {}), DataError);
    cases = synthetic_cases(2);
    BuildOptions opt;
    opt.ratios = {0.5, 0.5, 0.5};
    EXPECT_THROW(build_dataset(cases, opt), UsageError);
}

TEST(BuildDataset, ResplitRefitsStatistics) {
    const auto cases = synthetic_cases(4);
    BuildOptions opt;
    opt.patch_shape = {4, 4, 4};
    BuildResult r = build_dataset(cases, opt);
    resplit(r.manifest, r.samples, SplitRatios::from_weights(2, 1, 1), 7);
    std::map<Split, std::size_t> n;
    for (const auto& c : r.manifest.cases) ++n[c.split];
    EXPECT_EQ(n[Split::Train], 2u);
    EXPECT_EQ(n[Split::Val], 1u);
    EXPECT_EQ(n[Split::Test], 1u);
    EXPECT_EQ(r.manifest.label_mean, train_label_stats(r.manifest, r.samples).mean);
}
