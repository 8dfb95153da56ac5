#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "coroflow/ingest/dataset.hpp"
#include "coroflow/ingest/nifti.hpp"
#include "coroflow/ingest/vtp.hpp"
#include "support/nifti_fixture.hpp"
#include "support/tmpdir.hpp"

using namespace coroflow;
using namespace coroflow::ingest;

namespace {

std::vector<double> ramp(std::size_t n, double start = 0.0) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = start + double(i);
    return v;
}

ParseErrc parse_code(const std::vector<unsigned char>& bytes) {
    try {
        parse_nifti(bytes);
    } catch (const ParseError& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected a ParseError";
    return ParseErrc::Io;
}

}  // namespace

// ---------------------------------------------------------------- NIfTI

TEST(Nifti, Int16RampRoundTrips) {
    fixture::NiftiSpec s;
    const auto values = ramp(512);
    const NiftiVolume nv = parse_nifti(fixture::make_nifti(s, values));
    EXPECT_EQ(nv.volume.intensities, values);
    EXPECT_EQ(nv.volume.grid.dims, (std::array<std::size_t, 3>{8, 8, 8}));
    EXPECT_EQ(nv.header.datatype, 4);
    EXPECT_FALSE(nv.header.byte_swapped);
}

TEST(Nifti, BigEndianMatchesLittleEndian) {
    for (std::int16_t dt : {2, 4, 8, 16, 64}) {
        fixture::NiftiSpec s;
        s.datatype = dt;
        s.dims = {5, 3, 2};
        s.slope = 0.5f;
        s.inter = -3.0f;
        const auto values = ramp(30, 1.0);
        auto le = s, be = s;
        be.big_endian = true;
        const NiftiVolume a = parse_nifti(fixture::make_nifti(le, values));
        const NiftiVolume b = parse_nifti(fixture::make_nifti(be, values));
        EXPECT_TRUE(b.header.byte_swapped);
        EXPECT_EQ(a.volume.intensities, b.volume.intensities) << "datatype " << dt;
        EXPECT_EQ(a.volume.grid.origin, b.volume.grid.origin);
        EXPECT_EQ(a.volume.grid.spacing, b.volume.grid.spacing);
    }
}

TEST(Nifti, EverySupportedDatatype) {
    // Values chosen to be exact in every stored type.
    const std::vector<double> values{0, 1, 2, 7, 100, 127, 200, 255};
    for (std::int16_t dt : {2, 4, 8, 16, 64}) {
        fixture::NiftiSpec s;
        s.datatype = dt;
        s.dims = {2, 2, 2};
        const NiftiVolume nv = parse_nifti(fixture::make_nifti(s, values));
        EXPECT_EQ(nv.volume.intensities, values) << "datatype " << dt;
    }
    std::vector<double> negative{-32768, -1, 0, 1, 32767, -5, 5, 12};
    fixture::NiftiSpec s;
    s.dims = {2, 2, 2};
    EXPECT_EQ(parse_nifti(fixture::make_nifti(s, negative)).volume.intensities, negative);
    s.datatype = 64;
    std::vector<double> fine{0.1, -2.5e-7, 3.14159, 1e300, -1e-300, 0, 42, 7.25};
    EXPECT_EQ(parse_nifti(fixture::make_nifti(s, fine)).volume.intensities, fine);
}

TEST(Nifti, SlopeAndIntercept) {
    fixture::NiftiSpec s;
    s.dims = {1, 1, 1};
    s.slope = 2.0f;
    s.inter = 10.0f;
    EXPECT_DOUBLE_EQ(parse_nifti(fixture::make_nifti(s, {3})).volume.intensities[0], 16.0);
    s.slope = 0.0f;  // "no scaling"
    EXPECT_DOUBLE_EQ(parse_nifti(fixture::make_nifti(s, {3})).volume.intensities[0], 3.0);
}

TEST(Nifti, BadMagic) {
    fixture::NiftiSpec s;
    s.magic = std::string("abc\0", 4);
    EXPECT_EQ(parse_code(fixture::make_nifti(s, ramp(512))), ParseErrc::BadMagic);
    s.magic = std::string("ni1\0", 4);
    EXPECT_EQ(parse_code(fixture::make_nifti(s, ramp(512))), ParseErrc::BadMagic);
}

TEST(Nifti, WrongHeaderSize) {
    fixture::NiftiSpec s;
    s.sizeof_hdr = 540;  // NIfTI-2
    EXPECT_EQ(parse_code(fixture::make_nifti(s, ramp(512))), ParseErrc::BadHeaderSize);
    s.big_endian = true;
    EXPECT_EQ(parse_code(fixture::make_nifti(s, ramp(512))), ParseErrc::BadHeaderSize);
}

TEST(Nifti, TruncatedPayload) {
    fixture::NiftiSpec s;
    auto bytes = fixture::make_nifti(s, ramp(512));
    bytes.pop_back();
    EXPECT_EQ(parse_code(bytes), ParseErrc::Truncated);
    bytes.resize(200);
    EXPECT_EQ(parse_code(bytes), ParseErrc::Truncated);
}

TEST(Nifti, UnsupportedDatatype) {
    fixture::NiftiSpec s;
    s.datatype = 4;
    auto bytes = fixture::make_nifti(s, ramp(512));
    const std::int16_t complex64 = 32;
    std::memcpy(bytes.data() + 70, &complex64, 2);
    EXPECT_EQ(parse_code(bytes), ParseErrc::UnsupportedDatatype);
}

TEST(Nifti, PixdimPathAssumesRasAndAligns) {
    fixture::NiftiSpec s;
    s.dims = {4, 4, 4};
    s.pixdim = {0.5f, 0.75f, 2.0f};
    const NiftiVolume nv = parse_nifti(fixture::make_nifti(s, ramp(64)));
    const VolumeGrid& g = nv.volume.grid;
    EXPECT_EQ(g.orientation(), Frame::LPS);
    EXPECT_EQ(g.spacing, (std::array<double, 3>{0.5, 0.75, 2.0}));
    // Voxel (2,1,3) sits at RAS (1, 0.75, 6), i.e. LPS (-1, -0.75, 6).
    const WorldPoint w = voxel_to_world(g, {2, 1, 3});
    EXPECT_DOUBLE_EQ(w.x, -1.0);
    EXPECT_DOUBLE_EQ(w.y, -0.75);
    EXPECT_DOUBLE_EQ(w.z, 6.0);
    EXPECT_EQ(nv.volume.at(2, 1, 3), 2 + 4 * (1 + 4 * 3));
}

TEST(Nifti, SformWithFlippedAxes) {
    fixture::NiftiSpec s;
    s.dims = {3, 3, 3};
    s.sform_code = 1;
    s.srow = {{{-2.0f, 0, 0, 50.0f}, {0, -1.0f, 0, 20.0f}, {0, 0, 1.5f, -30.0f}}};
    const NiftiVolume nv = parse_nifti(fixture::make_nifti(s, ramp(27)));
    // RAS of voxel (1,2,1) is (48, 18, -28.5); LPS is (-48, -18, -28.5).
    const WorldPoint w = voxel_to_world(nv.volume.grid, {1, 2, 1});
    EXPECT_DOUBLE_EQ(w.x, -48.0);
    EXPECT_DOUBLE_EQ(w.y, -18.0);
    EXPECT_DOUBLE_EQ(w.z, -28.5);
    const VoxelCoord v = world_to_voxel(nv.volume.grid, w);
    EXPECT_NEAR(v.i, 1, 1e-12);
    EXPECT_NEAR(v.j, 2, 1e-12);
    EXPECT_NEAR(v.k, 1, 1e-12);
}

TEST(Nifti, ObliqueSformRejected) {
    fixture::NiftiSpec s;
    s.dims = {2, 2, 2};
    s.sform_code = 1;
    s.srow = {{{1, 0.2f, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
    EXPECT_EQ(parse_code(fixture::make_nifti(s, ramp(8))), ParseErrc::UnsupportedOrientation);
}

TEST(Nifti, ReadsFromDisk) {
    fixture::TempDir dir;
    fixture::write_bytes(dir / "v.nii", fixture::make_nifti({}, ramp(512)));
    EXPECT_EQ(read_nifti(dir / "v.nii").volume.intensities.size(), 512u);
    try {
        read_nifti(dir / "missing.nii");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code(), ParseErrc::Io);
    }
}

TEST(Nifti, RandomCorruptionNeverCrashes) {
    std::mt19937_64 rng(5);
    const auto good = fixture::make_nifti({}, ramp(512));
    std::uniform_int_distribution<std::size_t> pos(0, good.size() - 1), len(0, good.size());
    std::uniform_int_distribution<int> byte(0, 255);
    for (int n = 0; n < 500; ++n) {
        auto bytes = good;
        for (int f = 0; f < 4; ++f) bytes[pos(rng) % 352] = static_cast<unsigned char>(byte(rng));
        if (n % 3 == 0) bytes.resize(len(rng));
        try {
            const NiftiVolume nv = parse_nifti(bytes);
            EXPECT_EQ(nv.volume.intensities.size(), nv.volume.grid.voxel_count());
        } catch (const Error&) {
        }
    }
}

// ---------------------------------------------------------------- VTP

namespace {

const char* kThreePoints = R"(<?xml version="1.0"?>
<VTKFile type="PolyData" version="0.1" byte_order="LittleEndian">
  <PolyData>
    <Piece NumberOfPoints="3" NumberOfLines="1">
      <PointData Scalars="pressure_ave_mmhg">
        <DataArray type="Float64" Name="pressure_ave_mmhg" format="ascii">100 99.5 98.25</DataArray>
        <DataArray type="Float32" Name="radius" NumberOfComponents="1" format="ascii">1.5 1.4 1.3</DataArray>
      </PointData>
      <Points>
        <DataArray type="Float32" NumberOfComponents="3" format="ascii">
          0 0 0
          1 2 3
          -4.5 5 6e-1
        </DataArray>
      </Points>
      <Lines>
        <DataArray type="Int64" Name="connectivity" format="ascii">0 1 2</DataArray>
        <DataArray type="Int64" Name="offsets" format="ascii">3</DataArray>
      </Lines>
    </Piece>
  </PolyData>
</VTKFile>
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
    const auto at = s.find(from);
    if (at != std::string::npos) s.replace(at, from.size(), to);
    return s;
}

ParseErrc vtp_code(const std::string& xml) {
    try {
        parse_vtp_ascii(xml);
    } catch (const ParseError& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected a ParseError";
    return ParseErrc::Io;
}

}  // namespace

TEST(Vtp, ValidAsciiFixture) {
    const PolyData pd = parse_vtp_ascii(kThreePoints);
    ASSERT_EQ(pd.points.size(), 3u);
    EXPECT_EQ(pd.points[2], (WorldPoint{-4.5, 5, 0.6, Frame::LPS}));
    ASSERT_EQ(pd.point_scalars.size(), 2u);
    EXPECT_EQ(pd.pressure().values, (std::vector<double>{100, 99.5, 98.25}));
    EXPECT_EQ(pd.find_scalar("radius")->values.size(), 3u);
    ASSERT_EQ(pd.lines.size(), 1u);
    EXPECT_EQ(pd.lines[0], (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Vtp, TripleMSpellingAccepted) {
    const PolyData pd = parse_vtp_ascii(replace(kThreePoints, "Name=\"pressure_ave_mmhg\"", "Name=\"pressure_ave_mmmhg\""));
    EXPECT_EQ(pd.pressure().name, "pressure_ave_mmmhg");
    EXPECT_EQ(pd.pressure().values[1], 99.5);
}

TEST(Vtp, RasPointsConverted) {
    const PolyData pd = parse_vtp_ascii(kThreePoints, Frame::RAS);
    EXPECT_EQ(pd.points[1], (WorldPoint{-1, -2, 3, Frame::LPS}));
}

TEST(Vtp, EmptyPointData) {
    std::string xml = kThreePoints;
    const auto a = xml.find("<PointData"), b = xml.find("</PointData>") + std::strlen("</PointData>");
    xml.erase(a, b - a);
    const PolyData pd = parse_vtp_ascii(xml);
    EXPECT_EQ(pd.points.size(), 3u);
    EXPECT_TRUE(pd.point_scalars.empty());
    EXPECT_THROW(pd.pressure(), ParseError);
}

TEST(Vtp, NumberOfPointsMismatch) {
    EXPECT_EQ(vtp_code(replace(kThreePoints, "NumberOfPoints=\"3\"", "NumberOfPoints=\"4\"")), ParseErrc::CountMismatch);
}

TEST(Vtp, ScalarLengthMismatch) {
    EXPECT_EQ(vtp_code(replace(kThreePoints, "100 99.5 98.25", "100 99.5")), ParseErrc::LengthMismatch);
}

TEST(Vtp, UnsupportedEncodings) {
    EXPECT_EQ(vtp_code(replace(kThreePoints, "format=\"ascii\">100", "format=\"binary\">100")),
              ParseErrc::UnsupportedEncoding);
    EXPECT_EQ(vtp_code(replace(kThreePoints, "byte_order=", "compressor=\"vtkZLibDataCompressor\" byte_order=")),
              ParseErrc::UnsupportedEncoding);
    EXPECT_EQ(vtp_code(replace(kThreePoints, "</PolyData>\n</VTKFile>",
                               "</PolyData>\n<AppendedData encoding=\"raw\">_</AppendedData>\n</VTKFile>")),
              ParseErrc::UnsupportedEncoding);
}

TEST(Vtp, MissingPoints) {
    std::string xml = kThreePoints;
    const auto a = xml.find("<Points>"), b = xml.find("</Points>") + std::strlen("</Points>");
    xml.erase(a, b - a);
    EXPECT_EQ(vtp_code(xml), ParseErrc::MissingElement);
}

TEST(Vtp, MalformedXmlAndNumbers) {
    EXPECT_EQ(vtp_code("<VTKFile type=\"PolyData\"><PolyData>"), ParseErrc::MalformedXml);
    EXPECT_EQ(vtp_code(replace(kThreePoints, "99.5", "abc")), ParseErrc::MalformedXml);
    EXPECT_EQ(vtp_code(replace(kThreePoints, "type=\"PolyData\" version", "type=\"UnstructuredGrid\" version")),
              ParseErrc::MissingElement);
}

TEST(Vtp, BadLineConnectivity) {
    EXPECT_EQ(vtp_code(replace(kThreePoints, "\">0 1 2<", "\">0 1 7<")), ParseErrc::LengthMismatch);
}

TEST(Vtp, RandomTruncationNeverCrashes) {
    const std::string xml = kThreePoints;
    for (std::size_t n = 0; n < xml.size(); n += 7) {
        try {
            const PolyData pd = parse_vtp_ascii(xml.substr(0, n));
            for (const auto& a : pd.point_scalars) EXPECT_EQ(a.values.size(), pd.points.size());
        } catch (const Error&) {
        }
    }
}

// ---------------------------------------------------------------- CORO-DS

namespace {

Dataset sample_dataset(std::size_t per_case, PatchShape shape = {2, 3, 4}) {
    Dataset ds;
    ds.manifest.patch_shape = shape;
    ds.manifest.label_mean = 97.25;
    ds.manifest.label_std = 0.3125;
    ds.manifest.notes = {"unit test"};
    std::mt19937_64 rng(9);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    std::uniform_real_distribution<double> pos(-60, 60);
    const char* ids[] = {"alpha", "beta", "gamma"};
    const Split splits[] = {Split::Train, Split::Val, Split::Test};
    for (int c = 0; c < 3; ++c) {
        ds.manifest.cases.push_back({ids[c], splits[c], per_case});
        for (std::size_t m = 0; m < per_case; ++m) {
            Sample s;
            s.case_id = ids[c];
            s.index = m;
            s.world = {pos(rng), pos(rng) / 3.0, pos(rng) * 1e-7, Frame::LPS};
            s.local = {pos(rng), 0.1, 1.0 / 3.0};
            s.label_mmhg = 100.0 - pos(rng) / 7.0;
            s.patch.resize(patch_size(shape));
            for (auto& v : s.patch) v = noise(rng);
            s.patch[0] = std::numeric_limits<float>::denorm_min();
            ds.samples.push_back(std::move(s));
        }
    }
    ds.manifest.count = ds.samples.size();
    return ds;
}

}  // namespace

TEST(Dataset, RoundTripIsBitExact) {
    fixture::TempDir dir;
    const Dataset ds = sample_dataset(5);
    write_dataset(ds.manifest, ds.samples, dir.path());
    const Dataset back = read_dataset(dir.path());
    EXPECT_EQ(back.manifest.cases, ds.manifest.cases);
    EXPECT_EQ(back.manifest.patch_shape, ds.manifest.patch_shape);
    EXPECT_EQ(back.manifest.label_mean, ds.manifest.label_mean);
    EXPECT_EQ(back.manifest.label_std, ds.manifest.label_std);
    EXPECT_EQ(back.manifest.notes, ds.manifest.notes);
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    for (std::size_t n = 0; n < ds.samples.size(); ++n) {
        const Sample &a = ds.samples[n], &b = back.samples[n];
        EXPECT_EQ(a.case_id, b.case_id);
        EXPECT_EQ(a.index, b.index);
        EXPECT_EQ(a.world, b.world);
        EXPECT_EQ(a.local, b.local);
        EXPECT_EQ(a.label_mmhg, b.label_mmhg);
        EXPECT_EQ(std::memcmp(a.patch.data(), b.patch.data(), a.patch.size() * sizeof(float)), 0);
    }
    // Rewriting what was read gives identical files.
    fixture::TempDir again;
    write_dataset(back.manifest, back.samples, again.path());
    for (const char* f : {"manifest.json", "patches.bin", "points.csv"})
        EXPECT_EQ(fixture::read_text(dir / f), fixture::read_text(again / f)) << f;
}

TEST(Dataset, PatchesAreLittleEndianFloat32KMajor) {
    fixture::TempDir dir;
    Dataset ds = sample_dataset(1, {2, 1, 2});
    for (std::size_t v = 0; v < 4; ++v) ds.samples[0].patch[v] = float(v + 1);
    write_dataset(ds.manifest, ds.samples, dir.path());
    const std::string bin = fixture::read_text(dir / "patches.bin");
    ASSERT_EQ(bin.size(), 3u * 4u * 4u);
    const unsigned char two_le[4] = {0x00, 0x00, 0x00, 0x40};  // 2.0f
    EXPECT_EQ(std::memcmp(bin.data() + 4, two_le, 4), 0);
    EXPECT_EQ(fixture::read_text(dir / "points.csv").substr(0, std::strlen(kPointsHeader)), kPointsHeader);
}

TEST(Dataset, EmptyDataset) {
    fixture::TempDir dir;
    DatasetManifest m;
    write_dataset(m, {}, dir.path());
    const Dataset back = read_dataset(dir.path());
    EXPECT_EQ(back.manifest.count, 0u);
    EXPECT_TRUE(back.samples.empty());
}

TEST(Dataset, TruncatedPatchesRejected) {
    fixture::TempDir dir;
    const Dataset ds = sample_dataset(3);
    write_dataset(ds.manifest, ds.samples, dir.path());
    const auto bin = dir / "patches.bin";
    std::filesystem::resize_file(bin, std::filesystem::file_size(bin) - patch_size(ds.manifest.patch_shape) * 4);
    try {
        read_dataset(dir.path());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code(), ParseErrc::LengthMismatch);
    }
}

TEST(Dataset, VersionAndCountMismatch) {
    fixture::TempDir dir;
    const Dataset ds = sample_dataset(2);
    write_dataset(ds.manifest, ds.samples, dir.path());
    const std::string manifest = fixture::read_text(dir / "manifest.json");

    fixture::write_text(dir / "manifest.json", replace(manifest, "\"version\": 1", "\"version\": 2"));
    try {
        read_dataset(dir.path());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code(), ParseErrc::VersionMismatch);
    }

    fixture::write_text(dir / "manifest.json", replace(manifest, "\"count\": 6", "\"count\": 5"));
    try {
        read_dataset(dir.path());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code(), ParseErrc::CountMismatch);
    }

    // points.csv missing a row while patches.bin and the manifest agree.
    fixture::write_text(dir / "manifest.json", manifest);
    std::string csv = fixture::read_text(dir / "points.csv");
    csv.erase(csv.rfind('\n', csv.size() - 2) + 1);
    fixture::write_text(dir / "points.csv", csv);
    try {
        read_dataset(dir.path());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code(), ParseErrc::CountMismatch);
    }
}

TEST(Dataset, WriteRejectsInconsistentInput) {
    fixture::TempDir dir;
    Dataset ds = sample_dataset(2);
    ds.samples[1].patch.pop_back();
    EXPECT_THROW(write_dataset(ds.manifest, ds.samples, dir.path()), ShapeError);
    ds = sample_dataset(2);
    ds.samples[0].case_id = "nobody";
    EXPECT_THROW(write_dataset(ds.manifest, ds.samples, dir.path()), DataError);
    ds = sample_dataset(2);
    ds.manifest.cases.push_back(ds.manifest.cases[0]);
    EXPECT_THROW(write_dataset(ds.manifest, ds.samples, dir.path()), DataError);
}

TEST(Dataset, SelectBySplit) {
    const Dataset ds = sample_dataset(4);
    EXPECT_EQ(ds.select(Split::Train).size(), 4u);
    for (const auto* s : ds.select(Split::Test)) EXPECT_EQ(s->case_id, "gamma");
}
