#pragma once

// Minimal NIfTI-1 single-file (.nii) reader.
//
// Supported: uncompressed files, either byte order, datatypes uint8 / int16 /
// int32 / float32 / float64, orientation from an axis-aligned sform or, when no
// sform or qform is set, from pixdim with RAS assumed. The returned volume is
// already aligned to LPS.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "coroflow/error.hpp"
#include "coroflow/geomcore.hpp"

namespace coroflow::ingest {

namespace nifti {

inline constexpr std::int32_t kHeaderSize = 348;

enum Datatype : std::int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
};

inline std::size_t datatype_bytes(std::int16_t code) {
    switch (code) {
        case kUint8: return 1;
        case kInt16: return 2;
        case kInt32: return 4;
        case kFloat32: return 4;
        case kFloat64: return 8;
        default: return 0;
    }
}

}  // namespace nifti

struct NiftiHeader {
    std::array<std::int16_t, 8> dim{};
    std::array<float, 8> pixdim{};
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    float vox_offset = 352.0f;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    std::array<float, 4> srow_x{};
    std::array<float, 4> srow_y{};
    std::array<float, 4> srow_z{};
    bool byte_swapped = false;

    std::array<std::size_t, 3> spatial_dims() const {
        std::array<std::size_t, 3> d{1, 1, 1};
        for (int a = 0; a < 3; ++a)
            if (a < dim[0]) d[a] = static_cast<std::size_t>(dim[a + 1]);
        return d;
    }
};

struct NiftiVolume {
    NiftiHeader header;
    Volume volume;  ///< LPS-aligned grid plus scaled intensities
};

namespace detail {

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <class T>
    T read(std::size_t offset) const {
        static_assert(std::is_trivially_copyable_v<T>);
        std::array<unsigned char, sizeof(T)> raw{};
        std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
        if (swap_) std::reverse(raw.begin(), raw.end());
        T value;
        std::memcpy(&value, raw.data(), sizeof(T));
        return value;
    }

private:
    const std::vector<unsigned char>& bytes_;
    bool swap_;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseErrc::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Parse a NIfTI-1 header. Byte order is detected from sizeof_hdr.
inline NiftiHeader parse_nifti_header(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < static_cast<std::size_t>(nifti::kHeaderSize))
        throw ParseError(ParseErrc::Truncated, "file shorter than the 348-byte NIfTI-1 header");

    bool swap = false;
    {
        const detail::ByteReader native(bytes, false);
        const detail::ByteReader swapped(bytes, true);
        if (native.read<std::int32_t>(0) == nifti::kHeaderSize)
            swap = false;
        else if (swapped.read<std::int32_t>(0) == nifti::kHeaderSize)
            swap = true;
        else
            throw ParseError(ParseErrc::BadHeaderSize,
                             "sizeof_hdr is " + std::to_string(native.read<std::int32_t>(0)) +
                                 ", expected 348 in either byte order");
    }
    // The reader above assumes a little-endian host when deciding "native".
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

    if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
        if (std::memcmp(bytes.data() + 344, "ni1\0", 4) == 0)
            throw ParseError(ParseErrc::BadMagic, "header/image pair (ni1) files are not supported; expected n+1");
        throw ParseError(ParseErrc::BadMagic, "magic is not \"n+1\"");
    }

    const detail::ByteReader r(bytes, swap);
    NiftiHeader h;
    h.byte_swapped = swap;
    for (int a = 0; a < 8; ++a) {
        h.dim[a] = r.read<std::int16_t>(40 + 2 * a);
        h.pixdim[a] = r.read<float>(76 + 4 * a);
    }
    h.datatype = r.read<std::int16_t>(70);
    h.bitpix = r.read<std::int16_t>(72);
    h.vox_offset = r.read<float>(108);
    h.scl_slope = r.read<float>(112);
    h.scl_inter = r.read<float>(116);
    h.qform_code = r.read<std::int16_t>(252);
    h.sform_code = r.read<std::int16_t>(254);
    for (int a = 0; a < 4; ++a) {
        h.srow_x[a] = r.read<float>(280 + 4 * a);
        h.srow_y[a] = r.read<float>(296 + 4 * a);
        h.srow_z[a] = r.read<float>(312 + 4 * a);
    }

    if (h.dim[0] < 1 || h.dim[0] > 7) throw ParseError(ParseErrc::LengthMismatch, "dim[0] out of range 1..7");
    for (int a = 1; a <= h.dim[0]; ++a)
        if (h.dim[a] < 1) throw ParseError(ParseErrc::LengthMismatch, "dim[" + std::to_string(a) + "] < 1");
    for (int a = 4; a <= h.dim[0]; ++a)
        if (h.dim[a] != 1)
            throw ParseError(ParseErrc::LengthMismatch, "only single-frame 3D volumes are supported");
    if (nifti::datatype_bytes(h.datatype) == 0)
        throw ParseError(ParseErrc::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
    if (!(h.vox_offset >= static_cast<float>(nifti::kHeaderSize)))
        throw ParseError(ParseErrc::Truncated, "vox_offset points inside the header");
    return h;
}

namespace detail {

inline VolumeGrid grid_from_header(const NiftiHeader& h) {
    VolumeGrid g;
    g.dims = h.spatial_dims();
    g.origin.frame = Frame::RAS;
    if (h.sform_code > 0) {
        const std::array<const std::array<float, 4>*, 3> rows{&h.srow_x, &h.srow_y, &h.srow_z};
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                if (a != b && (*rows[a])[b] != 0.0f)
                    throw ParseError(ParseErrc::UnsupportedOrientation, "sform is not axis-aligned");
            }
            const double diag = (*rows[a])[a];
            if (diag == 0.0 || !std::isfinite(diag))
                throw ParseError(ParseErrc::UnsupportedOrientation, "sform has a zero scale on an axis");
            g.spacing[a] = std::abs(diag);
            g.axis_sign[a] = diag < 0.0 ? -1 : 1;
        }
        g.origin.x = h.srow_x[3];
        g.origin.y = h.srow_y[3];
        g.origin.z = h.srow_z[3];
    } else if (h.qform_code > 0) {
        throw ParseError(ParseErrc::UnsupportedOrientation, "qform quaternion orientation is not supported; use sform");
    } else {
        for (int a = 0; a < 3; ++a) {
            const double s = h.pixdim[a + 1];
            if (!(s > 0.0)) throw ParseError(ParseErrc::LengthMismatch, "pixdim must be positive on spatial axes");
            g.spacing[a] = s;
        }
    }
    return g;
}

template <class T>
void decode_samples(const detail::ByteReader& r, std::size_t offset, std::size_t count, std::vector<double>& out) {
    out.resize(count);
    for (std::size_t n = 0; n < count; ++n) out[n] = static_cast<double>(r.read<T>(offset + n * sizeof(T)));
}

}  // namespace detail

inline NiftiVolume parse_nifti(const std::vector<unsigned char>& bytes) {
    NiftiVolume out;
    out.header = parse_nifti_header(bytes);
    const NiftiHeader& h = out.header;

    VolumeGrid grid = detail::grid_from_header(h);
    const std::size_t count = grid.voxel_count();
    if (!(static_cast<double>(h.vox_offset) <= static_cast<double>(bytes.size())))
        throw ParseError(ParseErrc::Truncated, "vox_offset lies beyond the end of the file");
    const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    const std::size_t need = count * nifti::datatype_bytes(h.datatype);
    if (bytes.size() < offset || bytes.size() - offset < need)
        throw ParseError(ParseErrc::Truncated, "data section holds " +
                                                   std::to_string(bytes.size() > offset ? bytes.size() - offset : 0) +
                                                   " bytes, expected " + std::to_string(need));

    const detail::ByteReader r(bytes, h.byte_swapped);
    std::vector<double> values;
    switch (h.datatype) {
        case nifti::kUint8: detail::decode_samples<std::uint8_t>(r, offset, count, values); break;
        case nifti::kInt16: detail::decode_samples<std::int16_t>(r, offset, count, values); break;
        case nifti::kInt32: detail::decode_samples<std::int32_t>(r, offset, count, values); break;
        case nifti::kFloat32: detail::decode_samples<float>(r, offset, count, values); break;
        case nifti::kFloat64: detail::decode_samples<double>(r, offset, count, values); break;
        default: throw ParseError(ParseErrc::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
    }

    // A zero slope means "no scaling" in NIfTI-1.
    if (h.scl_slope != 0.0f && std::isfinite(h.scl_slope)) {
        const double slope = h.scl_slope;
        const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
        for (double& v : values) v = slope * v + inter;
    }

    out.volume = align_volume_lps(Volume{grid, std::move(values)});
    return out;
}

inline NiftiVolume read_nifti(const std::filesystem::path& path) {
    return parse_nifti(detail::read_file_bytes(path));
}

}  // namespace coroflow::ingest
