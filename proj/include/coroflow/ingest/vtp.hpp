#pragma once

// ASCII VTK XML PolyData (.vtp) reader. Only inline ascii DataArrays are
// accepted; binary, appended, and compressed payloads are rejected.

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "coroflow/error.hpp"
#include "coroflow/geomcore.hpp"

namespace coroflow::ingest {

struct ScalarArray {
    std::string name;
    std::vector<double> values;
};

struct PolyData {
    std::vector<WorldPoint> points;
    std::vector<ScalarArray> point_scalars;
    std::vector<std::vector<std::size_t>> lines;

    const ScalarArray* find_scalar(std::string_view name) const {
        for (const auto& a : point_scalars)
            if (a.name == name) return &a;
        return nullptr;
    }

    /// The averaged pressure field. Both the documented name and the
    /// triple-m spelling produced by some exports are accepted.
    const ScalarArray& pressure() const {
        for (const char* name : {"pressure_ave_mmhg", "pressure_ave_mmmhg"})
            if (const auto* a = find_scalar(name)) return *a;
        throw ParseError(ParseErrc::MissingElement, "no pressure_ave_mmhg scalar array");
    }

    void validate() const {
        for (const auto& a : point_scalars) {
            if (a.name.empty()) throw ParseError(ParseErrc::MissingElement, "point scalar array without a name");
            if (a.values.size() != points.size())
                throw ParseError(ParseErrc::LengthMismatch, "array '" + a.name + "' has " +
                                                                std::to_string(a.values.size()) + " values for " +
                                                                std::to_string(points.size()) + " points");
        }
        for (const auto& line : lines)
            for (std::size_t idx : line)
                if (idx >= points.size()) throw ParseError(ParseErrc::LengthMismatch, "line references missing point");
    }
};

namespace detail {

using boost::property_tree::ptree;

inline std::vector<double> parse_ascii_numbers(const std::string& text, const std::string& what) {
    std::vector<double> out;
    const char* p = text.data();
    const char* end = p + text.size();
    while (p < end) {
        while (p < end && (*p == ' ' || *p == '\n' || *p == '\r' || *p == '\t')) ++p;
        if (p >= end) break;
        double v = 0.0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc{}) throw ParseError(ParseErrc::MalformedXml, "non-numeric token in " + what);
        out.push_back(v);
        p = next;
    }
    return out;
}

inline std::string attr(const ptree& node, const char* name, const std::string& fallback = {}) {
    return node.get<std::string>(std::string("<xmlattr>.") + name, fallback);
}

inline std::vector<double> read_data_array(const ptree& array, const std::string& what) {
    const std::string format = attr(array, "format", "ascii");
    if (format != "ascii")
        throw ParseError(ParseErrc::UnsupportedEncoding, what + " uses format=\"" + format + "\"; only ascii is supported");
    return parse_ascii_numbers(array.get_value<std::string>(), what);
}

}  // namespace detail

/// Parse VTP text. Point coordinates are read in `file_frame` and returned in LPS.
inline PolyData parse_vtp_ascii(const std::string& xml, Frame file_frame = Frame::LPS) {
    using detail::ptree;
    ptree doc;
    try {
        std::istringstream in(xml);
        boost::property_tree::read_xml(in, doc);
    } catch (const boost::property_tree::xml_parser_error& e) {
        throw ParseError(ParseErrc::MalformedXml, e.what());
    }

    const auto vtk = doc.get_child_optional("VTKFile");
    if (!vtk) throw ParseError(ParseErrc::MissingElement, "no VTKFile root element");
    if (detail::attr(*vtk, "type") != "PolyData")
        throw ParseError(ParseErrc::MissingElement, "VTKFile type is not PolyData");
    if (!detail::attr(*vtk, "compressor").empty())
        throw ParseError(ParseErrc::UnsupportedEncoding, "compressed VTP files are not supported");
    if (vtk->get_child_optional("AppendedData"))
        throw ParseError(ParseErrc::UnsupportedEncoding, "appended data sections are not supported");

    const auto piece = vtk->get_child_optional("PolyData.Piece");
    if (!piece) throw ParseError(ParseErrc::MissingElement, "no PolyData/Piece element");

    const auto points_node = piece->get_child_optional("Points.DataArray");
    if (!points_node) throw ParseError(ParseErrc::MissingElement, "no Points/DataArray element");
    if (detail::attr(*points_node, "NumberOfComponents", "3") != "3")
        throw ParseError(ParseErrc::LengthMismatch, "Points must have 3 components");
    const std::vector<double> coords = detail::read_data_array(*points_node, "Points");
    if (coords.size() % 3 != 0)
        throw ParseError(ParseErrc::LengthMismatch, "Points value count is not a multiple of 3");

    PolyData out;
    out.points.reserve(coords.size() / 3);
    for (std::size_t n = 0; n + 2 < coords.size(); n += 3) {
        WorldPoint p{coords[n], coords[n + 1], coords[n + 2], file_frame};
        out.points.push_back(file_frame == Frame::RAS ? ras_to_lps(p) : p);
    }

    const std::string declared = detail::attr(*piece, "NumberOfPoints");
    if (declared.empty()) throw ParseError(ParseErrc::MissingElement, "Piece lacks NumberOfPoints");
    std::size_t declared_n = 0;
    {
        auto [ptr, ec] = std::from_chars(declared.data(), declared.data() + declared.size(), declared_n);
        if (ec != std::errc{} || ptr != declared.data() + declared.size())
            throw ParseError(ParseErrc::MalformedXml, "NumberOfPoints is not an integer");
    }
    if (declared_n != out.points.size())
        throw ParseError(ParseErrc::CountMismatch, "NumberOfPoints=" + declared + " but " +
                                                       std::to_string(out.points.size()) + " points were parsed");

    if (const auto point_data = piece->get_child_optional("PointData")) {
        for (const auto& [tag, node] : *point_data) {
            if (tag != "DataArray") continue;
            const std::string name = detail::attr(node, "Name");
            if (name.empty()) throw ParseError(ParseErrc::MissingElement, "PointData array without a Name");
            std::vector<double> values = detail::read_data_array(node, "PointData/" + name);
            if (detail::attr(node, "NumberOfComponents", "1") != "1") continue;
            out.point_scalars.push_back({name, std::move(values)});
        }
    }

    if (const auto lines = piece->get_child_optional("Lines")) {
        std::vector<double> connectivity, offsets;
        for (const auto& [tag, node] : *lines) {
            if (tag != "DataArray") continue;
            const std::string name = detail::attr(node, "Name");
            if (name == "connectivity") connectivity = detail::read_data_array(node, "Lines/connectivity");
            if (name == "offsets") offsets = detail::read_data_array(node, "Lines/offsets");
        }
        std::size_t begin = 0;
        for (double off : offsets) {
            const auto end = static_cast<std::size_t>(off);
            if (end < begin || end > connectivity.size())
                throw ParseError(ParseErrc::LengthMismatch, "line offsets exceed connectivity");
            std::vector<std::size_t> line;
            for (std::size_t n = begin; n < end; ++n) line.push_back(static_cast<std::size_t>(connectivity[n]));
            out.lines.push_back(std::move(line));
            begin = end;
        }
    }

    out.validate();
    return out;
}

inline PolyData read_vtp_ascii(const std::filesystem::path& path, Frame file_frame = Frame::LPS) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseErrc::Io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_vtp_ascii(buf.str(), file_frame);
}

}  // namespace coroflow::ingest
