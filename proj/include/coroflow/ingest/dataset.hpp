#pragma once

// CORO-DS dataset directory:
//   manifest.json  version, patch_shape, count, cases, label statistics
//   patches.bin    count records of d*h*w little-endian float32, k-major
//   points.csv     one row per record, same order as patches.bin

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coroflow/error.hpp"
#include "coroflow/sample.hpp"

namespace coroflow::ingest {

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kPointsHeader =
    "case_id,index,world_x,world_y,world_z,local_i,local_j,local_k,pressure_mmhg";

struct CaseEntry {
    std::string id;
    Split split = Split::Train;
    std::size_t n_points = 0;
    friend bool operator==(const CaseEntry&, const CaseEntry&) = default;
};

struct DatasetManifest {
    int version = kDatasetVersion;
    PatchShape patch_shape = kDefaultPatchShape;
    std::size_t count = 0;
    std::vector<CaseEntry> cases;
    double label_mean = 0.0;
    double label_std = 1.0;
    std::vector<std::string> notes;

    const CaseEntry* find_case(const std::string& id) const {
        for (const auto& c : cases)
            if (c.id == id) return &c;
        return nullptr;
    }

    void validate() const {
        for (std::size_t d : patch_shape)
            if (d == 0) throw DataError("patch_shape entries must be positive");
        std::set<std::string> ids;
        std::size_t total = 0;
        for (const auto& c : cases) {
            if (c.id.empty()) throw DataError("empty case id");
            if (c.id.find_first_of(",\n\r\"") != std::string::npos)
                throw DataError("case id '" + c.id + "' contains a reserved character");
            if (!ids.insert(c.id).second) throw DataError("duplicate case id '" + c.id + "'");
            total += c.n_points;
        }
        if (total != count)
            throw ParseError(ParseErrc::CountMismatch, "cases list " + std::to_string(total) +
                                                           " points but count is " + std::to_string(count));
        if (count > 1 && !(label_std > 0.0)) throw DataError("label_std must be positive");
    }
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> samples;

    std::vector<const Sample*> select(Split split) const {
        std::vector<const Sample*> out;
        for (const auto& s : samples) {
            const auto* c = manifest.find_case(s.case_id);
            if (c && c->split == split) out.push_back(&s);
        }
        return out;
    }
};

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["patch_shape"] = {m.patch_shape[0], m.patch_shape[1], m.patch_shape[2]};
    j["count"] = m.count;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : m.cases) j["cases"].push_back({{"id", c.id}, {"split", to_string(c.split)}, {"n_points", c.n_points}});
    j["label_mean"] = m.label_mean;
    j["label_std"] = m.label_std;
    if (!m.notes.empty()) j["notes"] = m.notes;
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        m.version = j.at("version").get<int>();
        if (m.version != kDatasetVersion)
            throw ParseError(ParseErrc::VersionMismatch, "dataset version " + std::to_string(m.version) +
                                                             ", expected " + std::to_string(kDatasetVersion));
        const auto& shape = j.at("patch_shape");
        if (!shape.is_array() || shape.size() != 3) throw DataError("patch_shape must have three entries");
        for (std::size_t a = 0; a < 3; ++a) m.patch_shape[a] = shape[a].get<std::size_t>();
        m.count = j.at("count").get<std::size_t>();
        for (const auto& c : j.at("cases"))
            m.cases.push_back({c.at("id").get<std::string>(), parse_split(c.at("split").get<std::string>()),
                               c.at("n_points").get<std::size_t>()});
        m.label_mean = j.at("label_mean").get<double>();
        m.label_std = j.at("label_std").get<double>();
        if (j.contains("notes")) m.notes = j.at("notes").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseErrc::MissingElement, std::string("manifest.json: ") + e.what());
    }
    m.validate();
    return m;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double_field(const std::string& s, std::size_t row) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(ParseErrc::Malformed, "CSV row " + std::to_string(row) + ": bad number '" + s + "'");
    }
}

}  // namespace detail

inline void write_dataset(const DatasetManifest& manifest_in, const std::vector<Sample>& samples,
                          const std::filesystem::path& dir) {
    static_assert(std::endian::native == std::endian::little, "patches.bin is written in host order");
    DatasetManifest manifest = manifest_in;
    manifest.count = samples.size();
    manifest.validate();

    const std::size_t record = patch_size(manifest.patch_shape);
    for (const auto& s : samples) {
        if (s.patch.size() != record)
            throw ShapeError(-1, "sample patch has " + std::to_string(s.patch.size()) + " values, manifest expects " +
                                     std::to_string(record));
        if (!manifest.find_case(s.case_id)) throw DataError("sample references unknown case '" + s.case_id + "'");
    }

    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << manifest_to_json(manifest).dump(2) << '\n';
        if (!out) throw ParseError(ParseErrc::Io, "failed writing manifest.json");
    }
    {
        std::ofstream out(dir / "patches.bin", std::ios::binary);
        for (const auto& s : samples)
            out.write(reinterpret_cast<const char*>(s.patch.data()),
                      static_cast<std::streamsize>(s.patch.size() * sizeof(float)));
        if (!out) throw ParseError(ParseErrc::Io, "failed writing patches.bin");
    }
    {
        std::ofstream out(dir / "points.csv", std::ios::binary);
        out << kPointsHeader << '\n';
        using detail::format_double;
        for (const auto& s : samples) {
            out << s.case_id << ',' << s.index << ',' << format_double(s.world.x) << ',' << format_double(s.world.y)
                << ',' << format_double(s.world.z) << ',' << format_double(s.local.i) << ','
                << format_double(s.local.j) << ',' << format_double(s.local.k) << ',' << format_double(s.label_mmhg)
                << '\n';
        }
        if (!out) throw ParseError(ParseErrc::Io, "failed writing points.csv");
    }
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw ParseError(ParseErrc::Io, "cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseErrc::Malformed, std::string("manifest.json: ") + e.what());
    }
    return manifest_from_json(j);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.manifest = read_manifest(dir);
    const auto& m = ds.manifest;
    const std::size_t record = patch_size(m.patch_shape);

    const auto bin_path = dir / "patches.bin";
    std::error_code ec;
    const auto bin_size = std::filesystem::file_size(bin_path, ec);
    if (ec) throw ParseError(ParseErrc::Io, "cannot stat " + bin_path.string());
    const std::uintmax_t expected = static_cast<std::uintmax_t>(m.count) * record * sizeof(float);
    if (bin_size != expected)
        throw ParseError(ParseErrc::LengthMismatch, "patches.bin holds " + std::to_string(bin_size) +
                                                        " bytes, manifest implies " + std::to_string(expected));

    std::ifstream csv(dir / "points.csv", std::ios::binary);
    if (!csv) throw ParseError(ParseErrc::Io, "cannot open points.csv");
    std::string line;
    if (!std::getline(csv, line) || line != kPointsHeader)
        throw ParseError(ParseErrc::MissingElement, "points.csv header mismatch");

    std::ifstream bin(bin_path, std::ios::binary);
    std::map<std::string, std::size_t> per_case;
    ds.samples.reserve(m.count);
    std::size_t row = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++row;
        if (row > m.count)
            throw ParseError(ParseErrc::CountMismatch, "points.csv has more rows than count=" + std::to_string(m.count));
        const auto f = detail::split_csv_line(line);
        if (f.size() != 9) throw ParseError(ParseErrc::LengthMismatch, "points.csv row " + std::to_string(row) + " has " +
                                                                           std::to_string(f.size()) + " fields");
        Sample s;
        s.case_id = f[0];
        s.index = static_cast<std::size_t>(detail::parse_double_field(f[1], row));
        s.world = {detail::parse_double_field(f[2], row), detail::parse_double_field(f[3], row),
                   detail::parse_double_field(f[4], row), Frame::LPS};
        s.local = {detail::parse_double_field(f[5], row), detail::parse_double_field(f[6], row),
                   detail::parse_double_field(f[7], row)};
        s.label_mmhg = detail::parse_double_field(f[8], row);
        if (!m.find_case(s.case_id)) throw DataError("points.csv references unknown case '" + s.case_id + "'");
        ++per_case[s.case_id];
        s.patch.resize(record);
        bin.read(reinterpret_cast<char*>(s.patch.data()), static_cast<std::streamsize>(record * sizeof(float)));
        if (!bin) throw ParseError(ParseErrc::LengthMismatch, "patches.bin ended early");
        ds.samples.push_back(std::move(s));
    }
    if (row != m.count)
        throw ParseError(ParseErrc::CountMismatch,
                         "points.csv has " + std::to_string(row) + " rows, manifest count is " + std::to_string(m.count));
    for (const auto& c : m.cases) {
        const auto it = per_case.find(c.id);
        const std::size_t n = it == per_case.end() ? 0 : it->second;
        if (n != c.n_points)
            throw ParseError(ParseErrc::CountMismatch, "case '" + c.id + "' has " + std::to_string(n) +
                                                           " rows, manifest says " + std::to_string(c.n_points));
    }
    return ds;
}

}  // namespace coroflow::ingest
