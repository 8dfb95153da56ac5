#pragma once

// Prediction CSV: case_id,index,world_x,world_y,world_z,y_true_mmhg,y_pred_mmhg

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "coroflow/icd/train.hpp"
#include "coroflow/ingest/dataset.hpp"

namespace coroflow::eval {

using icd::PredictionRecord;

inline constexpr const char* kPredictionsHeader = "case_id,index,world_x,world_y,world_z,y_true_mmhg,y_pred_mmhg";

inline std::string predictions_csv(const std::vector<PredictionRecord>& rows) {
    using ingest::detail::format_double;
    std::string out = std::string(kPredictionsHeader) + "\n";
    for (const auto& r : rows) {
        out += r.case_id + ',' + std::to_string(r.index) + ',' + format_double(r.world.x) + ',' +
               format_double(r.world.y) + ',' + format_double(r.world.z) + ',' + format_double(r.y_true) + ',' +
               format_double(r.y_pred) + '\n';
    }
    return out;
}

inline void write_predictions(const std::vector<PredictionRecord>& rows, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError(ParseErrc::Io, "cannot write " + path.string());
    f << predictions_csv(rows);
    if (!f) throw ParseError(ParseErrc::Io, "write failed for " + path.string());
}

inline std::vector<PredictionRecord> parse_predictions(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kPredictionsHeader)
        throw ParseError(ParseErrc::Malformed, "predictions CSV header must be '" + std::string(kPredictionsHeader) + "'");
    std::vector<PredictionRecord> rows;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = ingest::detail::split_csv_line(line);
        if (f.size() != 7)
            throw ParseError(ParseErrc::Malformed, "predictions row " + std::to_string(row) + " has " +
                                                       std::to_string(f.size()) + " fields");
        PredictionRecord r;
        r.case_id = f[0];
        try {
            std::size_t used = 0;
            r.index = std::stoul(f[1], &used);
            if (used != f[1].size()) throw std::invalid_argument("index");
        } catch (const std::exception&) {
            throw ParseError(ParseErrc::Malformed, "bad index on predictions row " + std::to_string(row));
        }
        r.world = {ingest::detail::parse_double_field(f[2], row), ingest::detail::parse_double_field(f[3], row),
                   ingest::detail::parse_double_field(f[4], row), Frame::LPS};
        r.y_true = ingest::detail::parse_double_field(f[5], row);
        r.y_pred = ingest::detail::parse_double_field(f[6], row);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(ParseErrc::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_predictions(ss.str());
}

}  // namespace coroflow::eval
