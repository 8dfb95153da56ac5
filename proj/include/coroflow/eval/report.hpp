#pragma once

// Case-wise metric table: one row per case plus the unweighted mean of each
// column over the cases where it is defined.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coroflow/eval/metrics.hpp"
#include "coroflow/icd/train.hpp"

namespace coroflow::eval {

struct CaseReport {
    std::string case_id;
    std::size_t m = 0;
    std::optional<double> r2_percent;
    std::optional<double> pearson_percent;
    std::optional<double> rmse;
    std::optional<double> nrmse;
    std::map<std::string, std::string> undefined;  ///< metric -> reason
};

struct ReportTable {
    std::vector<CaseReport> cases;
    CaseReport mean;  ///< case_id "Mean", m = total points
};

namespace detail {

template <class Fn>
std::optional<double> try_metric(CaseReport& row, const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const UndefinedMetric& e) {
        row.undefined[name] = e.what();
        return std::nullopt;
    }
}

inline std::optional<double> column_mean(const std::vector<CaseReport>& rows, std::optional<double> CaseReport::*col) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.*col) {
            s += *(r.*col);
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

}  // namespace detail

inline CaseReport case_metrics(const std::string& id, const std::vector<double>& y, const std::vector<double>& yhat) {
    CaseReport r;
    r.case_id = id;
    r.m = y.size();
    r.r2_percent = detail::try_metric(r, "r2", [&] { return 100.0 * r_squared(y, yhat); });
    r.pearson_percent = detail::try_metric(r, "pearson", [&] { return 100.0 * pearson(y, yhat); });
    r.rmse = detail::try_metric(r, "rmse", [&] { return rmse(y, yhat); });
    r.nrmse = detail::try_metric(r, "nrmse", [&] { return nrmse(y, yhat); });
    return r;
}

/// Group by case in order of first appearance.
inline ReportTable case_report(const std::vector<icd::PredictionRecord>& preds) {
    std::vector<std::string> order;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& p : preds) {
        auto [it, fresh] = groups.try_emplace(p.case_id);
        if (fresh) order.push_back(p.case_id);
        it->second.first.push_back(p.y_true);
        it->second.second.push_back(p.y_pred);
    }
    ReportTable t;
    for (const auto& id : order) t.cases.push_back(case_metrics(id, groups[id].first, groups[id].second));
    t.mean.case_id = "Mean";
    t.mean.m = preds.size();
    t.mean.r2_percent = detail::column_mean(t.cases, &CaseReport::r2_percent);
    t.mean.pearson_percent = detail::column_mean(t.cases, &CaseReport::pearson_percent);
    t.mean.rmse = detail::column_mean(t.cases, &CaseReport::rmse);
    t.mean.nrmse = detail::column_mean(t.cases, &CaseReport::nrmse);
    return t;
}

inline nlohmann::json to_json(const CaseReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j{{"case_id", r.case_id},         {"m", r.m},
                     {"r2_percent", opt(r.r2_percent)}, {"pearson_percent", opt(r.pearson_percent)},
                     {"rmse", opt(r.rmse)},          {"nrmse", opt(r.nrmse)}};
    if (!r.undefined.empty()) j["undefined"] = r.undefined;
    return j;
}

inline nlohmann::json to_json(const ReportTable& t) {
    nlohmann::json j;
    j["cases"] = nlohmann::json::array();
    for (const auto& r : t.cases) j["cases"].push_back(to_json(r));
    j["mean"] = to_json(t.mean);
    return j;
}

inline std::string format_table(const ReportTable& t) {
    auto cell = [](const std::optional<double>& v, const char* fmt) {
        if (!v) return std::string("n/a");
        char buf[48];
        std::snprintf(buf, sizeof buf, fmt, *v);
        return std::string(buf);
    };
    std::size_t w = 4;
    for (const auto& r : t.cases) w = std::max(w, r.case_id.size());
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s %6s %9s %11s %10s %10s\n", int(w), "Case", "m", "R2(%)", "Pearson(%)", "RMSE",
                  "NRMSE");
    out += line;
    auto emit = [&](const CaseReport& r) {
        std::snprintf(line, sizeof line, "%-*s %6zu %9s %11s %10s %10s\n", int(w), r.case_id.c_str(), r.m,
                      cell(r.r2_percent, "%.2f").c_str(), cell(r.pearson_percent, "%.2f").c_str(),
                      cell(r.rmse, "%.4f").c_str(), cell(r.nrmse, "%.5f").c_str());
        out += line;
    };
    for (const auto& r : t.cases) emit(r);
    out += std::string(w + 52, '-') + "\n";
    emit(t.mean);
    return out;
}

}  // namespace coroflow::eval
