#pragma once

// Brute-force metric evaluator, written straight from the textbook formulas
// with long double accumulation and no shared helpers.

#include <cmath>
#include <vector>

namespace oracle {

inline long double mean(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += x;
    return s / v.size();
}

inline double r2(const std::vector<double>& y, const std::vector<double>& p) {
    const long double yb = mean(y);
    long double num = 0, den = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        num += (long double)(p[i] - y[i]) * (p[i] - y[i]);
        den += (yb - y[i]) * (yb - y[i]);
    }
    return double(1 - num / den);
}

inline double pearson(const std::vector<double>& y, const std::vector<double>& p) {
    const long double yb = mean(y), pb = mean(p);
    long double num = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        num += (y[i] - yb) * (p[i] - pb);
        a += (y[i] - yb) * (y[i] - yb);
        b += (p[i] - pb) * (p[i] - pb);
    }
    return double(num / std::sqrt(a * b));
}

inline double rmse(const std::vector<double>& y, const std::vector<double>& p) {
    long double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (long double)(p[i] - y[i]) * (p[i] - y[i]);
    return double(std::sqrt(s / y.size()));
}

inline double nrmse(const std::vector<double>& y, const std::vector<double>& p) { return double(rmse(y, p) / mean(y)); }

}  // namespace oracle
