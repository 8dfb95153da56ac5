#pragma once

#include <cmath>
#include <span>
#include <string>

#include "coroflow/error.hpp"

namespace coroflow::eval {

/// A metric whose definition breaks down on the given data (constant
/// vector, zero mean, too few points).
class UndefinedMetric : public DataError {
public:
    explicit UndefinedMetric(const std::string& what) : DataError("undefined metric: " + what) {}
};

namespace detail {

inline void check_pair(std::span<const double> y, std::span<const double> yhat, std::size_t min_len, const char* name) {
    if (y.size() != yhat.size()) throw ShapeError(-1, std::string(name) + ": observation and prediction lengths differ");
    if (y.size() < min_len)
        throw UndefinedMetric(std::string(name) + " needs at least " + std::to_string(min_len) + " points");
}

inline bool constant(std::span<const double> v) {
    for (double x : v)
        if (x != v[0]) return false;
    return true;
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

/// 1 - SS_res / SS_tot. Negative when worse than predicting the mean of y.
inline double r_squared(std::span<const double> y, std::span<const double> yhat) {
    detail::check_pair(y, yhat, 2, "R2");
    if (detail::constant(y)) throw UndefinedMetric("R2 of a constant observation vector");
    const double ybar = detail::mean(y);
    double res = 0.0, tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        res += (yhat[i] - y[i]) * (yhat[i] - y[i]);
        tot += (ybar - y[i]) * (ybar - y[i]);
    }
    if (!(tot > 0.0)) throw UndefinedMetric("R2 of a constant observation vector");
    return 1.0 - res / tot;
}

inline double pearson(std::span<const double> y, std::span<const double> yhat) {
    detail::check_pair(y, yhat, 2, "Pearson");
    if (detail::constant(y) || detail::constant(yhat)) throw UndefinedMetric("Pearson correlation with a constant vector");
    const double ybar = detail::mean(y), pbar = detail::mean(yhat);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double a = y[i] - ybar, b = yhat[i] - pbar;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedMetric("Pearson correlation with a constant vector");
    return sxy / std::sqrt(sxx * syy);
}

inline double rmse(std::span<const double> y, std::span<const double> yhat) {
    detail::check_pair(y, yhat, 1, "RMSE");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (yhat[i] - y[i]) * (yhat[i] - y[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

/// RMSE divided by the mean observation.
inline double nrmse(std::span<const double> y, std::span<const double> yhat) {
    detail::check_pair(y, yhat, 1, "NRMSE");
    const double obar = detail::mean(y);
    if (obar == 0.0) throw UndefinedMetric("NRMSE with zero mean observation");
    return rmse(y, yhat) / obar;
}

}  // namespace coroflow::eval
