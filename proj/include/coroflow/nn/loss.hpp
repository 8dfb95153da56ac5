#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "coroflow/error.hpp"

namespace coroflow::nn {

template <class T>
struct LossResult {
    double value = 0.0;
    std::vector<T> grad;  ///< d(value)/d(pred)
};

/// Mean Huber loss over elements. Quadratic for |residual| <= delta, linear beyond,
/// so the per-element gradient is the residual clipped to [-delta, delta].
template <class T>
LossResult<T> huber_loss(std::span<const T> pred, std::span<const T> target, double delta) {
    if (!(delta > 0.0)) throw UsageError("Huber delta must be positive");
    if (pred.size() != target.size()) throw ShapeError(-1, "Huber loss: prediction and target lengths differ");
    LossResult<T> out;
    out.grad.resize(pred.size());
    if (pred.empty()) return out;
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        const double a = std::abs(r);
        if (a <= delta) {
            sum += 0.5 * r * r;
            out.grad[i] = static_cast<T>(r * inv_n);
        } else {
            sum += delta * a - 0.5 * delta * delta;
            out.grad[i] = static_cast<T>((r > 0 ? delta : -delta) * inv_n);
        }
    }
    out.value = sum * inv_n;
    return out;
}

}  // namespace coroflow::nn
