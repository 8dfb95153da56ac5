#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coroflow/error.hpp"
#include "coroflow/nn/tensor.hpp"

namespace coroflow::nn {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay: parameters shrink by lr * weight_decay
/// directly, and the decay never enters the moment estimates.
template <class T>
class AdamW {
public:
    AdamWConfig config;

    AdamW() = default;
    explicit AdamW(AdamWConfig c) : config(c) {}

    std::uint64_t step_count() const { return step_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }

    /// One update. Rejects the whole step, leaving parameters and state
    /// untouched, if any gradient is non-finite.
    void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads) {
        if (params.size() != grads.size()) throw ShapeError(-1, "AdamW: parameter/gradient count mismatch");
        for (std::size_t p = 0; p < params.size(); ++p) {
            if (params[p]->shape != grads[p].shape)
                throw ShapeError(-1, "AdamW: gradient " + std::to_string(p) + " has shape " +
                                         shape_string(grads[p].shape) + ", parameter " + shape_string(params[p]->shape));
            for (T g : grads[p].data)
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericError("AdamW: non-finite gradient in parameter " + std::to_string(p));
        }
        if (m_.empty()) {
            for (const auto* p : params) {
                m_.emplace_back(p->shape);
                v_.emplace_back(p->shape);
            }
        } else if (m_.size() != params.size()) {
            throw ShapeError(-1, "AdamW: parameter list changed between steps");
        }

        ++step_;
        const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_));
        const T decay = static_cast<T>(1.0 - config.lr * config.weight_decay);
        const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
        const T one_b1 = static_cast<T>(1.0 - config.beta1), one_b2 = static_cast<T>(1.0 - config.beta2);
        const T step_size = static_cast<T>(config.lr / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const T eps = static_cast<T>(config.eps);
        for (std::size_t p = 0; p < params.size(); ++p) {
            T* w = params[p]->data.data();
            const T* g = grads[p].data.data();
            T* m = m_[p].data.data();
            T* v = v_[p].data.data();
            const std::size_t n = params[p]->size();
            for (std::size_t i = 0; i < n; ++i) {
                w[i] *= decay;
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
            }
        }
    }

private:
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    std::uint64_t step_ = 0;
};

}  // namespace coroflow::nn
