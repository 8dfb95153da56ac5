#pragma once

// Layer set for the patch encoder and the dense heads, each with an explicit
// forward cache and an exact reverse-mode backward pass.
//
// Tensors are batch-first: volumes are [N, C, D, H, W], vectors are [N, F].
// All batch loops are split so that every output slot is written by exactly
// one task, which keeps results bitwise independent of the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "coroflow/error.hpp"
#include "coroflow/nn/tensor.hpp"
#include "coroflow/parallel.hpp"

namespace coroflow::nn {

enum class Mode { Train, Eval };

struct DenseSpec {
    std::size_t in = 1;
    std::size_t out = 1;
    friend bool operator==(const DenseSpec&, const DenseSpec&) = default;
};
/// 3x3x3 kernel, stride 1, zero padding 1.
struct Conv3DSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    friend bool operator==(const Conv3DSpec&, const Conv3DSpec&) = default;
};
struct BatchNormSpec {
    std::size_t channels = 1;
    double momentum = 0.1;
    double eps = 1e-5;
    friend bool operator==(const BatchNormSpec&, const BatchNormSpec&) = default;
};
struct ReLUSpec {
    friend bool operator==(const ReLUSpec&, const ReLUSpec&) = default;
};
/// 2x2x2 window, stride 2, floor on odd sizes.
struct MaxPool3DSpec {
    friend bool operator==(const MaxPool3DSpec&, const MaxPool3DSpec&) = default;
};
struct FlattenSpec {
    friend bool operator==(const FlattenSpec&, const FlattenSpec&) = default;
};

using LayerSpec = std::variant<DenseSpec, Conv3DSpec, BatchNormSpec, ReLUSpec, MaxPool3DSpec, FlattenSpec>;

/// What a train-mode forward keeps for the backward pass.
template <class T>
struct LayerCache {
    Tensor<T> input;
    Shape output_shape;
    Tensor<T> normalized;           // BatchNorm x-hat
    std::vector<T> inv_std;         // BatchNorm per channel
    std::vector<std::uint32_t> argmax;  // MaxPool source offsets
};

namespace detail {

inline void expect(bool ok, int layer, const std::string& what) {
    if (!ok) throw ShapeError(layer, what);
}

template <class T>
void glorot_fill(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : w.data) v = static_cast<T>(dist(rng));
}

}  // namespace detail

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

}  // namespace detail

template <class T>
class Dense {
public:
    DenseSpec spec;
    Tensor<T> weight;  ///< [out, in]
    Tensor<T> bias;    ///< [out]

    explicit Dense(DenseSpec s) : spec(s), weight({s.out, s.in}), bias({s.out}) {}
    Dense(DenseSpec s, std::mt19937_64& rng) : Dense(s) { detail::glorot_fill(weight, s.in, s.out, rng); }

    Shape output_shape(const Shape& in, int layer) const {
        detail::expect(in.size() == 2 && in[1] == spec.in, layer,
                       "Dense(" + std::to_string(spec.in) + "->" + std::to_string(spec.out) + ") got " +
                           shape_string(in));
        return {in[0], spec.out};
    }

    Tensor<T> infer(const Tensor<T>& x, int layer) const {
        Tensor<T> y(output_shape(x.shape, layer));
        const auto N = static_cast<Eigen::Index>(x.dim(0));
        const auto I = static_cast<Eigen::Index>(spec.in), O = static_cast<Eigen::Index>(spec.out);
        detail::ConstMatMap<T> X(x.data.data(), N, I);
        detail::ConstMatMap<T> Wm(weight.data.data(), O, I);
        detail::MatMap<T> Y(y.data.data(), N, O);
        // Row by row, so each output row is independent of the batch it sits in.
        for (Eigen::Index n = 0; n < N; ++n) {
            Y.row(n).transpose().noalias() = Wm * X.row(n).transpose();
            for (Eigen::Index o = 0; o < O; ++o) Y(n, o) += bias.data[static_cast<std::size_t>(o)];
        }
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode, LayerCache<T>* cache, int layer) {
        Tensor<T> y = infer(x, layer);
        if (cache) cache->input = x;
        return y;
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Tensor<T>> grads, bool need_dx) const {
        const Tensor<T>& x = cache.input;
        const auto N = static_cast<Eigen::Index>(x.dim(0));
        const auto I = static_cast<Eigen::Index>(spec.in), O = static_cast<Eigen::Index>(spec.out);
        detail::ConstMatMap<T> X(x.data.data(), N, I);
        detail::ConstMatMap<T> G(dy.data.data(), N, O);
        detail::MatMap<T> dW(grads[0].data.data(), O, I);
        dW.noalias() += G.transpose() * X;
        for (Eigen::Index n = 0; n < N; ++n)
            for (Eigen::Index o = 0; o < O; ++o) grads[1].data[static_cast<std::size_t>(o)] += G(n, o);
        Tensor<T> dx;
        if (!need_dx) return dx;
        dx = Tensor<T>(x.shape);
        detail::ConstMatMap<T> Wm(weight.data.data(), O, I);
        detail::MatMap<T> dX(dx.data.data(), N, I);
        dX.noalias() = G * Wm;
        return dx;
    }

    std::vector<Tensor<T>*> params() { return {&weight, &bias}; }
    std::vector<const Tensor<T>*> params() const { return {&weight, &bias}; }
    std::vector<std::string> param_names() const { return {"weight", "bias"}; }
    std::vector<Tensor<T>*> buffers() { return {}; }
    std::vector<const Tensor<T>*> buffers() const { return {}; }
};

/// 3x3x3 convolution lowered to a GEMM over an im2col buffer, one sample at a time.
template <class T>
class Conv3D {
public:
    Conv3DSpec spec;
    Tensor<T> weight;  ///< [out, in, 3, 3, 3]
    Tensor<T> bias;    ///< [out]

    explicit Conv3D(Conv3DSpec s) : spec(s), weight({s.out_channels, s.in_channels, 3, 3, 3}), bias({s.out_channels}) {}
    Conv3D(Conv3DSpec s, std::mt19937_64& rng) : Conv3D(s) {
        detail::glorot_fill(weight, s.in_channels * 27, s.out_channels * 27, rng);
    }

    Shape output_shape(const Shape& in, int layer) const {
        detail::expect(in.size() == 5 && in[1] == spec.in_channels, layer,
                       "Conv3D expects [N," + std::to_string(spec.in_channels) + ",D,H,W], got " + shape_string(in));
        return {in[0], spec.out_channels, in[2], in[3], in[4]};
    }

    Tensor<T> infer(const Tensor<T>& x, int layer) const {
        Tensor<T> y(output_shape(x.shape, layer));
        const Geometry g = geometry(x);
        parallel_for(g.n, [&](std::size_t n) {
            std::vector<T> col(g.k * g.s);
            im2col(x.data.data() + n * g.ci * g.s, g, col.data());
            detail::ConstMatMap<T> C(col.data(), idx(g.k), idx(g.s));
            detail::ConstMatMap<T> Wm(weight.data.data(), idx(g.co), idx(g.k));
            detail::MatMap<T> Y(y.data.data() + n * g.co * g.s, idx(g.co), idx(g.s));
            Y.noalias() = Wm * C;
            for (std::size_t co = 0; co < g.co; ++co) Y.row(idx(co)).array() += bias.data[co];
        });
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode, LayerCache<T>* cache, int layer) {
        Tensor<T> y = infer(x, layer);
        if (cache) cache->input = x;
        return y;
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Tensor<T>> grads, bool need_dx) const {
        const Tensor<T>& x = cache.input;
        const Geometry g = geometry(x);
        Tensor<T> dx;
        if (need_dx) dx = Tensor<T>(x.shape);

        // Per-sample weight gradients are reduced in sample order afterwards.
        std::vector<std::vector<T>> dw_parts(g.n);
        parallel_for(g.n, [&](std::size_t n) {
            std::vector<T> col(g.k * g.s);
            im2col(x.data.data() + n * g.ci * g.s, g, col.data());
            detail::ConstMatMap<T> C(col.data(), idx(g.k), idx(g.s));
            detail::ConstMatMap<T> G(dy.data.data() + n * g.co * g.s, idx(g.co), idx(g.s));
            dw_parts[n].assign(g.co * g.k, T{0});
            detail::MatMap<T> dW(dw_parts[n].data(), idx(g.co), idx(g.k));
            dW.noalias() = G * C.transpose();
            if (need_dx) {
                detail::ConstMatMap<T> Wm(weight.data.data(), idx(g.co), idx(g.k));
                detail::MatMap<T> dC(col.data(), idx(g.k), idx(g.s));
                dC.noalias() = Wm.transpose() * G;
                col2im(col.data(), g, dx.data.data() + n * g.ci * g.s);
            }
        });
        for (std::size_t n = 0; n < g.n; ++n) {
            T* dw = grads[0].data.data();
            for (std::size_t i = 0; i < dw_parts[n].size(); ++i) dw[i] += dw_parts[n][i];
            for (std::size_t co = 0; co < g.co; ++co) {
                const T* gp = dy.data.data() + (n * g.co + co) * g.s;
                T acc = 0;
                for (std::size_t s = 0; s < g.s; ++s) acc += gp[s];
                grads[1].data[co] += acc;
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> params() { return {&weight, &bias}; }
    std::vector<const Tensor<T>*> params() const { return {&weight, &bias}; }
    std::vector<std::string> param_names() const { return {"weight", "bias"}; }
    std::vector<Tensor<T>*> buffers() { return {}; }
    std::vector<const Tensor<T>*> buffers() const { return {}; }

private:
    struct Geometry {
        std::size_t n, ci, co, k, s;
        long d, h, w;
    };

    static Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

    Geometry geometry(const Tensor<T>& x) const {
        Geometry g;
        g.n = x.dim(0);
        g.ci = spec.in_channels;
        g.co = spec.out_channels;
        g.k = g.ci * 27;
        g.d = static_cast<long>(x.dim(2));
        g.h = static_cast<long>(x.dim(3));
        g.w = static_cast<long>(x.dim(4));
        g.s = static_cast<std::size_t>(g.d * g.h * g.w);
        return g;
    }

    /// Row (ci*27 + kz*9 + ky*3 + kx) of `col` holds the input shifted by
    /// (kz-1, ky-1, kx-1), zero outside the volume.
    static void im2col(const T* in, const Geometry& g, T* col) {
        for (std::size_t ci = 0; ci < g.ci; ++ci) {
            const T* src = in + ci * g.s;
            for (long kz = 0; kz < 3; ++kz)
                for (long ky = 0; ky < 3; ++ky)
                    for (long kx = 0; kx < 3; ++kx) {
                        T* row = col + (ci * 27 + static_cast<std::size_t>(kz * 9 + ky * 3 + kx)) * g.s;
                        const long dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        const long x0 = std::max(0L, -dx), x1 = std::min(g.w, g.w - dx);
                        for (long z = 0; z < g.d; ++z)
                            for (long y = 0; y < g.h; ++y) {
                                T* o = row + (z * g.h + y) * g.w;
                                const long sz = z + dz, sy = y + dy;
                                if (sz < 0 || sz >= g.d || sy < 0 || sy >= g.h) {
                                    std::fill(o, o + g.w, T{0});
                                    continue;
                                }
                                const T* r = src + (sz * g.h + sy) * g.w + dx;
                                for (long xx = 0; xx < x0; ++xx) o[xx] = T{0};
                                for (long xx = x0; xx < x1; ++xx) o[xx] = r[xx];
                                for (long xx = x1; xx < g.w; ++xx) o[xx] = T{0};
                            }
                    }
        }
    }

    /// Adjoint of im2col: scatter-add every row back to its shifted position.
    static void col2im(const T* col, const Geometry& g, T* out) {
        for (std::size_t ci = 0; ci < g.ci; ++ci) {
            T* dst = out + ci * g.s;
            for (long kz = 0; kz < 3; ++kz)
                for (long ky = 0; ky < 3; ++ky)
                    for (long kx = 0; kx < 3; ++kx) {
                        const T* row = col + (ci * 27 + static_cast<std::size_t>(kz * 9 + ky * 3 + kx)) * g.s;
                        const long dz = kz - 1, dy = ky - 1, dx = kx - 1;
                        const long x0 = std::max(0L, -dx), x1 = std::min(g.w, g.w - dx);
                        for (long z = 0; z < g.d; ++z) {
                            const long sz = z + dz;
                            if (sz < 0 || sz >= g.d) continue;
                            for (long y = 0; y < g.h; ++y) {
                                const long sy = y + dy;
                                if (sy < 0 || sy >= g.h) continue;
                                const T* r = row + (z * g.h + y) * g.w;
                                T* o = dst + (sz * g.h + sy) * g.w + dx;
                                for (long xx = x0; xx < x1; ++xx) o[xx] += r[xx];
                            }
                        }
                    }
        }
    }
};

/// Per-channel normalisation over every axis except axis 1.
template <class T>
class BatchNorm {
public:
    BatchNormSpec spec;
    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;

    explicit BatchNorm(BatchNormSpec s)
        : spec(s), gamma({s.channels}, T{1}), beta({s.channels}), running_mean({s.channels}), running_var({s.channels}, T{1}) {
        if (!(s.eps > 0.0)) throw UsageError("BatchNorm eps must be positive");
    }
    BatchNorm(BatchNormSpec s, std::mt19937_64&) : BatchNorm(s) {}

    Shape output_shape(const Shape& in, int layer) const {
        detail::expect(in.size() >= 2 && in[1] == spec.channels, layer,
                       "BatchNorm(" + std::to_string(spec.channels) + ") got " + shape_string(in));
        return in;
    }

    Tensor<T> infer(const Tensor<T>& x, int layer) const {
        output_shape(x.shape, layer);
        Tensor<T> y(x.shape);
        const auto [N, C, S] = dims(x);
        for (std::size_t c = 0; c < C; ++c) {
            const T scale = static_cast<T>(gamma.data[c] / std::sqrt(static_cast<double>(running_var.data[c]) + spec.eps));
            const T shift = beta.data[c] - scale * running_mean.data[c];
            for (std::size_t n = 0; n < N; ++n) {
                const T* xp = x.data.data() + (n * C + c) * S;
                T* yp = y.data.data() + (n * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) yp[s] = scale * xp[s] + shift;
            }
        }
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache, int layer) {
        if (mode == Mode::Eval) return infer(x, layer);
        output_shape(x.shape, layer);
        const auto [N, C, S] = dims(x);
        const std::size_t M = N * S;
        Tensor<T> y(x.shape);
        Tensor<T> xhat(x.shape);
        std::vector<T> inv_std(C);
        for (std::size_t c = 0; c < C; ++c) {
            double sum = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* xp = x.data.data() + (n * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) sum += static_cast<double>(xp[s]);
            }
            const double mean = sum / static_cast<double>(M);
            double sq = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* xp = x.data.data() + (n * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    const double d = static_cast<double>(xp[s]) - mean;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(M);
            const double istd = 1.0 / std::sqrt(var + spec.eps);
            inv_std[c] = static_cast<T>(istd);
            for (std::size_t n = 0; n < N; ++n) {
                const T* xp = x.data.data() + (n * C + c) * S;
                T* hp = xhat.data.data() + (n * C + c) * S;
                T* yp = y.data.data() + (n * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    hp[s] = static_cast<T>((static_cast<double>(xp[s]) - mean) * istd);
                    yp[s] = gamma.data[c] * hp[s] + beta.data[c];
                }
            }
            const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
            running_mean.data[c] = static_cast<T>((1.0 - spec.momentum) * running_mean.data[c] + spec.momentum * mean);
            running_var.data[c] = static_cast<T>((1.0 - spec.momentum) * running_var.data[c] + spec.momentum * unbiased);
        }
        if (cache) {
            cache->normalized = std::move(xhat);
            cache->inv_std = std::move(inv_std);
        }
        return y;
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Tensor<T>> grads, bool need_dx) const {
        const Tensor<T>& xhat = cache.normalized;
        const auto [N, C, S] = dims(xhat);
        const double M = static_cast<double>(N * S);
        Tensor<T> dx;
        if (need_dx) dx = Tensor<T>(xhat.shape);
        for (std::size_t c = 0; c < C; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* g = dy.data.data() + (n * C + c) * S;
                const T* h = xhat.data.data() + (n * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    sum_g += static_cast<double>(g[s]);
                    sum_gx += static_cast<double>(g[s]) * static_cast<double>(h[s]);
                }
            }
            grads[0].data[c] += static_cast<T>(sum_gx);
            grads[1].data[c] += static_cast<T>(sum_g);
            if (!need_dx) continue;
            const double k = static_cast<double>(gamma.data[c]) * static_cast<double>(cache.inv_std[c]) / M;
            for (std::size_t n = 0; n < N; ++n) {
                const T* g = dy.data.data() + (n * C + c) * S;
                const T* h = xhat.data.data() + (n * C + c) * S;
                T* o = dx.data.data() + (n * C + c) * S;
                for (std::size_t s = 0; s < S; ++s)
                    o[s] = static_cast<T>(k * (M * static_cast<double>(g[s]) - sum_g - static_cast<double>(h[s]) * sum_gx));
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> params() { return {&gamma, &beta}; }
    std::vector<const Tensor<T>*> params() const { return {&gamma, &beta}; }
    std::vector<std::string> param_names() const { return {"gamma", "beta"}; }
    std::vector<Tensor<T>*> buffers() { return {&running_mean, &running_var}; }
    std::vector<const Tensor<T>*> buffers() const { return {&running_mean, &running_var}; }

private:
    struct Dims {
        std::size_t n, c, s;
    };
    static Dims dims(const Tensor<T>& x) {
        std::size_t s = 1;
        for (std::size_t a = 2; a < x.rank(); ++a) s *= x.dim(a);
        return {x.dim(0), x.dim(1), s};
    }
};

template <class T>
class ReLU {
public:
    ReLUSpec spec;
    explicit ReLU(ReLUSpec s = {}) : spec(s) {}
    ReLU(ReLUSpec s, std::mt19937_64&) : spec(s) {}

    Shape output_shape(const Shape& in, int) const { return in; }

    Tensor<T> infer(const Tensor<T>& x, int) const {
        Tensor<T> y = x;
        for (auto& v : y.data) v = v > T{0} ? v : T{0};
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode, LayerCache<T>* cache, int layer) {
        if (cache) cache->input = x;
        return infer(x, layer);
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Tensor<T>>, bool need_dx) const {
        Tensor<T> dx;
        if (!need_dx) return dx;
        dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!(cache.input.data[i] > T{0})) dx.data[i] = T{0};
        return dx;
    }

    std::vector<Tensor<T>*> params() { return {}; }
    std::vector<const Tensor<T>*> params() const { return {}; }
    std::vector<std::string> param_names() const { return {}; }
    std::vector<Tensor<T>*> buffers() { return {}; }
    std::vector<const Tensor<T>*> buffers() const { return {}; }
};

template <class T>
class MaxPool3D {
public:
    MaxPool3DSpec spec;
    explicit MaxPool3D(MaxPool3DSpec s = {}) : spec(s) {}
    MaxPool3D(MaxPool3DSpec s, std::mt19937_64&) : spec(s) {}

    Shape output_shape(const Shape& in, int layer) const {
        detail::expect(in.size() == 5, layer, "MaxPool3D expects [N,C,D,H,W], got " + shape_string(in));
        detail::expect(in[2] >= 2 && in[3] >= 2 && in[4] >= 2, layer,
                       "MaxPool3D needs spatial size >= 2, got " + shape_string(in));
        return {in[0], in[1], in[2] / 2, in[3] / 2, in[4] / 2};
    }

    Tensor<T> infer(const Tensor<T>& x, int layer) const { return pool(x, layer, nullptr); }

    Tensor<T> forward(const Tensor<T>& x, Mode, LayerCache<T>* cache, int layer) {
        if (!cache) return pool(x, layer, nullptr);
        cache->input.shape = x.shape;  // only the shape is needed
        cache->input.data.clear();
        return pool(x, layer, &cache->argmax);
    }

    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Tensor<T>>, bool need_dx) const {
        Tensor<T> dx;
        if (!need_dx) return dx;
        dx = Tensor<T>(cache.input.shape);
        const std::size_t planes = dy.dim(0) * dy.dim(1);
        const std::size_t out_plane = dy.dim(2) * dy.dim(3) * dy.dim(4);
        const std::size_t in_plane = dx.dim(2) * dx.dim(3) * dx.dim(4);
        for (std::size_t p = 0; p < planes; ++p) {
            T* o = dx.data.data() + p * in_plane;
            const T* g = dy.data.data() + p * out_plane;
            const std::uint32_t* src = cache.argmax.data() + p * out_plane;
            for (std::size_t q = 0; q < out_plane; ++q) o[src[q]] += g[q];
        }
        return dx;
    }

    std::vector<Tensor<T>*> params() { return {}; }
    std::vector<const Tensor<T>*> params() const { return {}; }
    std::vector<std::string> param_names() const { return {}; }
    std::vector<Tensor<T>*> buffers() { return {}; }
    std::vector<const Tensor<T>*> buffers() const { return {}; }

private:
    Tensor<T> pool(const Tensor<T>& x, int layer, std::vector<std::uint32_t>* argmax) const {
        Tensor<T> y(output_shape(x.shape, layer));
        const std::size_t planes = x.dim(0) * x.dim(1);
        const std::size_t H = x.dim(3), W = x.dim(4);
        const std::size_t od = y.dim(2), oh = y.dim(3), ow = y.dim(4);
        const std::size_t in_plane = x.dim(2) * H * W, out_plane = od * oh * ow;
        if (argmax) argmax->assign(planes * out_plane, 0);
        for (std::size_t p = 0; p < planes; ++p) {
            const T* in = x.data.data() + p * in_plane;
            T* out = y.data.data() + p * out_plane;
            for (std::size_t z = 0; z < od; ++z)
                for (std::size_t yy = 0; yy < oh; ++yy)
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                        std::size_t best = (2 * z * H + 2 * yy) * W + 2 * xx;
                        for (std::size_t dz = 0; dz < 2; ++dz)
                            for (std::size_t dy = 0; dy < 2; ++dy)
                                for (std::size_t dx = 0; dx < 2; ++dx) {
                                    const std::size_t off = ((2 * z + dz) * H + 2 * yy + dy) * W + 2 * xx + dx;
                                    if (in[off] > in[best]) best = off;
                                }
                        const std::size_t q = (z * oh + yy) * ow + xx;
                        out[q] = in[best];
                        if (argmax) (*argmax)[p * out_plane + q] = static_cast<std::uint32_t>(best);
                    }
        }
        return y;
    }
};

template <class T>
class Flatten {
public:
    FlattenSpec spec;
    explicit Flatten(FlattenSpec s = {}) : spec(s) {}
    Flatten(FlattenSpec s, std::mt19937_64&) : spec(s) {}

    Shape output_shape(const Shape& in, int layer) const {
        detail::expect(!in.empty(), layer, "Flatten needs a batch axis");
        std::size_t rest = 1;
        for (std::size_t a = 1; a < in.size(); ++a) rest *= in[a];
        return {in[0], rest};
    }
    Tensor<T> infer(const Tensor<T>& x, int layer) const { return Tensor<T>(output_shape(x.shape, layer), x.data); }
    Tensor<T> forward(const Tensor<T>& x, Mode, LayerCache<T>* cache, int layer) {
        if (cache) cache->input.shape = x.shape;
        return infer(x, layer);
    }
    Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& dy, std::span<Tensor<T>>, bool need_dx) const {
        if (!need_dx) return {};
        return Tensor<T>(cache.input.shape, dy.data);
    }

    std::vector<Tensor<T>*> params() { return {}; }
    std::vector<const Tensor<T>*> params() const { return {}; }
    std::vector<std::string> param_names() const { return {}; }
    std::vector<Tensor<T>*> buffers() { return {}; }
    std::vector<const Tensor<T>*> buffers() const { return {}; }
};

/// Concatenate [N, F_a] tensors along axis 1.
template <class T>
Tensor<T> concat(std::span<const Tensor<T>* const> parts) {
    if (parts.empty()) return {};
    const std::size_t n_batch = parts[0]->dim(0);
    std::size_t width = 0;
    for (const auto* p : parts) {
        if (p->rank() != 2 || p->dim(0) != n_batch) throw ShapeError(-1, "concat expects [N,F] parts with equal N");
        width += p->dim(1);
    }
    Tensor<T> out({n_batch, width});
    for (std::size_t n = 0; n < n_batch; ++n) {
        T* o = out.row(n);
        for (const auto* p : parts) o = std::copy(p->row(n), p->row(n) + p->dim(1), o);
    }
    return out;
}

template <class T>
Tensor<T> concat(std::initializer_list<const Tensor<T>*> parts) {
    return concat<T>(std::span<const Tensor<T>* const>(parts.begin(), parts.size()));
}

/// Slice columns [begin, begin + width) of an [N, F] tensor; the inverse of concat for gradients.
template <class T>
Tensor<T> slice_columns(const Tensor<T>& x, std::size_t begin, std::size_t width) {
    if (x.rank() != 2 || begin + width > x.dim(1)) throw ShapeError(-1, "slice_columns out of range");
    Tensor<T> out({x.dim(0), width});
    for (std::size_t n = 0; n < x.dim(0); ++n) std::copy(x.row(n) + begin, x.row(n) + begin + width, out.row(n));
    return out;
}

/// Sinusoidal embedding of integer timesteps: [sin(t w_0..w_{h-1}), cos(t w_0..w_{h-1})]
/// with w_i = 10000^(-i/h), h = dim/2.
template <class T>
Tensor<T> sinusoidal_embedding(std::span<const int> steps, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw UsageError("sinusoidal embedding dim must be even and positive");
    const std::size_t half = dim / 2;
    Tensor<T> out({steps.size(), dim});
    for (std::size_t n = 0; n < steps.size(); ++n) {
        T* o = out.row(n);
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
            const double a = static_cast<double>(steps[n]) * freq;
            o[i] = static_cast<T>(std::sin(a));
            o[half + i] = static_cast<T>(std::cos(a));
        }
    }
    return out;
}

}  // namespace coroflow::nn
