#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "coroflow/nn/layers.hpp"

namespace coroflow::nn {

template <class T>
using Layer = std::variant<Dense<T>, Conv3D<T>, BatchNorm<T>, ReLU<T>, MaxPool3D<T>, Flatten<T>>;

template <class T>
struct StackCache {
    std::vector<LayerCache<T>> layers;
    Shape output_shape;
};

/// Gradients in the same order as Sequential::parameters().
template <class T>
using Gradients = std::vector<Tensor<T>>;

template <class T>
struct NamedTensor {
    std::string name;
    Tensor<T>* tensor;
};

namespace detail {

template <class T>
Layer<T> make_layer(const LayerSpec& spec, std::mt19937_64& rng) {
    return std::visit(
        [&](const auto& s) -> Layer<T> {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, DenseSpec>) return Dense<T>(s, rng);
            else if constexpr (std::is_same_v<S, Conv3DSpec>) return Conv3D<T>(s, rng);
            else if constexpr (std::is_same_v<S, BatchNormSpec>) return BatchNorm<T>(s, rng);
            else if constexpr (std::is_same_v<S, ReLUSpec>) return ReLU<T>(s, rng);
            else if constexpr (std::is_same_v<S, MaxPool3DSpec>) return MaxPool3D<T>(s, rng);
            else return Flatten<T>(s, rng);
        },
        spec);
}

}  // namespace detail

/// Ordered layer stack. Eval-mode inference is const; train-mode forward
/// fills a StackCache and updates BatchNorm running statistics.
template <class T>
class Sequential {
public:
    std::vector<Layer<T>> layers;

    Sequential() = default;
    Sequential(const std::vector<LayerSpec>& specs, std::mt19937_64& rng) {
        for (const auto& s : specs) layers.push_back(detail::make_layer<T>(s, rng));
    }

    bool empty() const { return layers.empty(); }
    std::size_t size() const { return layers.size(); }

    std::vector<LayerSpec> specs() const {
        std::vector<LayerSpec> out;
        for (const auto& l : layers) std::visit([&](const auto& x) { out.push_back(x.spec); }, l);
        return out;
    }

    /// Shape checker: the output shape for `input`, or ShapeError naming the layer.
    Shape output_shape(Shape input) const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            input = std::visit([&](const auto& l) { return l.output_shape(input, static_cast<int>(i)); }, layers[i]);
        return input;
    }

    Tensor<T> infer(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (std::size_t i = 0; i < layers.size(); ++i)
            h = std::visit([&](const auto& l) { return l.infer(h, static_cast<int>(i)); }, layers[i]);
        return h;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, StackCache<T>* cache = nullptr) {
        if (mode == Mode::Eval) return infer(x);
        if (cache) cache->layers.assign(layers.size(), {});
        Tensor<T> h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            LayerCache<T>* lc = cache ? &cache->layers[i] : nullptr;
            h = std::visit([&](auto& l) { return l.forward(h, mode, lc, static_cast<int>(i)); }, layers[i]);
            if (lc) lc->output_shape = h.shape;
        }
        if (cache) cache->output_shape = h.shape;
        return h;
    }

    /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input)
    /// (empty when need_input_grad is false).
    Tensor<T> backward(const StackCache<T>& cache, const Tensor<T>& dy, Gradients<T>& grads,
                       bool need_input_grad = true) const {
        if (cache.layers.size() != layers.size()) throw ShapeError(-1, "cache does not belong to this stack");
        if (dy.shape != cache.output_shape)
            throw ShapeError(static_cast<int>(layers.size()) - 1, "output gradient " + shape_string(dy.shape) +
                                                                      " vs output " + shape_string(cache.output_shape));
        if (grads.size() != parameter_count()) throw ShapeError(-1, "gradient list does not match parameters");
        std::vector<std::size_t> offsets(layers.size() + 1, 0);
        for (std::size_t i = 0; i < layers.size(); ++i)
            offsets[i + 1] = offsets[i] + std::visit([](const auto& l) { return l.params().size(); }, layers[i]);
        Tensor<T> g = dy;
        for (std::size_t r = layers.size(); r-- > 0;) {
            const bool need = need_input_grad || r > 0;
            std::span<Tensor<T>> slot(grads.data() + offsets[r], offsets[r + 1] - offsets[r]);
            g = std::visit([&](const auto& l) { return l.backward(cache.layers[r], g, slot, need); }, layers[r]);
        }
        return g;
    }

    std::vector<NamedTensor<T>> parameters() {
        std::vector<NamedTensor<T>> out;
        for (std::size_t i = 0; i < layers.size(); ++i)
            std::visit(
                [&](auto& l) {
                    auto ps = l.params();
                    auto names = l.param_names();
                    for (std::size_t p = 0; p < ps.size(); ++p) out.push_back({std::to_string(i) + "." + names[p], ps[p]});
                },
                layers[i]);
        return out;
    }

    std::vector<const Tensor<T>*> parameter_tensors() const {
        std::vector<const Tensor<T>*> out;
        for (const auto& l : layers)
            std::visit([&](const auto& x) { for (auto* p : x.params()) out.push_back(p); }, l);
        return out;
    }

    std::vector<Tensor<T>*> buffers() {
        std::vector<Tensor<T>*> out;
        for (auto& l : layers) std::visit([&](auto& x) { for (auto* b : x.buffers()) out.push_back(b); }, l);
        return out;
    }

    std::vector<const Tensor<T>*> buffer_tensors() const {
        std::vector<const Tensor<T>*> out;
        for (const auto& l : layers) std::visit([&](const auto& x) { for (auto* b : x.buffers()) out.push_back(b); }, l);
        return out;
    }

    std::size_t parameter_count() const { return parameter_tensors().size(); }

    Gradients<T> zero_grads() const {
        Gradients<T> g;
        for (const auto* p : parameter_tensors()) g.emplace_back(p->shape);
        return g;
    }

    /// Same architecture and values in another scalar type.
    template <class U>
    Sequential<U> cast() const {
        std::mt19937_64 unused(0);
        Sequential<U> out(specs(), unused);
        auto dst = out.parameters();
        auto src = parameter_tensors();
        for (std::size_t p = 0; p < src.size(); ++p) *dst[p].tensor = src[p]->template cast<U>();
        auto dbuf = out.buffers();
        auto sbuf = buffer_tensors();
        for (std::size_t b = 0; b < sbuf.size(); ++b) *dbuf[b] = sbuf[b]->template cast<U>();
        return out;
    }
};

}  // namespace coroflow::nn
