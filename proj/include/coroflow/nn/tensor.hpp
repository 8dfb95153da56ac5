#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "coroflow/error.hpp"

namespace coroflow::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& s) {
    std::ostringstream out;
    out << '[';
    for (std::size_t a = 0; a < s.size(); ++a) out << (a ? "," : "") << s[a];
    out << ']';
    return out.str();
}

/// Dense row-major array. The first axis is the batch axis wherever a batch exists.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_size(shape))
            throw ShapeError(-1, "tensor of shape " + shape_string(shape) + " given " + std::to_string(data.size()) +
                                     " values");
    }

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t a) const { return shape.at(a); }
    std::size_t rank() const { return shape.size(); }
    /// Number of values per batch entry.
    std::size_t row_size() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0]; }

    T* row(std::size_t n) { return data.data() + n * row_size(); }
    const T* row(std::size_t n) const { return data.data() + n * row_size(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace coroflow::nn
