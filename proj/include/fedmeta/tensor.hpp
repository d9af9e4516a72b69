#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fedmeta {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Image batches are NCHW, logits are (batch, classes).
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{}) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {}

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    /// Number of elements per leading-dimension row.
    std::size_t row_size() const { return shape.empty() ? 0 : data.size() / shape[0]; }

    std::span<T> row(std::size_t i) { return {data.data() + i * row_size(), row_size()}; }
    std::span<const T> row(std::size_t i) const { return {data.data() + i * row_size(), row_size()}; }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
    }
};

}  // namespace fedmeta
