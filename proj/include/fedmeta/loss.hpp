#pragma once

#include <cstddef>
#include <span>

#include "fedmeta/tensor.hpp"

namespace fedmeta {

template <class T>
struct LossResult {
    double loss = 0.0;  // mean over the batch
    Tensor<T> grad;     // d loss / d logits
};

/// Mean softmax cross-entropy over a (batch, classes) logits tensor against
/// one-hot labels of the same shape.
template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& one_hot_labels);

template <class T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes);

/// Row-wise argmax; ties resolve to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

extern template LossResult<float> softmax_cross_entropy(const Tensor<float>&, const Tensor<float>&);
extern template LossResult<double> softmax_cross_entropy(const Tensor<double>&, const Tensor<double>&);
extern template Tensor<float> one_hot(std::span<const std::size_t>, std::size_t);
extern template Tensor<double> one_hot(std::span<const std::size_t>, std::size_t);

}  // namespace fedmeta
