#include "fedmeta/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedmeta/error.hpp"

namespace fedmeta {

template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels) {
    require(logits.rank() == 2 && logits.shape == labels.shape && logits.dim(0) > 0, ErrorKind::ShapeMismatch,
            "logits " + shape_string(logits.shape) + " and labels " + shape_string(labels.shape) +
                " must share a (batch, classes) shape");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    LossResult<T> out;
    out.grad = Tensor<T>(logits.shape);
    double total = 0.0;
    std::vector<double> prob(k);
    for (std::size_t i = 0; i < n; ++i) {
        const T* z = logits.data.data() + i * k;
        const T* y = labels.data.data() + i * k;
        std::size_t hot = k;
        for (std::size_t j = 0; j < k; ++j) {
            if (y[j] == T{1}) {
                require(hot == k, ErrorKind::InvalidArgument, "label row " + std::to_string(i) + " is not one-hot");
                hot = j;
            } else {
                require(y[j] == T{0}, ErrorKind::InvalidArgument, "label row " + std::to_string(i) + " is not one-hot");
            }
        }
        require(hot < k, ErrorKind::InvalidArgument, "label row " + std::to_string(i) + " is not one-hot");

        const double zmax = *std::max_element(z, z + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            prob[j] = std::exp(static_cast<double>(z[j]) - zmax);
            sum += prob[j];
        }
        const double log_sum = std::log(sum) + zmax;
        total += log_sum - static_cast<double>(z[hot]);
        for (std::size_t j = 0; j < k; ++j) {
            const double pj = prob[j] / sum;
            out.grad.data[i * k + j] = static_cast<T>((pj - (j == hot ? 1.0 : 0.0)) / static_cast<double>(n));
        }
    }
    out.loss = total / static_cast<double>(n);
    return out;
}

template <class T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    Tensor<T> out({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] < classes, ErrorKind::InvalidArgument, "label out of range");
        out.data[i * classes + labels[i]] = T{1};
    }
    return out;
}

template LossResult<float> softmax_cross_entropy(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> one_hot(std::span<const std::size_t>, std::size_t);
template Tensor<double> one_hot(std::span<const std::size_t>, std::size_t);

}  // namespace fedmeta
