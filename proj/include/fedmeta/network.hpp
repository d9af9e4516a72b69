#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedmeta/param_vector.hpp"
#include "fedmeta/tensor.hpp"

namespace fedmeta {

enum class HeadKind { Classifier, Embedding };

/// Conv4-style network: `modules` blocks of (k x k same-padded conv, batch
/// norm, ReLU, 2x2 max-pool), followed by a linear classifier over
/// `num_classes` outputs or, for HeadKind::Embedding, the flattened features.
struct NetworkSpec {
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t channels = 1;
    std::size_t modules = 4;
    std::size_t filters = 64;
    std::size_t kernel = 3;
    std::size_t pool = 2;
    HeadKind head = HeadKind::Classifier;
    std::size_t num_classes = 5;
    double bn_epsilon = 1e-3;

    /// Throws ErrorKind::InvalidArgument when a dimension is zero, the kernel
    /// is even, or pooling would shrink the feature map below 1x1.
    void validate() const;

    std::size_t final_height() const;
    std::size_t final_width() const;
    std::size_t embedding_dim() const { return filters * final_height() * final_width(); }
    std::size_t output_dim() const {
        return head == HeadKind::Classifier ? num_classes : embedding_dim();
    }

    Layout layout() const;
    LayoutPtr make_layout() const;

    /// Same trunk with the classifier segments removed.
    NetworkSpec as_embedding() const;

    bool operator==(const NetworkSpec&) const = default;
};

enum class Mode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with externally supplied statistics.
    Eval,
};

/// Per-module batch-norm statistics (mean and biased variance per channel).
struct NormStats {
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> var;

    bool empty() const { return mean.empty(); }
};

template <class T>
struct ModuleCache {
    std::size_t in_channels = 0, in_h = 0, in_w = 0;
    std::size_t out_h = 0, out_w = 0;  // after pooling
    std::vector<T> cols;               // [n][in_channels*k*k][in_h*in_w]
    std::vector<T> xhat;               // [n][filters][in_h*in_w]
    std::vector<double> inv_std;       // [filters]
    std::vector<std::uint8_t> active;  // ReLU mask, same shape as xhat
    std::vector<std::uint32_t> argmax; // [n][filters][out_h*out_w]
};

template <class T>
struct ForwardCache {
    Mode mode = Mode::Train;
    std::size_t batch = 0;
    std::size_t param_count = 0;
    std::vector<ModuleCache<T>> modules;
    Tensor<T> features;  // (batch, embedding_dim)
};

template <class T>
struct ForwardResult {
    Tensor<T> output;
    NormStats stats;  // statistics used for normalization
    ForwardCache<T> cache;
};

/// Runs the network on an NCHW batch. Eval mode requires `eval_stats`.
template <class T>
ForwardResult<T> forward(const BasicParamVector<T>& params, const NetworkSpec& spec,
                         const Tensor<T>& batch, Mode mode, const NormStats* eval_stats = nullptr);

/// Gradient of sum(upstream * output) with respect to every parameter.
template <class T>
BasicParamVector<T> backward(const BasicParamVector<T>& params, const NetworkSpec& spec,
                             const ForwardCache<T>& cache, const Tensor<T>& upstream);

/// Glorot-uniform weights, zero biases, unit batch-norm scales.
ParamVector glorot_init(const NetworkSpec& spec, std::uint64_t seed);

/// Glorot bound sqrt(6 / (fan_in + fan_out)) for a weight segment; 0 for
/// segments that are not Glorot-initialized.
double glorot_bound(const NetworkSpec& spec, const Segment& segment);

extern template ForwardResult<float> forward(const BasicParamVector<float>&, const NetworkSpec&,
                                             const Tensor<float>&, Mode, const NormStats*);
extern template ForwardResult<double> forward(const BasicParamVector<double>&, const NetworkSpec&,
                                              const Tensor<double>&, Mode, const NormStats*);
extern template BasicParamVector<float> backward(const BasicParamVector<float>&, const NetworkSpec&,
                                                 const ForwardCache<float>&, const Tensor<float>&);
extern template BasicParamVector<double> backward(const BasicParamVector<double>&,
                                                  const NetworkSpec&, const ForwardCache<double>&,
                                                  const Tensor<double>&);

}  // namespace fedmeta
