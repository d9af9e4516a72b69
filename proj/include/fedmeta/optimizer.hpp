#pragma once

#include <cstdint>
#include <vector>

#include "fedmeta/param_vector.hpp"

namespace fedmeta {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 0.001;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

/// Adam moments live in 64-bit and are sized lazily on the first step.
struct OptimizerState {
    OptimizerConfig config;
    LayoutPtr layout;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step = 0;

    OptimizerState() = default;
    explicit OptimizerState(OptimizerConfig c) : config(c) {}
};

/// One optimizer update in place. Throws ErrorKind::NonFinite on non-finite
/// gradients and ErrorKind::LayoutMismatch on mismatched layouts.
template <class T>
void optimizer_step(OptimizerState& state, BasicParamVector<T>& params, const BasicParamVector<T>& grads);

extern template void optimizer_step(OptimizerState&, BasicParamVector<float>&, const BasicParamVector<float>&);
extern template void optimizer_step(OptimizerState&, BasicParamVector<double>&, const BasicParamVector<double>&);

}  // namespace fedmeta
