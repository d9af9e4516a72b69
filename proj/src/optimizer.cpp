#include "fedmeta/optimizer.hpp"

#include <cmath>

namespace fedmeta {

void OptimizerConfig::validate() const {
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidArgument,
            "learning rate must be finite and non-negative");
    if (kind == OptimizerKind::Adam) {
        require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::InvalidArgument,
                "Adam betas must lie in [0, 1)");
        require(epsilon > 0.0, ErrorKind::InvalidArgument, "Adam epsilon must be positive");
    }
}

template <class T>
void optimizer_step(OptimizerState& state, BasicParamVector<T>& params, const BasicParamVector<T>& grads) {
    params.check_compatible(grads);
    require(grads.all_finite(), ErrorKind::NonFinite, "optimizer received non-finite gradients");
    if (!state.layout) {
        state.layout = params.layout_ptr();
    } else {
        require(same_layout(state.layout, params.layout_ptr()), ErrorKind::LayoutMismatch,
                "optimizer state belongs to a different parameter layout");
    }
    const auto& cfg = state.config;
    auto values = params.values();
    const auto g = grads.values();
    ++state.step;

    if (cfg.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = static_cast<T>(static_cast<double>(values[i]) - cfg.learning_rate * g[i]);
        }
    } else {
        if (state.first_moment.size() != values.size()) {
            state.first_moment.assign(values.size(), 0.0);
            state.second_moment.assign(values.size(), 0.0);
        }
        const double t = static_cast<double>(state.step);
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double gi = g[i];
            double& m = state.first_moment[i];
            double& v = state.second_moment[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * gi;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * gi * gi;
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            values[i] = static_cast<T>(static_cast<double>(values[i]) -
                                       cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
        }
    }
    require(params.all_finite(), ErrorKind::NonFinite, "optimizer step produced non-finite parameters");
}

template void optimizer_step(OptimizerState&, BasicParamVector<float>&, const BasicParamVector<float>&);
template void optimizer_step(OptimizerState&, BasicParamVector<double>&, const BasicParamVector<double>&);

}  // namespace fedmeta
