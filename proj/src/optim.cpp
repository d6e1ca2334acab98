#include "mimsur/optim.hpp"

#include <cmath>
#include <string>

namespace mimsur::optim {

AdamState AdamState::zeros_like(std::span<const std::span<const double>> arrays) {
    AdamState s;
    for (const auto& a : arrays) {
        s.m.emplace_back(a.size(), 0.0);
        s.v.emplace_back(a.size(), 0.0);
    }
    return s;
}

AdamState AdamState::zeros_like(const model::ModelParams& params) {
    const auto arrays = params.arrays();
    return zeros_like(std::span<const std::span<const double>>(arrays));
}

model::OptimizerSnapshot AdamState::snapshot() const {
    return {t, beta1, beta2, eps, m, v};
}

AdamState AdamState::from_snapshot(const model::OptimizerSnapshot& snap) {
    AdamState s;
    s.m = snap.m;
    s.v = snap.v;
    s.t = snap.step;
    s.beta1 = snap.beta1;
    s.beta2 = snap.beta2;
    s.eps = snap.eps;
    return s;
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
        throw ContractViolation("adam_step: array count mismatch");
    }
    for (std::size_t a = 0; a < params.size(); ++a) {
        const std::size_t n = params[a].size();
        if (grads[a].size() != n || state.m[a].size() != n || state.v[a].size() != n) {
            throw ContractViolation("adam_step: shape mismatch in array " + std::to_string(a));
        }
    }
    if (!(lr >= 0.0)) throw ContractViolation("adam_step: learning rate must be non-negative");

    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double eps = state.eps;

    for (std::size_t a = 0; a < params.size(); ++a) {
        double* theta = params[a].data();
        const double* g = grads[a].data();
        double* m = state.m[a].data();
        double* v = state.v[a].data();
        const std::size_t n = params[a].size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

void adam_step(model::ModelParams& params, const model::ModelGrads& grads, AdamState& state, double lr) {
    if (!(params.config == grads.config)) throw ContractViolation("adam_step: gradient layout differs from parameters");
    const auto p = params.arrays();
    const auto g = grads.arrays();
    adam_step(std::span<const std::span<double>>(p), std::span<const std::span<const double>>(g), state, lr);
    ++params.revision;
}

}  // namespace mimsur::optim
