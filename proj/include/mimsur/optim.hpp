#pragma once

#include "mimsur/model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mimsur::optim {

/// First/second moment estimates for a list of parameter arrays.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// Zero moments sized like the given arrays.
    static AdamState zeros_like(std::span<const std::span<const double>> arrays);
    static AdamState zeros_like(const model::ModelParams& params);

    model::OptimizerSnapshot snapshot() const;
    static AdamState from_snapshot(const model::OptimizerSnapshot& snap);
};

/// One bias-corrected Adam update over matching parameter/gradient arrays.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state, double lr);

/// Same update on a whole network; bumps params.revision.
void adam_step(model::ModelParams& params, const model::ModelGrads& grads, AdamState& state, double lr);

}  // namespace mimsur::optim
