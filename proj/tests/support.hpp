#pragma once

#include "mimsur/data.hpp"
#include "mimsur/model.hpp"
#include "mimsur/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace mimsur::testing {

// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("mimsur-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline DenseMatrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
    DenseMatrix m(rows, cols);
    for (auto& v : m.values()) v = rng.uniform(lo, hi);
    return m;
}

// Random geometry inside the training grid's bounding box.
inline data::GeometrySample random_geometry(Rng& rng) {
    return {rng.uniform(20, 100), rng.uniform(200, 400), rng.uniform(30, 150), rng.uniform(60, 100)};
}

// Parameters with every array (biases included) drawn uniformly; init_params leaves biases zero.
inline model::ModelParams random_params(const model::ModelConfig& config, Rng& rng, double scale = 0.5) {
    auto params = model::ModelParams::zeros(config);
    for (auto a : params.arrays()) {
        for (auto& v : a) v = rng.uniform(-scale, scale);
    }
    return params;
}

inline model::ModelConfig tiny_config(Rng& rng) {
    model::ModelConfig c;
    c.input_dim = 1 + rng.below(4);
    c.trunk_width = 1 + rng.below(8);
    c.hidden_width = 1 + rng.below(8);
    c.num_blocks = 1 + rng.below(2);
    c.spectrum_points = 1 + rng.below(8);
    return c;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Compares loss_and_grad against central differences over every parameter.
// Relative error uses max(|analytic|, |numeric|) with a 1e-8 floor for vanishing gradients.
inline GradCheck gradient_check(model::ModelParams params, const model::Batch& batch, double h = 1e-5) {
    const auto analytic = model::loss_and_grad(params, batch).grads;
    const auto loss_at = [&] {
        const auto [re, im] = model::predict(params, batch.inputs);
        return model::combined_loss(re, im, batch.re_target, batch.im_target);
    };

    GradCheck out;
    auto arrays = params.arrays();
    const auto grads = analytic.arrays();
    for (std::size_t a = 0; a < arrays.size(); ++a) {
        for (std::size_t i = 0; i < arrays[a].size(); ++i) {
            const double orig = arrays[a][i];
            arrays[a][i] = orig + h;
            const double up = loss_at();
            arrays[a][i] = orig - h;
            const double down = loss_at();
            arrays[a][i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double g = grads[a][i];
            const double denom = std::max({std::abs(g), std::abs(numeric), 1e-8});
            out.max_rel_error = std::max(out.max_rel_error, std::abs(g - numeric) / denom);
            ++out.checked;
        }
    }
    return out;
}

inline model::Batch random_batch(const model::ModelConfig& config, Rng& rng, std::size_t n) {
    return {random_matrix(rng, n, config.input_dim, 0.0, 1.0), random_matrix(rng, n, config.spectrum_points),
            random_matrix(rng, n, config.spectrum_points)};
}

}  // namespace mimsur::testing
