#pragma once

// Fully-connected residual network mapping 4 normalized geometry inputs to the
// real and imaginary S11 channels.
//
//   h0      = mish(stem * x + b)
//   h_{i+1} = mish(h_i + W2 * mish(W1 * h_i + b1) + b2)        per block
//   re, im  = head_re * h + b_re,  head_im * h + b_im           (linear heads)
//
// With the default widths this is 1 stem + 4 x 2 block layers + 1 head = 10
// weight layers and 140,992 trainable values.

#include "mimsur/data.hpp"
#include "mimsur/numcore.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mimsur::model {

struct ModelConfig {
    std::size_t input_dim = 4;
    std::size_t trunk_width = 64;
    std::size_t hidden_width = 256;
    std::size_t num_blocks = 4;
    std::size_t spectrum_points = 64;

    /// Throws ContractViolation on zero widths.
    void validate() const;
    /// Weight layers along the real (or imaginary) path.
    std::size_t layer_count() const noexcept { return 1 + 2 * num_blocks + 1; }
    std::size_t parameter_count() const noexcept;

    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    DenseMatrix weight;  // out x in
    std::vector<double> bias;

    std::size_t out_dim() const noexcept { return weight.rows(); }
    std::size_t in_dim() const noexcept { return weight.cols(); }
    bool operator==(const LayerParams&) const = default;
};

struct BlockParams {
    LayerParams expand;    // trunk -> hidden
    LayerParams contract;  // hidden -> trunk
    bool operator==(const BlockParams&) const = default;
};

struct ModelParams {
    ModelConfig config;
    LayerParams stem;
    std::vector<BlockParams> blocks;
    LayerParams head_re;
    LayerParams head_im;
    data::NormStats norm_stats;
    /// Bumped by every in-place update; forward caches remember it.
    std::uint64_t revision = 0;

    /// All arrays zero, placeholder normalization.
    static ModelParams zeros(const ModelConfig& config);

    /// Every trainable array in canonical order: stem, blocks (w1, b1, w2, b2), head_re, head_im.
    std::vector<std::span<double>> arrays();
    std::vector<std::span<const double>> arrays() const;
    /// Names matching arrays(), e.g. "stem.weight", "blocks.2.w1", "head_im.bias".
    std::vector<std::string> array_names() const;
    /// Row/column shape for each array (biases are n x 1).
    std::vector<std::pair<std::size_t, std::size_t>> array_shapes() const;

    std::size_t parameter_count() const noexcept;

    /// Equality of config, arrays and normalization; revision is ignored.
    bool same_values(const ModelParams& other) const;
};

/// Gradients share the parameter layout.
using ModelGrads = ModelParams;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, drawn in
/// canonical order from a single seeded stream.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

struct BlockCache {
    DenseMatrix hidden;       // mish(W1 h + b1)
    DenseMatrix hidden_grad;  // mish'(W1 h + b1)
    DenseMatrix sum_grad;     // mish'(h + f(h))
};

struct ForwardCache {
    std::size_t batch = 0;
    ModelConfig config;
    std::uint64_t revision = 0;
    DenseMatrix input;
    DenseMatrix stem_grad;           // mish'(stem x + b)
    std::vector<DenseMatrix> trunk;  // h_0 .. h_blocks
    std::vector<BlockCache> blocks;
};

struct ForwardResult {
    DenseMatrix re;  // batch x spectrum_points
    DenseMatrix im;
    ForwardCache cache;
};

/// x is batch x input_dim, already normalized.
ForwardResult forward(const ModelParams& params, const DenseMatrix& x);

/// Outputs only; no cache is kept.
std::pair<DenseMatrix, DenseMatrix> predict(const ModelParams& params, const DenseMatrix& x);

ModelGrads backward(const ModelParams& params, const ForwardCache& cache, const DenseMatrix& grad_re,
                    const DenseMatrix& grad_im);

struct Batch {
    DenseMatrix inputs;     // batch x input_dim, normalized
    DenseMatrix re_target;  // batch x spectrum_points
    DenseMatrix im_target;
};

/// Normalizes geometries with stats and packs the targets.
Batch make_batch(std::span<const data::LabeledSample> samples, const data::NormStats& stats);
Batch make_batch(std::span<const data::LabeledSample* const> samples, const data::NormStats& stats);

/// 0.5 * (SmoothL1(re) + SmoothL1(im)) with beta = 1.
double combined_loss(const DenseMatrix& re_pred, const DenseMatrix& im_pred, const DenseMatrix& re_target,
                     const DenseMatrix& im_target);

struct LossAndGrad {
    double loss = 0.0;
    ModelGrads grads;
};

LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch);

/// Metadata stored next to the arrays in a checkpoint.
struct CheckpointMeta {
    std::string metal;
    std::uint64_t seed = 0;
    std::size_t epochs_total = 0;
    std::string init = "fresh";

    bool operator==(const CheckpointMeta&) const = default;
};

/// Adam moments for resuming mid-stage; arrays follow ModelParams::arrays() order.
struct OptimizerSnapshot {
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    bool operator==(const OptimizerSnapshot&) const = default;
};

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Io, Version, Malformed, Shape };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    ModelParams params;
    CheckpointMeta meta;
    std::optional<OptimizerSnapshot> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta,
                     const OptimizerSnapshot* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mimsur::model
