#include "mimsur/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace mimsur::model {

namespace {

using json = nlohmann::ordered_json;

LayerParams zero_layer(std::size_t out, std::size_t in) {
    return {DenseMatrix(out, in), std::vector<double>(out, 0.0)};
}

// z = x * W^T + b
DenseMatrix affine(const DenseMatrix& x, const LayerParams& layer) {
    DenseMatrix z = matmul_bt(x, layer.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    return z;
}

// In place: z <- mish(z), grad <- mish'(z_old).
void activate(DenseMatrix& z, DenseMatrix& grad) {
    grad = DenseMatrix(z.rows(), z.cols());
    auto zv = z.values();
    auto gv = grad.values();
    for (std::size_t i = 0; i < zv.size(); ++i) {
        double value = 0.0;
        double g = 0.0;
        mish_with_grad(zv[i], value, g);
        zv[i] = value;
        gv[i] = g;
    }
}

void hadamard_inplace(DenseMatrix& a, const DenseMatrix& b) {
    auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] *= bv[i];
}

void add_inplace(DenseMatrix& a, const DenseMatrix& b) {
    auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

void column_sums(const DenseMatrix& m, std::vector<double>& out) {
    out.assign(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
    }
}

// Weight and bias gradients of z = x W^T + b given dL/dz.
void layer_grads(const DenseMatrix& dz, const DenseMatrix& x, LayerParams& out) {
    out.weight = matmul_at(dz, x);
    column_sums(dz, out.bias);
}

void check_layer(const LayerParams& layer, std::size_t out, std::size_t in, const char* name) {
    if (layer.weight.rows() != out || layer.weight.cols() != in || layer.bias.size() != out) {
        throw ContractViolation(std::string("layer ") + name + " does not match the model configuration");
    }
}

void check_params(const ModelParams& params) {
    const auto& c = params.config;
    check_layer(params.stem, c.trunk_width, c.input_dim, "stem");
    if (params.blocks.size() != c.num_blocks) throw ContractViolation("block count does not match configuration");
    for (const auto& b : params.blocks) {
        check_layer(b.expand, c.hidden_width, c.trunk_width, "block.expand");
        check_layer(b.contract, c.trunk_width, c.hidden_width, "block.contract");
    }
    check_layer(params.head_re, c.spectrum_points, c.trunk_width, "head_re");
    check_layer(params.head_im, c.spectrum_points, c.trunk_width, "head_im");
}

json config_to_json(const ModelConfig& c) {
    return {{"input_dim", c.input_dim},
            {"trunk_width", c.trunk_width},
            {"hidden_width", c.hidden_width},
            {"num_blocks", c.num_blocks},
            {"spectrum_points", c.spectrum_points}};
}

[[noreturn]] void malformed(const std::string& what) {
    throw CheckpointError(CheckpointError::Kind::Malformed, "malformed checkpoint: " + what);
}

}  // namespace

void ModelConfig::validate() const {
    if (input_dim == 0 || trunk_width == 0 || hidden_width == 0 || spectrum_points == 0) {
        throw ContractViolation("ModelConfig: widths must be positive");
    }
}

std::size_t ModelConfig::parameter_count() const noexcept {
    const std::size_t stem = trunk_width * input_dim + trunk_width;
    const std::size_t block = hidden_width * trunk_width + hidden_width + trunk_width * hidden_width + trunk_width;
    const std::size_t head = spectrum_points * trunk_width + spectrum_points;
    return stem + num_blocks * block + 2 * head;
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    p.stem = zero_layer(config.trunk_width, config.input_dim);
    p.blocks.resize(config.num_blocks);
    for (auto& b : p.blocks) {
        b.expand = zero_layer(config.hidden_width, config.trunk_width);
        b.contract = zero_layer(config.trunk_width, config.hidden_width);
    }
    p.head_re = zero_layer(config.spectrum_points, config.trunk_width);
    p.head_im = zero_layer(config.spectrum_points, config.trunk_width);
    p.norm_stats = data::NormStats::placeholder(config.input_dim);
    return p;
}

std::vector<std::span<double>> ModelParams::arrays() {
    std::vector<std::span<double>> out;
    auto push = [&out](LayerParams& l) {
        out.push_back(l.weight.values());
        out.push_back(l.bias);
    };
    push(stem);
    for (auto& b : blocks) {
        push(b.expand);
        push(b.contract);
    }
    push(head_re);
    push(head_im);
    return out;
}

std::vector<std::span<const double>> ModelParams::arrays() const {
    std::vector<std::span<const double>> out;
    auto push = [&out](const LayerParams& l) {
        out.push_back(l.weight.values());
        out.push_back(l.bias);
    };
    push(stem);
    for (const auto& b : blocks) {
        push(b.expand);
        push(b.contract);
    }
    push(head_re);
    push(head_im);
    return out;
}

std::vector<std::string> ModelParams::array_names() const {
    std::vector<std::string> names{"stem.weight", "stem.bias"};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto prefix = "blocks." + std::to_string(i) + ".";
        names.push_back(prefix + "w1");
        names.push_back(prefix + "b1");
        names.push_back(prefix + "w2");
        names.push_back(prefix + "b2");
    }
    for (const char* head : {"head_re", "head_im"}) {
        names.push_back(std::string(head) + ".weight");
        names.push_back(std::string(head) + ".bias");
    }
    return names;
}

std::vector<std::pair<std::size_t, std::size_t>> ModelParams::array_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    auto push = [&shapes](const LayerParams& l) {
        shapes.emplace_back(l.weight.rows(), l.weight.cols());
        shapes.emplace_back(l.bias.size(), 1);
    };
    push(stem);
    for (const auto& b : blocks) {
        push(b.expand);
        push(b.contract);
    }
    push(head_re);
    push(head_im);
    return shapes;
}

std::size_t ModelParams::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& a : arrays()) n += a.size();
    return n;
}

bool ModelParams::same_values(const ModelParams& other) const {
    return config == other.config && stem == other.stem && blocks == other.blocks && head_re == other.head_re &&
           head_im == other.head_im && norm_stats == other.norm_stats;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = ModelParams::zeros(config);
    Rng rng(seed);
    auto fill = [&rng](LayerParams& layer) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
        for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
    };
    fill(p.stem);
    for (auto& b : p.blocks) {
        fill(b.expand);
        fill(b.contract);
    }
    fill(p.head_re);
    fill(p.head_im);
    return p;
}

ForwardResult forward(const ModelParams& params, const DenseMatrix& x) {
    check_params(params);
    if (x.cols() != params.config.input_dim) {
        throw ContractViolation("forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(params.config.input_dim));
    }
    ForwardResult out;
    auto& cache = out.cache;
    cache.batch = x.rows();
    cache.config = params.config;
    cache.revision = params.revision;
    cache.input = x;

    DenseMatrix h = affine(x, params.stem);
    activate(h, cache.stem_grad);
    cache.trunk.reserve(params.blocks.size() + 1);
    cache.blocks.resize(params.blocks.size());

    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        const auto& block = params.blocks[b];
        auto& bc = cache.blocks[b];
        bc.hidden = affine(h, block.expand);
        activate(bc.hidden, bc.hidden_grad);
        DenseMatrix sum = affine(bc.hidden, block.contract);
        add_inplace(sum, h);
        activate(sum, bc.sum_grad);
        cache.trunk.push_back(std::move(h));
        h = std::move(sum);
    }

    out.re = affine(h, params.head_re);
    out.im = affine(h, params.head_im);
    cache.trunk.push_back(std::move(h));
    return out;
}

std::pair<DenseMatrix, DenseMatrix> predict(const ModelParams& params, const DenseMatrix& x) {
    auto r = forward(params, x);
    return {std::move(r.re), std::move(r.im)};
}

ModelGrads backward(const ModelParams& params, const ForwardCache& cache, const DenseMatrix& grad_re,
                    const DenseMatrix& grad_im) {
    const auto& cfg = params.config;
    if (!(cache.config == cfg) || cache.revision != params.revision || cache.trunk.size() != cfg.num_blocks + 1 ||
        cache.blocks.size() != cfg.num_blocks || cache.input.rows() != cache.batch) {
        throw ContractViolation("backward: forward cache does not belong to these parameters");
    }
    for (const auto* g : {&grad_re, &grad_im}) {
        if (g->rows() != cache.batch || g->cols() != cfg.spectrum_points) {
            throw ContractViolation("backward: upstream gradient shape mismatch");
        }
    }

    ModelGrads grads = ModelParams::zeros(cfg);
    grads.norm_stats = params.norm_stats;

    const DenseMatrix& h_final = cache.trunk.back();
    layer_grads(grad_re, h_final, grads.head_re);
    layer_grads(grad_im, h_final, grads.head_im);
    DenseMatrix dh = matmul(grad_re, params.head_re.weight);
    add_inplace(dh, matmul(grad_im, params.head_im.weight));

    for (std::size_t b = cfg.num_blocks; b-- > 0;) {
        const auto& block = params.blocks[b];
        const auto& bc = cache.blocks[b];
        const DenseMatrix& h_in = cache.trunk[b];

        hadamard_inplace(dh, bc.sum_grad);  // dL/d(sum), feeds both the skip and the residual branch
        layer_grads(dh, bc.hidden, grads.blocks[b].contract);
        DenseMatrix da = matmul(dh, block.contract.weight);
        hadamard_inplace(da, bc.hidden_grad);
        layer_grads(da, h_in, grads.blocks[b].expand);
        add_inplace(dh, matmul(da, block.expand.weight));
    }

    hadamard_inplace(dh, cache.stem_grad);
    layer_grads(dh, cache.input, grads.stem);
    return grads;
}

Batch make_batch(std::span<const data::LabeledSample> samples, const data::NormStats& stats) {
    std::vector<const data::LabeledSample*> ptrs;
    ptrs.reserve(samples.size());
    for (const auto& s : samples) ptrs.push_back(&s);
    return make_batch(std::span<const data::LabeledSample* const>(ptrs), stats);
}

Batch make_batch(std::span<const data::LabeledSample* const> samples, const data::NormStats& stats) {
    const std::size_t n = samples.size();
    Batch b{DenseMatrix(n, 4), DenseMatrix(n, data::kSpectrumPoints), DenseMatrix(n, data::kSpectrumPoints)};
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = data::normalize(samples[i]->geometry, stats);
        std::copy(x.begin(), x.end(), b.inputs.row(i).begin());
        std::copy(samples[i]->spectrum.re.begin(), samples[i]->spectrum.re.end(), b.re_target.row(i).begin());
        std::copy(samples[i]->spectrum.im.begin(), samples[i]->spectrum.im.end(), b.im_target.row(i).begin());
    }
    return b;
}

double combined_loss(const DenseMatrix& re_pred, const DenseMatrix& im_pred, const DenseMatrix& re_target,
                     const DenseMatrix& im_target) {
    return 0.5 * (smooth_l1(re_pred.values(), re_target.values()) + smooth_l1(im_pred.values(), im_target.values()));
}

LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch) {
    if (batch.inputs.rows() == 0) throw ContractViolation("loss_and_grad: empty batch");
    auto fwd = forward(params, batch.inputs);
    if (fwd.re.rows() != batch.re_target.rows() || fwd.re.cols() != batch.re_target.cols() ||
        fwd.im.rows() != batch.im_target.rows() || fwd.im.cols() != batch.im_target.cols()) {
        throw ContractViolation("loss_and_grad: target shape mismatch");
    }
    const double loss = combined_loss(fwd.re, fwd.im, batch.re_target, batch.im_target);

    // d/dpred of 0.5 * mean(smooth_l1) per channel.
    const double scale = 0.5 / static_cast<double>(fwd.re.size());
    DenseMatrix g_re(fwd.re.rows(), fwd.re.cols());
    DenseMatrix g_im(fwd.im.rows(), fwd.im.cols());
    for (std::size_t i = 0; i < g_re.size(); ++i) {
        g_re.values()[i] = scale * smooth_l1_derivative(fwd.re.values()[i] - batch.re_target.values()[i]);
        g_im.values()[i] = scale * smooth_l1_derivative(fwd.im.values()[i] - batch.im_target.values()[i]);
    }
    return {loss, backward(params, fwd.cache, g_re, g_im)};
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta,
                     const OptimizerSnapshot* optimizer) {
    check_params(params);
    json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["config"] = config_to_json(params.config);
    j["metal"] = meta.metal;
    j["seed"] = meta.seed;
    j["epochs_total"] = meta.epochs_total;
    j["init"] = meta.init;
    j["parameter_count"] = params.parameter_count();
    j["norm_stats"] = {{"min", params.norm_stats.min}, {"max", params.norm_stats.max}};

    const auto names = params.array_names();
    const auto shapes = params.array_shapes();
    const auto arrays = params.arrays();
    json arr = json::object();
    for (std::size_t i = 0; i < names.size(); ++i) {
        arr[names[i]] = {{"shape", {shapes[i].first, shapes[i].second}},
                         {"values", std::vector<double>(arrays[i].begin(), arrays[i].end())}};
    }
    j["arrays"] = std::move(arr);

    if (optimizer) {
        if (optimizer->m.size() != names.size() || optimizer->v.size() != names.size()) {
            throw ContractViolation("save_checkpoint: optimizer state does not match the parameter layout");
        }
        json m = json::object();
        json v = json::object();
        for (std::size_t i = 0; i < names.size(); ++i) {
            m[names[i]] = optimizer->m[i];
            v[names[i]] = optimizer->v[i];
        }
        j["optimizer"] = {{"step", optimizer->step}, {"beta1", optimizer->beta1}, {"beta2", optimizer->beta2},
                          {"eps", optimizer->eps},   {"m", std::move(m)},         {"v", std::move(v)}};
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string() + " for writing");
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string());

    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        malformed(e.what());
    }
    if (!j.is_object()) malformed("top level is not an object");
    if (!j.contains("format_version") || !j["format_version"].is_number_integer()) malformed("missing format_version");
    const int version = j["format_version"].get<int>();
    if (version != kCheckpointFormatVersion) {
        throw CheckpointError(CheckpointError::Kind::Version,
                              "unsupported checkpoint format_version " + std::to_string(version));
    }

    Checkpoint ck;
    try {
        const auto& c = j.at("config");
        ModelConfig cfg;
        cfg.input_dim = c.at("input_dim").get<std::size_t>();
        cfg.trunk_width = c.at("trunk_width").get<std::size_t>();
        cfg.hidden_width = c.at("hidden_width").get<std::size_t>();
        cfg.num_blocks = c.at("num_blocks").get<std::size_t>();
        cfg.spectrum_points = c.at("spectrum_points").get<std::size_t>();
        try {
            cfg.validate();
        } catch (const ContractViolation& e) {
            throw CheckpointError(CheckpointError::Kind::Shape, e.what());
        }

        ck.meta.metal = j.at("metal").get<std::string>();
        ck.meta.seed = j.at("seed").get<std::uint64_t>();
        ck.meta.epochs_total = j.at("epochs_total").get<std::size_t>();
        ck.meta.init = j.value("init", std::string("fresh"));

        ModelParams params = ModelParams::zeros(cfg);
        params.norm_stats.min = j.at("norm_stats").at("min").get<std::vector<double>>();
        params.norm_stats.max = j.at("norm_stats").at("max").get<std::vector<double>>();
        if (params.norm_stats.min.size() != cfg.input_dim || params.norm_stats.max.size() != cfg.input_dim) {
            throw CheckpointError(CheckpointError::Kind::Shape, "norm_stats length does not match input_dim");
        }
        for (std::size_t i = 0; i < cfg.input_dim; ++i) {
            if (!(params.norm_stats.min[i] < params.norm_stats.max[i])) {
                throw CheckpointError(CheckpointError::Kind::Shape, "norm_stats min must be below max");
            }
        }

        const auto names = params.array_names();
        const auto shapes = params.array_shapes();
        auto arrays = params.arrays();
        const auto& arr = j.at("arrays");
        if (arr.size() != names.size()) {
            throw CheckpointError(CheckpointError::Kind::Shape,
                                  "expected " + std::to_string(names.size()) + " arrays, found " +
                                      std::to_string(arr.size()));
        }
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (!arr.contains(names[i])) {
                throw CheckpointError(CheckpointError::Kind::Shape, "missing array " + names[i]);
            }
            const auto& entry = arr.at(names[i]);
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2 || shape[0] != shapes[i].first || shape[1] != shapes[i].second) {
                throw CheckpointError(CheckpointError::Kind::Shape, "array " + names[i] + " has the wrong shape");
            }
            const auto values = entry.at("values").get<std::vector<double>>();
            if (values.size() != arrays[i].size()) {
                throw CheckpointError(CheckpointError::Kind::Shape,
                                      "array " + names[i] + " has " + std::to_string(values.size()) + " values");
            }
            std::copy(values.begin(), values.end(), arrays[i].begin());
        }

        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            OptimizerSnapshot snap;
            snap.step = o.at("step").get<std::uint64_t>();
            snap.beta1 = o.at("beta1").get<double>();
            snap.beta2 = o.at("beta2").get<double>();
            snap.eps = o.at("eps").get<double>();
            for (std::size_t i = 0; i < names.size(); ++i) {
                snap.m.push_back(o.at("m").at(names[i]).get<std::vector<double>>());
                snap.v.push_back(o.at("v").at(names[i]).get<std::vector<double>>());
                if (snap.m.back().size() != arrays[i].size() || snap.v.back().size() != arrays[i].size()) {
                    throw CheckpointError(CheckpointError::Kind::Shape, "optimizer moment " + names[i] + " has the wrong size");
                }
            }
            ck.optimizer = std::move(snap);
        }
        ck.params = std::move(params);
    } catch (const json::exception& e) {
        malformed(e.what());
    }
    return ck;
}

}  // namespace mimsur::model
