#include "mimsur/training.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

namespace mimsur::training {

namespace {

using data::LabeledSample;

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kFinetuneStream = 0;
constexpr std::size_t kEvalChunk = 512;

double to_db(double loss) {
    return loss_db(std::max(loss, kLossFloor));
}

double train_epoch(std::vector<const LabeledSample*> order, model::ModelParams& params, optim::AdamState& state,
                   double lr, std::size_t batch_size, std::uint64_t shuffle_seed, Stage stage, std::size_t fold,
                   std::size_t epoch, TrainingObserver* observer) {
    Rng rng(shuffle_seed);
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);

    double weighted = 0.0;
    std::vector<std::size_t> ids;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, order.size() - start);
        const std::span<const LabeledSample* const> chunk(order.data() + start, n);
        if (observer) {
            ids.clear();
            for (const auto* s : chunk) ids.push_back(s->id);
            observer->on_batch(stage, fold, epoch, ids);
        }
        const auto batch = model::make_batch(chunk, params.norm_stats);
        const auto lg = model::loss_and_grad(params, batch);
        optim::adam_step(params, lg.grads, state, lr);
        weighted += lg.loss * static_cast<double>(n);
    }
    const double mean = order.empty() ? 0.0 : weighted / static_cast<double>(order.size());
    if (observer) observer->on_epoch_end(stage, fold, epoch, mean);
    return mean;
}

}  // namespace

double TrainConfig::resolved_stage1_lr(data::MetalKind metal) const noexcept {
    if (stage1_lr) return *stage1_lr;
    return metal == data::MetalKind::Ag ? kSilverStage1Lr : kDefaultStage1Lr;
}

void TrainConfig::validate() const {
    if (k < 2) throw ContractViolation("TrainConfig: k must be at least 2");
    if (batch_size < 1) throw ContractViolation("TrainConfig: batch_size must be at least 1");
    if (stage1_lr && !(*stage1_lr >= 0.0)) throw ContractViolation("TrainConfig: stage-1 learning rate must be >= 0");
    if (!(finetune_lr >= 0.0)) throw ContractViolation("TrainConfig: fine-tune learning rate must be >= 0");
    model.validate();
    if (!allow_over_budget && total_epochs() > kEpochBudget) {
        throw ConfigRefused("epoch budget exceeded: " + std::to_string(k) + " x " + std::to_string(epochs_per_fold) +
                            " + " + std::to_string(finetune_epochs) + " = " + std::to_string(total_epochs()) +
                            " > " + std::to_string(kEpochBudget));
    }
}

std::vector<std::size_t> fold_sizes(std::size_t pool_size, std::size_t k) {
    if (k == 0 || k > pool_size) {
        throw ContractViolation("fold_sizes: k = " + std::to_string(k) + " invalid for pool of " +
                                std::to_string(pool_size));
    }
    std::vector<std::size_t> sizes(k, pool_size / k);
    for (std::size_t i = 0; i < pool_size % k; ++i) ++sizes[i];
    return sizes;
}

KFoldResult kfold_train(std::span<const LabeledSample> pool, const TrainConfig& config, double lr,
                        model::ModelParams& params, optim::AdamState& state, TrainingObserver* observer) {
    if (config.k < 2) throw ContractViolation("kfold_train: k must be at least 2");
    if (config.batch_size < 1) throw ContractViolation("kfold_train: batch_size must be at least 1");
    const auto sizes = fold_sizes(pool.size(), config.k);

    KFoldResult result;
    std::size_t begin = 0;
    for (std::size_t fold = 0; fold < config.k; ++fold) {
        const std::size_t end = begin + sizes[fold];
        std::vector<const LabeledSample*> train;
        train.reserve(pool.size() - sizes[fold]);
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (i < begin || i >= end) train.push_back(&pool[i]);
        }

        if (observer) observer->on_fold_start(fold, params);
        for (std::size_t epoch = 0; epoch < config.epochs_per_fold; ++epoch) {
            const auto seed = derive_seed(config.seed, fold + 1, epoch);
            result.epoch_loss.push_back(train_epoch(train, params, state, lr, config.batch_size, seed, Stage::KFold,
                                                    fold, epoch, observer));
        }
        const double val_db = evaluate(params, pool.subspan(begin, sizes[fold]));
        result.per_fold_val_db.push_back(val_db);
        if (observer) observer->on_fold_end(fold, params, val_db);
        begin = end;
    }
    return result;
}

std::vector<double> finetune(std::span<const LabeledSample> pool, model::ModelParams& params, optim::AdamState& state,
                             double lr, std::size_t epochs, std::size_t batch_size, std::uint64_t seed,
                             TrainingObserver* observer) {
    if (batch_size < 1) throw ContractViolation("finetune: batch_size must be at least 1");
    std::vector<const LabeledSample*> all;
    all.reserve(pool.size());
    for (const auto& s : pool) all.push_back(&s);

    std::vector<double> losses;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const auto shuffle_seed = derive_seed(seed, kFinetuneStream, epoch);
        losses.push_back(
            train_epoch(all, params, state, lr, batch_size, shuffle_seed, Stage::Finetune, 0, epoch, observer));
    }
    return losses;
}

double evaluate_loss(const model::ModelParams& params, std::span<const LabeledSample> samples) {
    if (samples.empty()) throw ContractViolation("evaluate: empty sample set");
    double total = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
        const auto chunk = samples.subspan(start, std::min(kEvalChunk, samples.size() - start));
        const auto batch = model::make_batch(chunk, params.norm_stats);
        const auto [re, im] = model::predict(params, batch.inputs);
        total += model::combined_loss(re, im, batch.re_target, batch.im_target) * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(samples.size());
}

double evaluate(const model::ModelParams& params, std::span<const LabeledSample> samples) {
    return to_db(evaluate_loss(params, samples));
}

nlohmann::ordered_json to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["metal"] = r.metal;
    j["init"] = r.init;
    j["init_checkpoint"] = r.init_checkpoint;
    j["config"] = {{"k", r.k},
                   {"epochs_per_fold", r.epochs_per_fold},
                   {"stage1_lr", r.stage1_lr},
                   {"finetune_lr", r.finetune_lr},
                   {"finetune_epochs", r.finetune_epochs},
                   {"batch_size", r.batch_size},
                   {"seed", r.seed}};
    j["pool_size"] = r.pool_size;
    j["test_size"] = r.test_size;
    j["fold_sizes"] = r.fold_sizes;
    j["per_fold_val_db"] = r.per_fold_val_db;
    j["initial_train_db"] = r.initial_train_db;
    j["stage1_final_train_db"] = r.stage1_final_train_db;
    j["finetune_train_db"] = r.finetune_train_db;
    j["test_db"] = r.test_db;
    j["epoch_train_db"] = r.epoch_train_db;
    j["epochs_run"] = r.epochs_run;
    j["wall_time"] = r.wall_time;
    j["dataset_fingerprint"] = r.dataset_fingerprint;
    return j;
}

RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    r.metal = j.at("metal").get<std::string>();
    r.init = j.at("init").get<std::string>();
    r.init_checkpoint = j.at("init_checkpoint").get<std::string>();
    const auto& c = j.at("config");
    r.k = c.at("k").get<std::size_t>();
    r.epochs_per_fold = c.at("epochs_per_fold").get<std::size_t>();
    r.stage1_lr = c.at("stage1_lr").get<double>();
    r.finetune_lr = c.at("finetune_lr").get<double>();
    r.finetune_epochs = c.at("finetune_epochs").get<std::size_t>();
    r.batch_size = c.at("batch_size").get<std::size_t>();
    r.seed = c.at("seed").get<std::uint64_t>();
    r.pool_size = j.at("pool_size").get<std::size_t>();
    r.test_size = j.at("test_size").get<std::size_t>();
    r.fold_sizes = j.at("fold_sizes").get<std::vector<std::size_t>>();
    r.per_fold_val_db = j.at("per_fold_val_db").get<std::vector<double>>();
    r.initial_train_db = j.at("initial_train_db").get<double>();
    r.stage1_final_train_db = j.at("stage1_final_train_db").get<double>();
    r.finetune_train_db = j.at("finetune_train_db").get<double>();
    r.test_db = j.at("test_db").get<double>();
    r.epoch_train_db = j.at("epoch_train_db").get<std::vector<double>>();
    r.epochs_run = j.at("epochs_run").get<std::size_t>();
    r.wall_time = j.at("wall_time").get<double>();
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    return r;
}

void write_report(const RunReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << to_json(report).dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

RunReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return report_from_json(nlohmann::json::parse(in));
}

TrainResult run_training(const data::Dataset& dataset, const TrainConfig& config, TrainingObserver* observer) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();

    auto parts = data::split(dataset, config.seed);
    const auto stats = data::fit_normalizer(parts.pool);

    TrainResult result;
    auto& report = result.report;
    report.metal = std::string(data::metal_name(dataset.metal));

    std::size_t prior_epochs = 0;
    if (config.init_checkpoint) {
        auto ck = model::load_checkpoint(*config.init_checkpoint);
        if (!(ck.params.config == config.model)) {
            throw model::CheckpointError(model::CheckpointError::Kind::Shape,
                                         "checkpoint architecture does not match the training configuration");
        }
        result.params = std::move(ck.params);
        prior_epochs = ck.meta.epochs_total;
        report.init = "from_checkpoint";
        report.init_checkpoint = config.init_checkpoint->string();
    } else {
        result.params = model::init_params(config.model, derive_seed(config.seed, kInitStream));
    }
    result.params.norm_stats = stats;
    result.optimizer = optim::AdamState::zeros_like(result.params);

    const double stage1_lr = config.resolved_stage1_lr(dataset.metal);
    report.k = config.k;
    report.epochs_per_fold = config.epochs_per_fold;
    report.stage1_lr = stage1_lr;
    report.finetune_lr = config.finetune_lr;
    report.finetune_epochs = config.finetune_epochs;
    report.batch_size = config.batch_size;
    report.seed = config.seed;
    report.pool_size = parts.pool.size();
    report.test_size = parts.test.size();
    report.fold_sizes = fold_sizes(parts.pool.size(), config.k);
    report.dataset_fingerprint = data::dataset_fingerprint(dataset);

    report.initial_train_db = evaluate(result.params, parts.pool);

    auto kf = kfold_train(parts.pool, config, stage1_lr, result.params, result.optimizer, observer);
    report.per_fold_val_db = kf.per_fold_val_db;
    report.stage1_final_train_db = evaluate(result.params, parts.pool);

    const auto ft = finetune(parts.pool, result.params, result.optimizer, config.finetune_lr, config.finetune_epochs,
                             config.batch_size, config.seed, observer);
    report.finetune_train_db = evaluate(result.params, parts.pool);
    report.test_db = evaluate(result.params, parts.test);

    for (double l : kf.epoch_loss) report.epoch_train_db.push_back(to_db(l));
    for (double l : ft) report.epoch_train_db.push_back(to_db(l));
    report.epochs_run = kf.epoch_loss.size() + ft.size();
    result.epochs_total = prior_epochs + report.epochs_run;
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

TrainResult transfer(const std::filesystem::path& source_checkpoint, const data::Dataset& target, TrainConfig config,
                     TrainingObserver* observer) {
    config.init_checkpoint = source_checkpoint;
    return run_training(target, config, observer);
}

}  // namespace mimsur::training
