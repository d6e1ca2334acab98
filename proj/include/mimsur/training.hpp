#pragma once

// Two-stage recipe: inherited k-fold training over the pool followed by a
// whole-pool fine-tune at a lower learning rate. Each fold starts from the
// weights (and Adam moments) the previous fold finished with.

#include "mimsur/data.hpp"
#include "mimsur/model.hpp"
#include "mimsur/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace mimsur::training {

inline constexpr std::size_t kEpochBudget = 1100;
inline constexpr double kDefaultStage1Lr = 5e-4;
inline constexpr double kSilverStage1Lr = 3e-4;
inline constexpr double kLossFloor = 1e-30;

/// Raised when a configuration is well-formed but refused (epoch budget).
class ConfigRefused : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t k = 10;
    std::size_t epochs_per_fold = 100;
    /// Unset means the per-metal default (3e-4 for Ag, 5e-4 otherwise).
    std::optional<double> stage1_lr;
    double finetune_lr = 1e-4;
    std::size_t finetune_epochs = 100;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    /// Fresh initialization when empty; otherwise weights are transferred from this checkpoint.
    std::optional<std::filesystem::path> init_checkpoint;
    bool allow_over_budget = false;
    model::ModelConfig model;

    std::size_t total_epochs() const noexcept { return k * epochs_per_fold + finetune_epochs; }
    double resolved_stage1_lr(data::MetalKind metal) const noexcept;

    /// ContractViolation for k < 2 or batch_size 0, ConfigRefused when over budget.
    void validate() const;
};

enum class Stage { KFold, Finetune };

/// Hooks for instrumentation; all default to no-ops.
class TrainingObserver {
public:
    virtual ~TrainingObserver() = default;
    virtual void on_fold_start(std::size_t /*fold*/, const model::ModelParams&) {}
    virtual void on_fold_end(std::size_t /*fold*/, const model::ModelParams&, double /*val_db*/) {}
    virtual void on_batch(Stage, std::size_t /*fold*/, std::size_t /*epoch*/, std::span<const std::size_t> /*ids*/) {}
    virtual void on_epoch_end(Stage, std::size_t /*fold*/, std::size_t /*epoch*/, double /*mean_loss*/) {}
};

/// Contiguous fold sizes; the remainder goes to the earliest folds.
std::vector<std::size_t> fold_sizes(std::size_t pool_size, std::size_t k);

struct KFoldResult {
    std::vector<double> per_fold_val_db;
    std::vector<double> epoch_loss;  // mean training loss per epoch, linear
};

KFoldResult kfold_train(std::span<const data::LabeledSample> pool, const TrainConfig& config, double lr,
                        model::ModelParams& params, optim::AdamState& state, TrainingObserver* observer = nullptr);

/// Whole-pool training at constant lr. Returns the per-epoch mean training loss.
std::vector<double> finetune(std::span<const data::LabeledSample> pool, model::ModelParams& params,
                             optim::AdamState& state, double lr, std::size_t epochs, std::size_t batch_size,
                             std::uint64_t seed, TrainingObserver* observer = nullptr);

/// Mean combined SmoothL1 over samples, single pass in the given order.
double evaluate_loss(const model::ModelParams& params, std::span<const data::LabeledSample> samples);
/// evaluate_loss in dB, floored at 1e-30 (-300 dB).
double evaluate(const model::ModelParams& params, std::span<const data::LabeledSample> samples);

struct RunReport {
    std::string metal;
    std::string init = "fresh";
    std::string init_checkpoint;
    std::size_t k = 0;
    std::size_t epochs_per_fold = 0;
    double stage1_lr = 0.0;
    double finetune_lr = 0.0;
    std::size_t finetune_epochs = 0;
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    std::size_t pool_size = 0;
    std::size_t test_size = 0;
    std::vector<std::size_t> fold_sizes;
    std::vector<double> per_fold_val_db;
    double initial_train_db = 0.0;
    double stage1_final_train_db = 0.0;
    double finetune_train_db = 0.0;
    double test_db = 0.0;
    std::vector<double> epoch_train_db;
    std::size_t epochs_run = 0;
    double wall_time = 0.0;
    std::string dataset_fingerprint;
};

nlohmann::ordered_json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);
void write_report(const RunReport& report, const std::filesystem::path& path);
RunReport read_report(const std::filesystem::path& path);

struct TrainResult {
    model::ModelParams params;
    optim::AdamState optimizer;
    RunReport report;
    std::size_t epochs_total = 0;  // including any epochs behind a transferred checkpoint
};

/// split -> normalize -> (init | transfer) -> k-fold -> fine-tune -> test evaluation.
TrainResult run_training(const data::Dataset& dataset, const TrainConfig& config,
                         TrainingObserver* observer = nullptr);

/// run_training starting from a source checkpoint: optimizer reset, normalization refit on the target pool.
TrainResult transfer(const std::filesystem::path& source_checkpoint, const data::Dataset& target,
                     TrainConfig config, TrainingObserver* observer = nullptr);

}  // namespace mimsur::training
