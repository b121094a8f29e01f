#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "quietroom/dataset.hpp"
#include "quietroom/eval.hpp"
#include "quietroom/train.hpp"

namespace quietroom {

struct SplitResult {
    Regressor model;
    std::vector<double> loss_history;
    eval::AlignedSeries series;  // test predictions at their source seconds
    eval::MetricsReport metrics;
    eval::MetricsReport baseline;
    std::size_t train_windows = 0;
    std::size_t test_windows = 0;
    /// Audited reads of test-fold windows while assembling the training set.
    std::uint64_t test_reads_during_training = 0;
};

/// Trains on `train_folds` and evaluates on `test_folds`. The model config's
/// input width is taken from the dataset.
SplitResult train_and_evaluate(const data::Dataset& dataset, const std::vector<int>& train_folds,
                               const std::vector<int>& test_folds, ModelConfig model, const TrainConfig& train_config,
                               const DpContext* eval_dp = nullptr);

struct FoldReport {
    int fold = 0;
    std::size_t train_windows = 0;
    std::size_t test_windows = 0;
    eval::MetricsReport model;
    eval::MetricsReport baseline;
    std::uint64_t test_reads_during_training = 0;
    std::vector<double> loss_history;
};

struct CrossvalResult {
    std::vector<FoldReport> folds;
    eval::MetricsReport mean_model;
    eval::MetricsReport mean_baseline;
};

/// Leave-one-fold-out. Fold k trains with seed mix_seed(seed, 100 + k), so
/// results do not depend on `workers`. Throws DataError when a fold has no
/// windows or fewer than two folds exist.
CrossvalResult cross_validate(const data::Dataset& dataset, const ModelConfig& model, const TrainConfig& train_config,
                              int workers = 1, const std::function<void(const FoldReport&)>& on_fold = {});

struct SweepOptions {
    std::vector<double> epsilons{5, 2, 1, 0.5, 0.25, 0.1};
    double clip_bound = 1.0;
    /// Retrain per epsilon with noise in the loop; otherwise one clipped
    /// model is trained once and only evaluated under noise.
    bool noise_aware = true;
    /// Seed for the evaluation-time noise; unset draws from the system
    /// source. A seeded stream is reproducible and therefore not private.
    std::optional<std::uint64_t> eval_noise_seed;
};

struct SweepRow {
    double epsilon = 0.0;
    eval::MetricsReport metrics;
    /// Spend of the evaluation releases: test seconds x epsilon.
    double budget_spent = 0.0;
    std::vector<double> loss_history;
};

/// Utility of the privatized pipeline across privacy levels, on one split.
/// Every level uses the same training seed and, when seeded, the same
/// evaluation noise stream, so levels differ only in the noise scale.
std::vector<SweepRow> dp_sweep(const data::Dataset& dataset, const std::vector<int>& train_folds,
                               const std::vector<int>& test_folds, const ModelConfig& model,
                               const TrainConfig& train_config, const SweepOptions& options,
                               const std::function<void(const SweepRow&)>& on_row = {});

nlohmann::json to_json(const SweepRow& row);
std::string format_sweep_table(const std::vector<SweepRow>& rows);

nlohmann::json to_json(const FoldReport& report);
nlohmann::json to_json(const CrossvalResult& result);

}  // namespace quietroom
