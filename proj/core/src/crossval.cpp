#include "quietroom/crossval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <optional>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "quietroom/error.hpp"
#include "quietroom/random.hpp"

namespace quietroom {

SplitResult train_and_evaluate(const data::Dataset& dataset, const std::vector<int>& train_folds,
                               const std::vector<int>& test_folds, ModelConfig model, const TrainConfig& train_config,
                               const DpContext* eval_dp) {
    for (int f : train_folds)
        for (int g : test_folds)
            if (f == g) throw ConfigError("fold " + std::to_string(f) + " is in both the training and the test set");

    std::vector<const TrainWindow*> train_set;
    std::uint64_t test_reads = 0;
    for (auto i : dataset.indices_in_folds(train_folds)) {
        const auto& w = dataset.fetch(i);
        for (int g : test_folds)
            if (w.fold == g) ++test_reads;
        train_set.push_back(&w);
    }
    if (train_set.empty()) throw DataError("training folds contain no windows");
    std::vector<const TrainWindow*> test_set;
    for (auto i : dataset.indices_in_folds(test_folds)) test_set.push_back(&dataset.fetch(i));
    if (test_set.empty()) throw DataError("test folds contain no windows");

    const auto& cfg = dataset.config();
    model.encoder = cfg.encoder;
    model.append_prob = cfg.scheme == 2;
    if (cfg.encoder == embed::EncoderKind::Trainable) {
        const auto spec = cfg.cnn_spec();
        model.cnn.height = spec.height;
        model.cnn.width = spec.width;
    } else {
        model.frozen_mels = cfg.spectrogram.n_mels;
    }

    auto trained = train(model, train_set, train_config);
    SplitResult r{std::move(trained.model), std::move(trained.loss_history), {}, {}, {}, train_set.size(), test_set.size(),
                  test_reads};
    r.series = predict_aligned(r.model, test_set, eval_dp);
    r.metrics = eval::compute_metrics(r.series.pred, r.series.truth);
    std::vector<double> train_truth;
    for (const auto* w : train_set) train_truth.insert(train_truth.end(), w->target.data(), w->target.data() + w->target.size());
    r.baseline = eval::baseline_mean(train_truth, r.series.truth);
    return r;
}

CrossvalResult cross_validate(const data::Dataset& dataset, const ModelConfig& model, const TrainConfig& train_config,
                              int workers, const std::function<void(const FoldReport&)>& on_fold) {
    const int k = dataset.folds();
    if (k < 2) throw DataError("cross-validation needs at least two folds");
    for (int f = 0; f < k; ++f)
        if (dataset.indices_in_fold(f).empty()) throw DataError("fold " + std::to_string(f) + " has no windows");

    std::vector<FoldReport> reports(static_cast<std::size_t>(k));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));
    std::atomic<int> next{0};
    std::mutex callback_mutex;
    auto run = [&] {
        for (int f = next++; f < k; f = next++) {
            try {
                std::vector<int> rest;
                for (int g = 0; g < k; ++g)
                    if (g != f) rest.push_back(g);
                TrainConfig tc = train_config;
                tc.seed = mix_seed(train_config.seed, 100 + static_cast<std::uint64_t>(f));
                tc.on_epoch = nullptr;
                auto r = train_and_evaluate(dataset, rest, {f}, model, tc);
                auto& rep = reports[static_cast<std::size_t>(f)];
                rep = {f, r.train_windows, r.test_windows, r.metrics, r.baseline, r.test_reads_during_training,
                       std::move(r.loss_history)};
                if (on_fold) {
                    std::lock_guard lock(callback_mutex);
                    on_fold(rep);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(f)] = std::current_exception();
            }
        }
    };
    workers = std::clamp(workers, 1, k);
    if (workers == 1) {
        run();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    CrossvalResult out;
    out.folds = std::move(reports);
    for (const auto& r : out.folds) {
        out.mean_model.mae += r.model.mae / k;
        out.mean_model.rmse += r.model.rmse / k;
        out.mean_model.rho += r.model.rho / k;
        out.mean_model.count += r.model.count;
        out.mean_baseline.mae += r.baseline.mae / k;
        out.mean_baseline.rmse += r.baseline.rmse / k;
        out.mean_baseline.rho += r.baseline.rho / k;
        out.mean_baseline.count += r.baseline.count;
    }
    return out;
}

std::vector<SweepRow> dp_sweep(const data::Dataset& dataset, const std::vector<int>& train_folds,
                               const std::vector<int>& test_folds, const ModelConfig& model,
                               const TrainConfig& train_config, const SweepOptions& options,
                               const std::function<void(const SweepRow&)>& on_row) {
    if (options.epsilons.empty()) throw ConfigError("dp sweep: no epsilon values");
    for (double eps : options.epsilons) privacy::PrivacyParams{options.clip_bound, eps}.validate();

    std::optional<SplitResult> shared;
    if (!options.noise_aware) {
        ModelConfig clipped = model;
        clipped.clip_bound = options.clip_bound;
        TrainConfig tc = train_config;
        tc.dp.reset();
        shared = train_and_evaluate(dataset, train_folds, test_folds, clipped, tc);
    }

    std::vector<SweepRow> rows;
    for (double eps : options.epsilons) {
        const privacy::PrivacyParams params{options.clip_bound, eps};
        auto source = options.eval_noise_seed ? privacy::NoiseSource::seeded(*options.eval_noise_seed)
                                              : privacy::NoiseSource::system();
        privacy::PrivacyLedger ledger;
        const DpContext ctx{params, &source, &ledger};
        SweepRow row;
        row.epsilon = eps;
        if (options.noise_aware) {
            TrainConfig tc = train_config;
            tc.dp = params;
            auto r = train_and_evaluate(dataset, train_folds, test_folds, model, tc, &ctx);
            row.metrics = r.metrics;
            row.loss_history = std::move(r.loss_history);
        } else {
            std::vector<const TrainWindow*> test_set;
            for (auto i : dataset.indices_in_folds(test_folds)) test_set.push_back(&dataset.fetch(i));
            const auto series = predict_aligned(shared->model, test_set, &ctx);
            row.metrics = eval::compute_metrics(series.pred, series.truth);
            row.loss_history = shared->loss_history;
        }
        row.budget_spent = ledger.total_spent();
        if (on_row) on_row(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json to_json(const SweepRow& row) {
    return {{"epsilon", row.epsilon},
            {"metrics", eval::to_json(row.metrics)},
            {"budget_spent", row.budget_spent},
            {"loss_history", row.loss_history}};
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
    std::string out = "epsilon      MAE     RMSE      rho\n";
    char line[96];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%7g %8.3f %8.3f %8.3f\n", r.epsilon, r.metrics.mae, r.metrics.rmse, r.metrics.rho);
        out += line;
    }
    return out;
}

nlohmann::json to_json(const FoldReport& r) {
    return {{"fold", r.fold},
            {"train_windows", r.train_windows},
            {"test_windows", r.test_windows},
            {"model", eval::to_json(r.model)},
            {"baseline", eval::to_json(r.baseline)},
            {"test_reads_during_training", r.test_reads_during_training},
            {"loss_history", r.loss_history}};
}

nlohmann::json to_json(const CrossvalResult& result) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : result.folds) folds.push_back(to_json(f));
    return {{"folds", folds}, {"mean_model", eval::to_json(result.mean_model)}, {"mean_baseline", eval::to_json(result.mean_baseline)}};
}

}  // namespace quietroom
