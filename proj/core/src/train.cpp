#include "quietroom/train.hpp"

#include <cmath>
#include <numeric>

#include "quietroom/error.hpp"
#include "quietroom/random.hpp"

namespace quietroom {

std::pair<Vector, Vector> fit_input_scaler(std::span<const TrainWindow* const> windows) {
    if (windows.empty()) throw DataError("cannot fit an input scaler on no windows");
    const auto cols = windows.front()->rows.cols();
    Vector sum = Vector::Zero(cols), sq = Vector::Zero(cols);
    double n = 0.0;
    for (const auto* w : windows) {
        for (Eigen::Index i = 0; i < w->rows.rows(); ++i) {
            if (!w->mask.empty() && w->mask[static_cast<std::size_t>(i)] == 0) continue;
            sum += w->rows.row(i).transpose();
            sq += w->rows.row(i).transpose().cwiseAbs2();
            n += 1.0;
        }
    }
    if (n == 0.0) return {Vector::Zero(cols), Vector::Ones(cols)};
    Vector mean = sum / n;
    Vector var = (sq / n - mean.cwiseAbs2()).cwiseMax(0.0);
    Vector inv = var.cwiseSqrt().cwiseMax(1e-8).cwiseInverse();
    return {mean, inv};
}

TrainResult train(ModelConfig config, std::span<const TrainWindow* const> windows, const TrainConfig& tc) {
    if (windows.empty()) throw DataError("train: empty dataset");
    if (tc.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (tc.dp) {
        tc.dp->validate();
        config.clip_bound = tc.dp->clip_bound;
    }
    Regressor model(config, mix_seed(tc.seed, 1));
    if (tc.fit_scaler) {
        auto [mean, inv] = fit_input_scaler(windows);
        model.set_input_scaler(std::move(mean), std::move(inv));
    }
    if (tc.init_bias_to_mean) {
        double sum = 0.0, n = 0.0;
        for (const auto* w : windows) {
            sum += w->target.sum();
            n += static_cast<double>(w->target.size());
        }
        model.set_output_bias(sum / n);
    }

    Adam adam(model.params(), tc.adam);
    Rng shuffle(mix_seed(tc.seed, 2));
    auto noise = privacy::NoiseSource::seeded(mix_seed(tc.seed, 3));
    privacy::PrivacyLedger scratch;
    std::optional<DpContext> dp;
    if (tc.dp) dp = DpContext{*tc.dp, &noise, &scratch};

    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    Parameters grads = model.params().zeros_like();
    std::vector<double> history;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        double total = 0.0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const auto& w = *windows[order[step]];
            Regressor::Cache cache;
            const Vector pred = model.forward(w.input(), dp ? &*dp : nullptr, &cache);
            const double loss = mse_loss(pred, w.target);
            if (!std::isfinite(loss))
                throw NumericalFault("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                     std::to_string(step + 1));
            grads.set_zero();
            model.backward(cache, mse_gradient(pred, w.target), grads);
            if (!grads.all_finite())
                throw NumericalFault("training diverged: non-finite gradient at epoch " + std::to_string(epoch + 1) +
                                     ", step " + std::to_string(step + 1));
            adam.step(model.params(), grads);
            total += loss;
        }
        history.push_back(total / static_cast<double>(order.size()));
        if (tc.on_epoch) tc.on_epoch(epoch + 1, history.back());
    }
    return {std::move(model), std::move(history)};
}

eval::AlignedSeries predict_aligned(const Regressor& model, std::span<const TrainWindow* const> windows, const DpContext* dp) {
    eval::AlignedSeries out;
    for (const auto* w : windows) {
        const Vector pred = model.forward(w->input(), dp);
        for (std::size_t i = 0; i < w->size(); ++i)
            out.push(w->seconds[i], pred(static_cast<Eigen::Index>(i)), w->target(static_cast<Eigen::Index>(i)));
    }
    return out;
}

}  // namespace quietroom
