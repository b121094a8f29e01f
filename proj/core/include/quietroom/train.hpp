#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "quietroom/adam.hpp"
#include "quietroom/eval.hpp"
#include "quietroom/privacy.hpp"
#include "quietroom/regressor.hpp"

namespace quietroom {

/// One transformer input window with its per-position truth.
struct TrainWindow {
    Matrix rows;                          // T x input_dim
    std::vector<double> probs;            // speech probability per position
    std::vector<std::uint8_t> mask;       // 0 = zeroed for speech (Scheme 2)
    std::vector<std::int64_t> seconds;    // source second per position
    Vector target;                        // occupancy per position
    int fold = 0;

    std::size_t size() const { return seconds.size(); }
    WindowInput input() const { return {&rows, &probs, &mask}; }
};

struct TrainConfig {
    int epochs = 30;
    AdamConfig adam;
    std::uint64_t seed = 1;
    /// Noise-aware training: clip and add Laplace noise at this level.
    std::optional<privacy::PrivacyParams> dp;
    bool fit_scaler = true;
    bool init_bias_to_mean = true;
    std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
    Regressor model;
    std::vector<double> loss_history;  // mean window loss per epoch
};

/// Column mean and inverse standard deviation over unmasked rows.
std::pair<Vector, Vector> fit_input_scaler(std::span<const TrainWindow* const> windows);

/// One window per Adam step, order reshuffled every epoch from the seed.
/// Throws DataError for an empty dataset and NumericalFault on divergence.
TrainResult train(ModelConfig config, std::span<const TrainWindow* const> windows, const TrainConfig& train_config);

/// Predictions re-aligned to source seconds, paired with window targets.
eval::AlignedSeries predict_aligned(const Regressor& model, std::span<const TrainWindow* const> windows,
                                    const DpContext* dp = nullptr);

}  // namespace quietroom
