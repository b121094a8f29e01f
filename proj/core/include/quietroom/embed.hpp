#pragma once

// Per-second embeddings: the frozen feature-projection encoder, the pooled
// input consumed by the trainable CNN, probability appending and L1 clipping.

#include <cstdint>
#include <string>

#include "quietroom/dsp.hpp"

namespace quietroom::embed {

enum class EncoderKind { Frozen, Trainable };

std::string to_string(EncoderKind kind);
EncoderKind encoder_from_string(const std::string& name);

constexpr int kFrozenDim = 512;
constexpr int kTrainableDim = 128;
constexpr std::uint64_t kFrozenSeed = 0x51524f5a454e3031ULL;  // "QROZEN01"

/// Untrainable encoder: per-mel mean, std, max and mean |frame delta|
/// (4 * n_mels features) projected by a seeded Gaussian matrix.
class FrozenEncoder {
public:
    explicit FrozenEncoder(int n_mels = 64, int dim = kFrozenDim, std::uint64_t seed = kFrozenSeed);

    int n_mels() const { return n_mels_; }
    int feature_dim() const { return 4 * n_mels_; }
    int dim() const { return static_cast<int>(projection_.rows()); }

    /// Summary statistics of a frames x n_mels matrix.
    Vector features(const Matrix& frames) const;
    Vector project(const Vector& features) const { return projection_ * features; }
    Vector embed(const dsp::Spectrogram& chunk) const;

    /// dim x feature_dim, entries N(0, 1/feature_dim).
    const Matrix& projection() const { return projection_; }

private:
    int n_mels_;
    Matrix projection_;
};

struct PoolSpec {
    int frame_pool = 8;
    int mel_pool = 4;
};

/// Average-pooled spectrogram fed to the trainable encoder, flattened
/// row-major as (frames / frame_pool) x (n_mels / mel_pool). Trailing
/// frames and mel bands that do not fill a pool cell are dropped.
Vector pooled_input(const dsp::Spectrogram& chunk, PoolSpec pool = {});
int pooled_height(const dsp::SpectrogramConfig& config, PoolSpec pool = {});
int pooled_width(const dsp::SpectrogramConfig& config, PoolSpec pool = {});

/// [e, p]. Throws ConfigError unless 0 <= p <= 1.
Vector append_probability(const Vector& e, double p);

double l1_norm(const Eigen::Ref<const Eigen::RowVectorXd>& e);

/// e / max(1, |e|_1 / C). Throws DataError for non-finite e, ConfigError for C <= 0.
Vector clip_embedding(const Vector& e, double clip_bound);

/// Clips every row of `rows` in place.
void clip_rows(Matrix& rows, double clip_bound);

/// Gradient of the clip with respect to its input, given the upstream
/// gradient `dout`, for one row.
Eigen::RowVectorXd clip_backward(const Eigen::Ref<const Eigen::RowVectorXd>& e,
                                 const Eigen::Ref<const Eigen::RowVectorXd>& dout, double clip_bound);

}  // namespace quietroom::embed
