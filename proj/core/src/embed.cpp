#include "quietroom/embed.hpp"

#include <cmath>

#include "quietroom/error.hpp"
#include "quietroom/random.hpp"

namespace quietroom::embed {

std::string to_string(EncoderKind kind) { return kind == EncoderKind::Frozen ? "frozen" : "trainable"; }

EncoderKind encoder_from_string(const std::string& name) {
    if (name == "frozen") return EncoderKind::Frozen;
    if (name == "trainable") return EncoderKind::Trainable;
    throw ConfigError("unknown encoder '" + name + "' (expected frozen or trainable)");
}

FrozenEncoder::FrozenEncoder(int n_mels, int dim, std::uint64_t seed) : n_mels_(n_mels) {
    if (n_mels < 1 || dim < 1) throw ConfigError("frozen encoder: sizes must be positive");
    const int in = 4 * n_mels;
    projection_.resize(dim, in);
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index k = 0; k < projection_.size(); ++k) projection_.data()[k] = scale * rng.normal();
}

Vector FrozenEncoder::features(const Matrix& frames) const {
    if (frames.cols() != n_mels_ || frames.rows() < 1)
        throw DataError("frozen encoder: expected frames x " + std::to_string(n_mels_) + " input");
    const auto t = static_cast<double>(frames.rows());
    Vector out(4 * n_mels_);
    for (int b = 0; b < n_mels_; ++b) {
        const auto col = frames.col(b);
        const double mean = col.mean();
        const double var = (col.array() - mean).square().sum() / t;
        double delta = 0.0;
        for (Eigen::Index i = 1; i < frames.rows(); ++i) delta += std::abs(col(i) - col(i - 1));
        if (frames.rows() > 1) delta /= t - 1.0;
        out(b) = mean;
        out(n_mels_ + b) = std::sqrt(var);
        out(2 * n_mels_ + b) = col.maxCoeff();
        out(3 * n_mels_ + b) = delta;
    }
    return out;
}

Vector FrozenEncoder::embed(const dsp::Spectrogram& chunk) const { return project(features(chunk.frames)); }

int pooled_height(const dsp::SpectrogramConfig& config, PoolSpec pool) {
    return static_cast<int>(config.frames_per_second()) / pool.frame_pool;
}

int pooled_width(const dsp::SpectrogramConfig& config, PoolSpec pool) { return config.n_mels / pool.mel_pool; }

Vector pooled_input(const dsp::Spectrogram& chunk, PoolSpec pool) {
    if (pool.frame_pool < 1 || pool.mel_pool < 1) throw ConfigError("pooling factors must be >= 1");
    const auto h = static_cast<int>(chunk.frames.rows()) / pool.frame_pool;
    const auto w = static_cast<int>(chunk.frames.cols()) / pool.mel_pool;
    if (h < 1 || w < 1) throw DataError("spectrogram smaller than one pooling cell");
    Vector out(h * w);
    const double inv = 1.0 / (pool.frame_pool * pool.mel_pool);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            out(i * w + j) = chunk.frames.block(i * pool.frame_pool, j * pool.mel_pool, pool.frame_pool, pool.mel_pool).sum() * inv;
    return out;
}

Vector append_probability(const Vector& e, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("append_probability: p must lie in [0, 1]");
    Vector out(e.size() + 1);
    out.head(e.size()) = e;
    out(e.size()) = p;
    return out;
}

double l1_norm(const Eigen::Ref<const Eigen::RowVectorXd>& e) { return e.cwiseAbs().sum(); }

namespace {

// Scales v onto the L1 ball. The factor is nudged down until the rounded
// result really is inside, which also makes clipping idempotent.
template <typename V>
void scale_into_ball(V&& v, double clip_bound) {
    const double n = v.cwiseAbs().sum();
    if (n <= clip_bound) return;
    double s = clip_bound / n;
    const auto original = v.eval();
    v = original * s;
    while (v.cwiseAbs().sum() > clip_bound) {
        s = std::nextafter(s, 0.0);
        v = original * s;
    }
}

}  // namespace

Vector clip_embedding(const Vector& e, double clip_bound) {
    if (!(clip_bound > 0.0)) throw ConfigError("clip bound must be positive");
    if (!e.allFinite()) throw DataError("clip_embedding: non-finite input");
    Vector out = e;
    scale_into_ball(out, clip_bound);
    return out;
}

void clip_rows(Matrix& rows, double clip_bound) {
    if (!(clip_bound > 0.0)) throw ConfigError("clip bound must be positive");
    if (!rows.allFinite()) throw DataError("clip_rows: non-finite input");
    for (Eigen::Index i = 0; i < rows.rows(); ++i) scale_into_ball(rows.row(i), clip_bound);
}

Eigen::RowVectorXd clip_backward(const Eigen::Ref<const Eigen::RowVectorXd>& e,
                                 const Eigen::Ref<const Eigen::RowVectorXd>& dout, double clip_bound) {
    const double n = e.cwiseAbs().sum();
    if (n <= clip_bound) return dout;
    // out = C e / n, dn/de = sign(e)
    const double dot = dout.dot(e);
    return (clip_bound / n) * dout - (clip_bound * dot / (n * n)) * e.array().sign().matrix();
}

}  // namespace quietroom::embed
