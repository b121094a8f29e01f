#pragma once

// Multichannel front-end: GCC-PHAT delay estimation, delay-and-sum
// beamforming and per-second log-mel spectrograms.

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "quietroom/matrix_io.hpp"

namespace quietroom::dsp {

struct MultichannelClip {
    int sample_rate = 16000;
    std::vector<std::vector<double>> channels;

    std::size_t channel_count() const { return channels.size(); }
    std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }

    /// Throws DataError unless channels are non-empty, equal length and finite.
    void validate() const;
};

struct MonoClip {
    int sample_rate = 16000;
    std::vector<double> samples;

    void validate() const;
};

struct SpectrogramConfig {
    int sample_rate = 16000;
    int window_len = 400;  // 25 ms
    int hop_len = 160;     // 10 ms
    int n_mels = 64;
    double fmin = 60.0;
    double fmax = 7800.0;
    double log_floor = 1e-10;

    void validate() const;
    /// Zero-padded FFT size: the next power of two >= window_len.
    int fft_size() const;
    /// 1 + floor((length - window_len) / hop_len); 0 when length < window_len.
    std::size_t frame_count(std::size_t length) const;
    /// Frames in exactly one second of audio.
    std::size_t frames_per_second() const { return frame_count(static_cast<std::size_t>(sample_rate)); }
};

struct Spectrogram {
    Matrix frames;  // frames x n_mels, log(energy + log_floor)
    SpectrogramConfig config;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Centre frequency in Hz of every mel band (n_mels entries).
std::vector<double> mel_band_centers(const SpectrogramConfig& config);

/// Integer lag (samples) maximising the PHAT-weighted cross-correlation over
/// [-max_lag, max_lag]. Positive means `other` lags `reference`.
int gcc_phat_tdoa(const MonoClip& reference, const MonoClip& other, int max_lag);

/// Delay-and-sum: channel m is advanced by tdoas[m] (zero-padded at the
/// edges) and all channels are averaged. Output length equals input length.
MonoClip beamform(const MultichannelClip& clip, std::span<const int> tdoas);

/// Lags of every channel relative to channel 0. Channels without energy get 0.
std::vector<int> estimate_tdoas(const MultichannelClip& clip, int max_lag);

/// Keeps every `factor`-th sample after a windowed-sinc anti-alias filter.
MonoClip decimate(const MonoClip& clip, int factor);

/// Reusable log-mel front-end. Holds an FFT plan and scratch buffers, so one
/// instance must not be shared between threads; separate instances are fine.
class SpectrogramEngine {
public:
    explicit SpectrogramEngine(const SpectrogramConfig& config);
    ~SpectrogramEngine();
    SpectrogramEngine(const SpectrogramEngine&) = delete;
    SpectrogramEngine& operator=(const SpectrogramEngine&) = delete;
    SpectrogramEngine(SpectrogramEngine&&) noexcept;
    SpectrogramEngine& operator=(SpectrogramEngine&&) noexcept;

    const SpectrogramConfig& config() const;
    Spectrogram compute(std::span<const double> samples);

    /// Triangular filterbank, n_mels x (fft_size/2 + 1).
    const Matrix& filterbank() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

Spectrogram log_mel_spectrogram(const MonoClip& clip, const SpectrogramConfig& config);

}  // namespace quietroom::dsp
