#include "quietroom/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "quietroom/error.hpp"

namespace quietroom::dsp {

namespace {

constexpr double kPhatFloor = 1e-12;

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwDeleter {
    void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwDeleter>;

template <typename T>
FftwBuffer<T> fftw_alloc(std::size_t n) {
    return FftwBuffer<T>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

// Plans live for the lifetime of the process, one pair per transform size.
const PlanPair& plans_for(int n) {
    static std::map<int, PlanPair> cache;
    std::lock_guard lock(planner_mutex());
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto real = fftw_alloc<double>(static_cast<std::size_t>(n));
    auto spec = fftw_alloc<fftw_complex>(static_cast<std::size_t>(n / 2 + 1));
    PlanPair p;
    p.forward = fftw_plan_dft_r2c_1d(n, real.get(), spec.get(), FFTW_ESTIMATE);
    p.inverse = fftw_plan_dft_c2r_1d(n, spec.get(), real.get(), FFTW_ESTIMATE);
    return cache.emplace(n, p).first->second;
}

bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

void MultichannelClip::validate() const {
    if (sample_rate <= 0) throw DataError("sample_rate must be positive");
    if (channels.empty()) throw DataError("clip has no channels");
    const auto n = channels.front().size();
    for (const auto& ch : channels) {
        if (ch.size() != n) throw DataError("channels differ in length");
        if (!all_finite(ch)) throw DataError("clip contains non-finite samples");
    }
}

void MonoClip::validate() const {
    if (sample_rate <= 0) throw DataError("sample_rate must be positive");
    if (samples.empty()) throw DataError("mono clip is empty");
    if (!all_finite(samples)) throw DataError("clip contains non-finite samples");
}

void SpectrogramConfig::validate() const {
    if (sample_rate <= 0) throw ConfigError("spectrogram: sample_rate must be positive");
    if (hop_len <= 0 || hop_len > window_len) throw ConfigError("spectrogram: need 0 < hop_len <= window_len");
    if (n_mels < 1) throw ConfigError("spectrogram: n_mels must be >= 1");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
        throw ConfigError("spectrogram: need 0 <= fmin < fmax <= sample_rate/2");
    if (!(log_floor > 0.0)) throw ConfigError("spectrogram: log_floor must be positive");
}

int SpectrogramConfig::fft_size() const {
    return static_cast<int>(std::bit_ceil(static_cast<unsigned>(window_len)));
}

std::size_t SpectrogramConfig::frame_count(std::size_t length) const {
    const auto win = static_cast<std::size_t>(window_len);
    if (length < win) return 0;
    return 1 + (length - win) / static_cast<std::size_t>(hop_len);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_centers(const SpectrogramConfig& config) {
    const double lo = hz_to_mel(config.fmin);
    const double hi = hz_to_mel(config.fmax);
    std::vector<double> centers(static_cast<std::size_t>(config.n_mels));
    for (int b = 0; b < config.n_mels; ++b)
        centers[static_cast<std::size_t>(b)] = mel_to_hz(lo + (hi - lo) * (b + 1) / (config.n_mels + 1));
    return centers;
}

int gcc_phat_tdoa(const MonoClip& reference, const MonoClip& other, int max_lag) {
    if (reference.samples.size() != other.samples.size())
        throw ConfigError("gcc_phat_tdoa: length mismatch");
    if (reference.sample_rate != other.sample_rate)
        throw ConfigError("gcc_phat_tdoa: sample rate mismatch");
    const auto len = reference.samples.size();
    if (max_lag < 0 || 2 * static_cast<std::size_t>(max_lag) >= len)
        throw ConfigError("gcc_phat_tdoa: max_lag must satisfy 0 <= max_lag < length/2");

    const int n = static_cast<int>(std::bit_ceil(2 * len));
    const auto bins = static_cast<std::size_t>(n / 2 + 1);
    const auto& plan = plans_for(n);

    auto time = fftw_alloc<double>(static_cast<std::size_t>(n));
    auto ref_spec = fftw_alloc<fftw_complex>(bins);
    auto oth_spec = fftw_alloc<fftw_complex>(bins);

    std::fill_n(time.get(), n, 0.0);
    std::copy(reference.samples.begin(), reference.samples.end(), time.get());
    fftw_execute_dft_r2c(plan.forward, time.get(), ref_spec.get());
    std::fill_n(time.get(), n, 0.0);
    std::copy(other.samples.begin(), other.samples.end(), time.get());
    fftw_execute_dft_r2c(plan.forward, time.get(), oth_spec.get());

    bool any_energy = false;
    for (std::size_t k = 0; k < bins; ++k) {
        const std::complex<double> x(ref_spec[k][0], ref_spec[k][1]);
        const std::complex<double> y(oth_spec[k][0], oth_spec[k][1]);
        std::complex<double> g = std::conj(x) * y;
        const double mag = std::abs(g);
        if (mag > kPhatFloor) any_energy = true;
        g /= std::max(mag, kPhatFloor);
        oth_spec[k][0] = g.real();
        oth_spec[k][1] = g.imag();
    }
    if (!any_energy) throw NoSignalError("gcc_phat_tdoa: inputs carry no signal");

    fftw_execute_dft_c2r(plan.inverse, oth_spec.get(), time.get());

    int best_lag = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int lag = -max_lag; lag <= max_lag; ++lag) {
        const double v = time[static_cast<std::size_t>(lag >= 0 ? lag : n + lag)];
        if (v > best) {
            best = v;
            best_lag = lag;
        }
    }
    return best_lag;
}

MonoClip beamform(const MultichannelClip& clip, std::span<const int> tdoas) {
    clip.validate();
    if (tdoas.size() != clip.channel_count()) throw ConfigError("beamform: one lag per channel required");
    const auto len = static_cast<std::ptrdiff_t>(clip.length());
    for (int lag : tdoas)
        if (std::abs(lag) >= len) throw ConfigError("beamform: |lag| must be below clip length");

    MonoClip out;
    out.sample_rate = clip.sample_rate;
    out.samples.assign(static_cast<std::size_t>(len), 0.0);
    for (std::size_t m = 0; m < clip.channel_count(); ++m) {
        const auto& ch = clip.channels[m];
        const std::ptrdiff_t lag = tdoas[m];
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -lag);
        const std::ptrdiff_t hi = std::min(len, len - lag);
        for (std::ptrdiff_t t = lo; t < hi; ++t)
            out.samples[static_cast<std::size_t>(t)] += ch[static_cast<std::size_t>(t + lag)];
    }
    const double inv = 1.0 / static_cast<double>(clip.channel_count());
    for (auto& v : out.samples) v *= inv;
    return out;
}

std::vector<int> estimate_tdoas(const MultichannelClip& clip, int max_lag) {
    clip.validate();
    std::vector<int> lags(clip.channel_count(), 0);
    MonoClip ref{clip.sample_rate, clip.channels[0]};
    for (std::size_t m = 1; m < clip.channel_count(); ++m) {
        MonoClip other{clip.sample_rate, clip.channels[m]};
        try {
            lags[m] = gcc_phat_tdoa(ref, other, max_lag);
        } catch (const NoSignalError&) {
            lags[m] = 0;
        }
    }
    return lags;
}

MonoClip decimate(const MonoClip& clip, int factor) {
    clip.validate();
    if (factor < 1) throw ConfigError("decimate: factor must be >= 1");
    if (factor == 1) return clip;
    const int half = 16 * factor;
    const double cutoff = 0.45 / factor;  // cycles/sample
    std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
    double sum = 0.0;
    for (int i = -half; i <= half; ++i) {
        const double x = 2.0 * cutoff * i;
        const double sinc = i == 0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
        const double hann = 0.5 * (1.0 + std::cos(std::numbers::pi * i / (half + 1)));
        taps[static_cast<std::size_t>(i + half)] = 2.0 * cutoff * sinc * hann;
        sum += taps[static_cast<std::size_t>(i + half)];
    }
    for (auto& t : taps) t /= sum;

    const auto n = static_cast<std::ptrdiff_t>(clip.samples.size());
    MonoClip out;
    out.sample_rate = clip.sample_rate / factor;
    for (std::ptrdiff_t c = 0; c < n; c += factor) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i) {
            const auto idx = c - i;
            if (idx >= 0 && idx < n) acc += taps[static_cast<std::size_t>(i + half)] * clip.samples[static_cast<std::size_t>(idx)];
        }
        out.samples.push_back(acc);
    }
    return out;
}

struct SpectrogramEngine::Impl {
    SpectrogramConfig config;
    int n_fft = 0;
    std::vector<double> window;
    Matrix filterbank;
    FftwBuffer<double> frame;
    FftwBuffer<fftw_complex> spectrum;
    const PlanPair* plan = nullptr;
    Eigen::VectorXd power;
};

SpectrogramEngine::SpectrogramEngine(const SpectrogramConfig& config) : impl_(std::make_unique<Impl>()) {
    config.validate();
    auto& s = *impl_;
    s.config = config;
    s.n_fft = config.fft_size();
    const auto bins = s.n_fft / 2 + 1;

    // Periodic Hann.
    s.window.resize(static_cast<std::size_t>(config.window_len));
    for (int i = 0; i < config.window_len; ++i)
        s.window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / config.window_len);

    // Triangles evaluated at each bin frequency, peak weight 1 at the band centre.
    const double mlo = hz_to_mel(config.fmin);
    const double mhi = hz_to_mel(config.fmax);
    std::vector<double> edges(static_cast<std::size_t>(config.n_mels + 2));
    for (int i = 0; i < config.n_mels + 2; ++i)
        edges[static_cast<std::size_t>(i)] = mel_to_hz(mlo + (mhi - mlo) * i / (config.n_mels + 1));
    s.filterbank = Matrix::Zero(config.n_mels, bins);
    for (int b = 0; b < config.n_mels; ++b) {
        const double lo = edges[static_cast<std::size_t>(b)];
        const double ctr = edges[static_cast<std::size_t>(b + 1)];
        const double hi = edges[static_cast<std::size_t>(b + 2)];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * config.sample_rate / s.n_fft;
            const double w = std::min((f - lo) / (ctr - lo), (hi - f) / (hi - ctr));
            if (w > 0.0) s.filterbank(b, k) = w;
        }
    }

    s.frame = fftw_alloc<double>(static_cast<std::size_t>(s.n_fft));
    s.spectrum = fftw_alloc<fftw_complex>(static_cast<std::size_t>(bins));
    s.plan = &plans_for(s.n_fft);
    s.power.resize(bins);
}

SpectrogramEngine::~SpectrogramEngine() = default;
SpectrogramEngine::SpectrogramEngine(SpectrogramEngine&&) noexcept = default;
SpectrogramEngine& SpectrogramEngine::operator=(SpectrogramEngine&&) noexcept = default;

const SpectrogramConfig& SpectrogramEngine::config() const { return impl_->config; }
const Matrix& SpectrogramEngine::filterbank() const { return impl_->filterbank; }

Spectrogram SpectrogramEngine::compute(std::span<const double> samples) {
    auto& s = *impl_;
    const auto& cfg = s.config;
    if (samples.size() < static_cast<std::size_t>(cfg.window_len))
        throw DataError("log_mel_spectrogram: clip shorter than one window");
    const auto frames = cfg.frame_count(samples.size());
    const auto bins = s.n_fft / 2 + 1;

    Spectrogram out;
    out.config = cfg;
    out.frames.resize(static_cast<Eigen::Index>(frames), cfg.n_mels);
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t start = f * static_cast<std::size_t>(cfg.hop_len);
        std::fill_n(s.frame.get(), s.n_fft, 0.0);
        for (int i = 0; i < cfg.window_len; ++i)
            s.frame[static_cast<std::size_t>(i)] = samples[start + static_cast<std::size_t>(i)] * s.window[static_cast<std::size_t>(i)];
        fftw_execute_dft_r2c(s.plan->forward, s.frame.get(), s.spectrum.get());
        for (int k = 0; k < bins; ++k)
            s.power[k] = s.spectrum[k][0] * s.spectrum[k][0] + s.spectrum[k][1] * s.spectrum[k][1];
        Eigen::VectorXd mel = s.filterbank * s.power;
        for (int b = 0; b < cfg.n_mels; ++b)
            out.frames(static_cast<Eigen::Index>(f), b) = std::log(mel[b] + cfg.log_floor);
    }
    return out;
}

Spectrogram log_mel_spectrogram(const MonoClip& clip, const SpectrogramConfig& config) {
    config.validate();
    if (clip.sample_rate != config.sample_rate)
        throw ConfigError("log_mel_spectrogram: clip sample rate differs from config");
    if (clip.samples.size() < static_cast<std::size_t>(config.window_len))
        throw DataError("log_mel_spectrogram: clip shorter than one window");
    clip.validate();
    SpectrogramEngine engine(config);
    return engine.compute(clip.samples);
}

}  // namespace quietroom::dsp
