#include <algorithm>
#include <cmath>
#include <numbers>

#include "quietroom/error.hpp"
#include "quietroom/synth.hpp"

namespace quietroom::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Unit-variance uniform white noise straight from the raw generator bits;
// far cheaper than Box-Muller at audio rate.
inline double white(Rng& rng) {
    return (static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * 1.7320508075688772;
}

struct OnePole {
    double a = 0.0;
    double state = 0.0;
    static OnePole lowpass(double cutoff, int sr) { return {std::exp(-kTwoPi * cutoff / sr), 0.0}; }
    double lp(double x) { return state = (1.0 - a) * x + a * state; }
    double hp(double x) { return x - lp(x); }
};

struct BandNoise {
    OnePole low;
    OnePole high;
    double process(Rng& rng) { return high.hp(low.lp(white(rng))); }
};

struct Pink {
    double b0 = 0.0, b1 = 0.0, b2 = 0.0;
    double process(double w) {
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        return b0 + b1 + b2 + w * 0.1848;
    }
};

// RMS of a filter's response to unit white noise, measured once per sample
// rate so that source levels are specified as output RMS.
double measured_rms(int sr, double lo, double hi) {
    Rng rng(12345);
    BandNoise f{OnePole::lowpass(hi, sr), OnePole::lowpass(lo, sr)};
    double acc = 0.0;
    const int n = 4 * sr;
    for (int i = 0; i < sr / 4; ++i) f.process(rng);
    for (int i = 0; i < n; ++i) {
        const double v = f.process(rng);
        acc += v * v;
    }
    return std::sqrt(acc / n);
}

double pink_rms() {
    Rng rng(54321);
    Pink p;
    double acc = 0.0;
    const int n = 200000;
    for (int i = 0; i < 20000; ++i) p.process(white(rng));
    for (int i = 0; i < n; ++i) {
        const double v = p.process(white(rng));
        acc += v * v;
    }
    return std::sqrt(acc / n);
}

struct ActiveSource {
    SoundSource spec;
    std::vector<int> delays;
    std::vector<double> gains;
    Rng rng{0};
    BandNoise band;
    Pink pink;
    double norm = 1.0;
    double envelope = 1.0;
    double env_target = 1.0;
    double phase = 0.0;
    double am_phase = 0.0;
    int harmonics = 1;
    std::vector<double> weights;

    bool finished(std::int64_t t) const { return t >= spec.start_sample + spec.length; }
};

}  // namespace

struct AudioRenderer::Impl {
    ScenarioConfig config;
    RenderPlan plan;
    std::size_t next_source = 0;
    std::vector<ActiveSource> active;
    std::int64_t position = 0;
    std::int64_t total = 0;
    int max_delay = 0;
    std::vector<std::vector<double>> pending;  // carry-over from delayed arrivals
    std::vector<double> scratch;

    double rustle_rms = 1.0;
    double cough_rms = 1.0;
    double hvac_rms = 1.0;

    void activate(const SoundSource& s) {
        ActiveSource a;
        a.spec = s;
        a.rng = Rng(s.seed);
        a.delays = propagation_delays(s.position, config.mics, config.sample_rate);
        for (const auto& m : config.mics) {
            const double dx = s.position[0] - m[0], dy = s.position[1] - m[1], dz = s.position[2] - m[2];
            a.gains.push_back(1.0 / std::max(std::sqrt(dx * dx + dy * dy + dz * dz), 0.5));
        }
        const int sr = config.sample_rate;
        switch (s.kind) {
            case SoundSource::Kind::Rustle:
                a.band = {OnePole::lowpass(3000.0, sr), OnePole::lowpass(150.0, sr)};
                a.norm = 1.0 / rustle_rms;
                a.envelope = a.env_target = 1.0;
                break;
            case SoundSource::Kind::Cough:
                a.band = {OnePole::lowpass(2500.0, sr), OnePole::lowpass(300.0, sr)};
                a.norm = 1.0 / cough_rms;
                break;
            case SoundSource::Kind::Hvac:
                a.norm = 1.0 / hvac_rms;
                break;
            case SoundSource::Kind::Speech: {
                a.harmonics = std::max(1, static_cast<int>(3500.0 / s.pitch));
                double power = 0.0;
                for (int k = 1; k <= a.harmonics; ++k) {
                    a.weights.push_back(std::pow(k, -0.8));
                    power += 0.5 * a.weights.back() * a.weights.back();
                }
                // Mean-square of the 4 Hz envelope 0.15 + 0.85 * (0.5 + 0.5 sin).
                const double env_ms = 0.575 * 0.575 + 0.5 * 0.425 * 0.425;
                a.norm = 1.0 / std::sqrt(power * env_ms);
                a.am_phase = a.rng.uniform(0.0, kTwoPi);
                break;
            }
            case SoundSource::Kind::Footsteps:
                break;
        }
        active.push_back(std::move(a));
    }

    double sample(ActiveSource& a, std::int64_t t) {
        const int sr = config.sample_rate;
        const auto local = t - a.spec.start_sample;
        const double tl = static_cast<double>(local) / sr;
        switch (a.spec.kind) {
            case SoundSource::Kind::Hvac:
                return a.spec.level * a.norm * a.pink.process(white(a.rng));
            case SoundSource::Kind::Rustle: {
                // Slowly wandering loudness: new target every 500 ms.
                if (local % (sr / 2) == 0) a.env_target = std::exp(0.6 * (a.rng.uniform() - 0.5) * 2.0);
                a.envelope += 0.0002 * (a.env_target - a.envelope);
                return a.spec.level * a.norm * a.envelope * a.band.process(a.rng);
            }
            case SoundSource::Kind::Cough: {
                const double len = static_cast<double>(a.spec.length) / sr;
                const double attack = std::min(1.0, tl / 0.02);
                const double decay = std::exp(-tl / (len / 3.0));
                return a.spec.level * a.norm * attack * decay * 2.0 * a.band.process(a.rng);
            }
            case SoundSource::Kind::Footsteps: {
                const double period = 1.0 / a.spec.pitch;
                const double in_step = std::fmod(tl, period);
                if (in_step > 0.06) return 0.0;
                const double env = std::exp(-in_step / 0.015);
                const double thump = std::sin(kTwoPi * 80.0 * in_step);
                return a.spec.level * env * (0.7 * thump + 0.5 * white(a.rng));
            }
            case SoundSource::Kind::Speech: {
                const double f0 = a.spec.pitch * (1.0 + 0.03 * std::sin(kTwoPi * 0.7 * tl));
                a.phase += kTwoPi * f0 / sr;
                if (a.phase > kTwoPi) a.phase -= kTwoPi;
                // sin(k*phase) by the Chebyshev recurrence.
                const double s1 = std::sin(a.phase);
                const double c2 = 2.0 * std::cos(a.phase);
                double prev = 0.0, cur = s1, acc = 0.0;
                for (int k = 0; k < a.harmonics; ++k) {
                    acc += cur * a.weights[static_cast<std::size_t>(k)];
                    const double next = c2 * cur - prev;
                    prev = cur;
                    cur = next;
                }
                const double am = 0.15 + 0.85 * (0.5 + 0.5 * std::sin(kTwoPi * 4.0 * tl + a.am_phase));
                const double len = static_cast<double>(a.spec.length) / sr;
                const double ramp = std::min({1.0, tl / 0.02, (len - tl) / 0.02});
                return a.spec.level * a.norm * am * std::max(ramp, 0.0) * acc;
            }
        }
        return 0.0;
    }
};

AudioRenderer::AudioRenderer(RenderPlan plan, const ScenarioConfig& config) : impl_(std::make_unique<Impl>()) {
    config.validate();
    auto& s = *impl_;
    s.config = config;
    s.plan = std::move(plan);
    s.total = config.duration_s * config.sample_rate;
    const double diag = std::sqrt(config.room[0] * config.room[0] + config.room[1] * config.room[1] +
                                  config.room[2] * config.room[2]);
    s.max_delay = static_cast<int>(std::ceil(2.0 * diag / kSpeedOfSound * config.sample_rate)) + 2;
    for (const auto& src : s.plan.sources)
        for (int d : propagation_delays(src.position, config.mics, config.sample_rate))
            s.max_delay = std::max(s.max_delay, d + 1);
    s.pending.assign(config.mics.size(), std::vector<double>(static_cast<std::size_t>(s.max_delay), 0.0));
    s.rustle_rms = measured_rms(config.sample_rate, 150.0, 3000.0);
    s.cough_rms = measured_rms(config.sample_rate, 300.0, 2500.0);
    s.hvac_rms = pink_rms();
}

AudioRenderer::~AudioRenderer() = default;
AudioRenderer::AudioRenderer(AudioRenderer&&) noexcept = default;
AudioRenderer& AudioRenderer::operator=(AudioRenderer&&) noexcept = default;

std::int64_t AudioRenderer::total_samples() const { return impl_->total; }
std::int64_t AudioRenderer::position() const { return impl_->position; }
const std::vector<std::uint8_t>& AudioRenderer::speech_labels() const { return impl_->plan.speech_labels; }

dsp::MultichannelClip AudioRenderer::next(std::int64_t frames) {
    auto& s = *impl_;
    frames = std::clamp<std::int64_t>(frames, 0, s.total - s.position);
    const auto n = static_cast<std::size_t>(frames);
    const auto mics = s.config.mics.size();
    const auto span = n + static_cast<std::size_t>(s.max_delay);

    std::vector<std::vector<double>> acc(mics, std::vector<double>(span, 0.0));
    for (std::size_t m = 0; m < mics; ++m)
        std::copy(s.pending[m].begin(), s.pending[m].end(), acc[m].begin());

    const auto block_end = s.position + frames;
    while (s.next_source < s.plan.sources.size() && s.plan.sources[s.next_source].start_sample < block_end)
        s.activate(s.plan.sources[s.next_source++]);

    for (auto& a : s.active) {
        const auto lo = std::max(s.position, a.spec.start_sample);
        const auto hi = std::min(block_end, a.spec.start_sample + a.spec.length);
        if (hi <= lo) continue;
        s.scratch.resize(static_cast<std::size_t>(hi - lo));
        for (auto t = lo; t < hi; ++t) s.scratch[static_cast<std::size_t>(t - lo)] = s.sample(a, t);
        for (std::size_t m = 0; m < mics; ++m) {
            const double g = a.gains[m];
            double* dst = acc[m].data() + (lo - s.position) + a.delays[m];
            for (std::size_t i = 0; i < s.scratch.size(); ++i) dst[i] += g * s.scratch[i];
        }
    }
    std::erase_if(s.active, [&](const ActiveSource& a) { return a.finished(block_end); });

    dsp::MultichannelClip out;
    out.sample_rate = s.config.sample_rate;
    out.channels.resize(mics);
    for (std::size_t m = 0; m < mics; ++m) {
        out.channels[m].resize(n);
        for (std::size_t i = 0; i < n; ++i) out.channels[m][i] = std::clamp(acc[m][i], -1.0, 1.0);
        std::copy(acc[m].begin() + static_cast<std::ptrdiff_t>(n), acc[m].end(), s.pending[m].begin());
    }
    s.position = block_end;
    return out;
}

}  // namespace quietroom::synth
