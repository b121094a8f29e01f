#include "quietroom/gate.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "quietroom/error.hpp"

namespace quietroom::gate {

namespace {

// Logistic calibration, fitted on generated speech / non-speech seconds.
constexpr double kBias = -9.0;
constexpr double kBandWeight = 2.0;
constexpr double kTonalWeight = 9.0;
constexpr double kModulationWeight = 6.0;

constexpr double kSpeechLo = 100.0;
constexpr double kSpeechHi = 3000.0;
// Mean band energy below this is treated as silence.
constexpr double kSilenceEnergy = 1e-9;

}  // namespace

GateFeatures gate_features(const dsp::Spectrogram& chunk) {
    const auto& cfg = chunk.config;
    const auto frames = chunk.frames.rows();
    if (chunk.frames.cols() != cfg.n_mels || static_cast<std::size_t>(frames) != cfg.frames_per_second())
        throw DataError("speech gate: chunk must cover exactly one second");

    const auto centers = dsp::mel_band_centers(cfg);
    std::vector<int> bands;
    for (int b = 0; b < cfg.n_mels; ++b)
        if (centers[static_cast<std::size_t>(b)] >= kSpeechLo && centers[static_cast<std::size_t>(b)] <= kSpeechHi)
            bands.push_back(b);
    if (bands.empty()) throw ConfigError("speech gate: no mel bands between 100 and 3000 Hz");

    Matrix energy = (chunk.frames.array().exp() - cfg.log_floor).max(0.0).matrix();
    const double total = energy.sum();
    double in_band = 0.0;
    std::vector<double> envelope(static_cast<std::size_t>(frames), 0.0);
    double flat_sum = 0.0;
    for (Eigen::Index t = 0; t < frames; ++t) {
        double arith = 0.0, logsum = 0.0;
        for (int b : bands) {
            const double e = energy(t, b);
            arith += e;
            logsum += std::log(e + cfg.log_floor);
        }
        envelope[static_cast<std::size_t>(t)] = arith;
        in_band += arith;
        arith /= static_cast<double>(bands.size());
        const double geo = std::exp(logsum / static_cast<double>(bands.size()));
        flat_sum += arith > 0.0 ? std::min(1.0, geo / arith) : 1.0;
    }

    GateFeatures f;
    const double mean_band = in_band / static_cast<double>(frames * static_cast<Eigen::Index>(bands.size()));
    f.level = std::log(mean_band + cfg.log_floor);
    if (mean_band < kSilenceEnergy || total <= 0.0) return f;
    f.silent = false;
    f.band_ratio = in_band / total;
    f.flatness = flat_sum / static_cast<double>(frames);

    // Envelope modulation spectrum; frame rate is sample_rate / hop_len.
    double mean_env = 0.0;
    for (double v : envelope) mean_env += v;
    mean_env /= static_cast<double>(frames);
    const double frame_rate = static_cast<double>(cfg.sample_rate) / cfg.hop_len;
    double mod = 0.0, all = 0.0;
    for (Eigen::Index k = 1; k <= frames / 2; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (Eigen::Index t = 0; t < frames; ++t) {
            const double x = envelope[static_cast<std::size_t>(t)] / mean_env - 1.0;
            acc += x * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(frames));
        }
        const double p = std::norm(acc);
        const double hz = static_cast<double>(k) * frame_rate / static_cast<double>(frames);
        all += p;
        if (hz >= 2.0 && hz <= 8.0) mod += p;
    }
    f.modulation = all > 0.0 ? mod / all : 0.0;
    return f;
}

double speech_probability(const dsp::Spectrogram& chunk) {
    const auto f = gate_features(chunk);
    if (f.silent) return 1.0 / (1.0 + std::exp(-kBias));
    const double z = kBias + kBandWeight * f.band_ratio + kTonalWeight * (1.0 - f.flatness) +
                     kModulationWeight * f.modulation;
    return 1.0 / (1.0 + std::exp(-z));
}

dsp::Spectrogram zero_spectrogram(const dsp::Spectrogram& like) {
    return {Matrix::Zero(like.frames.rows(), like.frames.cols()), like.config};
}

std::vector<InputWindow> assemble_scheme1(std::vector<LabeledChunk> stream, std::size_t window, double threshold) {
    Scheme1Assembler<dsp::Spectrogram> assembler(window, threshold);
    std::vector<InputWindow> out;
    for (auto& c : stream)
        if (auto w = assembler.push(std::move(c))) out.push_back(std::move(*w));
    return out;
}

std::vector<InputWindow> assemble_scheme2(std::vector<LabeledChunk> stream, std::size_t window, double threshold) {
    Scheme2Assembler<dsp::Spectrogram> assembler(window, zero_spectrogram, threshold);
    std::vector<InputWindow> out;
    for (auto& c : stream)
        if (auto w = assembler.push(std::move(c))) out.push_back(std::move(*w));
    return out;
}

void write_decisions_csv(const std::string& path, const std::vector<GateDecision>& decisions) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "timestamp,speech_prob,kept\n" << std::setprecision(10);
    for (const auto& d : decisions) out << d.timestamp << ',' << d.speech_prob << ',' << (d.kept ? 1 : 0) << '\n';
}

}  // namespace quietroom::gate
