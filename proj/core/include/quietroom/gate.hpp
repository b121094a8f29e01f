#pragma once

// Speech gating of one-second chunks and transformer window assembly.
//
// Scheme 1 drops speech chunks and packs the surviving chunks into windows
// of W. Scheme 2 keeps every second, replacing speech chunks by all-zero
// input and carrying each second's speech probability alongside.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "quietroom/dsp.hpp"
#include "quietroom/error.hpp"

namespace quietroom::gate {

constexpr double kDefaultThreshold = 0.5;

/// Intermediate scores the heuristic detector combines; exposed for audit.
struct GateFeatures {
    double band_ratio = 0.0;   // energy share of 100-3000 Hz bands
    double flatness = 1.0;     // mean spectral flatness within those bands
    double modulation = 0.0;   // share of envelope modulation energy at 2-8 Hz
    double level = 0.0;        // log mean band energy
    bool silent = true;
};

GateFeatures gate_features(const dsp::Spectrogram& chunk);

/// Probability in [0, 1] that a one-second spectrogram contains speech.
/// Throws DataError when the spectrogram does not cover exactly one second.
double speech_probability(const dsp::Spectrogram& chunk);

template <typename Item>
struct Labeled {
    Item item;
    double speech_prob = 0.0;
    std::int64_t timestamp = 0;
};

template <typename Item>
struct Window {
    std::vector<Item> items;
    std::vector<std::uint8_t> mask;  // 0 where the chunk was zeroed for speech
    std::vector<double> probs;
    std::vector<std::int64_t> timestamps;

    std::size_t size() const { return items.size(); }
};

using LabeledChunk = Labeled<dsp::Spectrogram>;
using InputWindow = Window<dsp::Spectrogram>;

/// Streaming Scheme 1 fold. Single consumer.
template <typename Item>
class Scheme1Assembler {
public:
    explicit Scheme1Assembler(std::size_t window, double threshold = kDefaultThreshold)
        : window_(window), threshold_(threshold) {
        if (window < 1) throw ConfigError("scheme 1: window size must be >= 1");
    }

    /// Returns a full window once W non-speech chunks have accumulated.
    std::optional<Window<Item>> push(Labeled<Item> chunk) {
        if (chunk.speech_prob > threshold_) return std::nullopt;
        pending_.items.push_back(std::move(chunk.item));
        pending_.mask.push_back(1);
        pending_.probs.push_back(chunk.speech_prob);
        pending_.timestamps.push_back(chunk.timestamp);
        if (pending_.size() < window_) return std::nullopt;
        Window<Item> out = std::move(pending_);
        pending_ = {};
        return out;
    }

    /// Discards a partial window (e.g. at a fold boundary).
    void reset() { pending_ = {}; }
    std::size_t pending() const { return pending_.size(); }

private:
    std::size_t window_;
    double threshold_;
    Window<Item> pending_;
};

/// Streaming Scheme 2 fold. `zero` maps a chunk to its all-zero counterpart.
template <typename Item>
class Scheme2Assembler {
public:
    Scheme2Assembler(std::size_t window, std::function<Item(const Item&)> zero, double threshold = kDefaultThreshold)
        : window_(window), threshold_(threshold), zero_(std::move(zero)) {
        if (window < 1) throw ConfigError("scheme 2: window size must be >= 1");
    }

    std::optional<Window<Item>> push(Labeled<Item> chunk) {
        const bool speech = chunk.speech_prob > threshold_;
        pending_.items.push_back(speech ? zero_(chunk.item) : std::move(chunk.item));
        pending_.mask.push_back(speech ? 0 : 1);
        pending_.probs.push_back(chunk.speech_prob);
        pending_.timestamps.push_back(chunk.timestamp);
        if (pending_.size() < window_) return std::nullopt;
        Window<Item> out = std::move(pending_);
        pending_ = {};
        return out;
    }

    void reset() { pending_ = {}; }
    std::size_t pending() const { return pending_.size(); }

private:
    std::size_t window_;
    double threshold_;
    std::function<Item(const Item&)> zero_;
    Window<Item> pending_;
};

dsp::Spectrogram zero_spectrogram(const dsp::Spectrogram& like);

std::vector<InputWindow> assemble_scheme1(std::vector<LabeledChunk> stream, std::size_t window,
                                          double threshold = kDefaultThreshold);
std::vector<InputWindow> assemble_scheme2(std::vector<LabeledChunk> stream, std::size_t window,
                                          double threshold = kDefaultThreshold);

struct GateDecision {
    std::int64_t timestamp = 0;
    double speech_prob = 0.0;
    bool kept = false;
};

/// Audit log: "timestamp,speech_prob,kept".
void write_decisions_csv(const std::string& path, const std::vector<GateDecision>& decisions);

}  // namespace quietroom::gate
