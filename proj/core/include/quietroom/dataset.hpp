#pragma once

// Scenario -> per-second features -> fold-tagged transformer windows.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "quietroom/dsp.hpp"
#include "quietroom/embed.hpp"
#include "quietroom/gate.hpp"
#include "quietroom/synth.hpp"
#include "quietroom/train.hpp"

namespace quietroom::data {

struct PipelineConfig {
    dsp::SpectrogramConfig spectrogram;
    bool beamform = true;
    int max_lag = 4;  // samples; covers the 4-mic array diagonal at 16 kHz
    embed::EncoderKind encoder = embed::EncoderKind::Trainable;
    embed::PoolSpec pool;
    int scheme = 1;
    int window = 60;
    double threshold = gate::kDefaultThreshold;
    int folds = 10;

    void validate() const;
    /// Width of the per-second feature row for the configured encoder.
    int feature_dim() const;
    CnnSpec cnn_spec() const;
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Front-end for one second of multichannel audio: beamform, log-mel,
/// speech probability and encoder input features. Not thread-safe.
class ChunkProcessor {
public:
    explicit ChunkProcessor(const PipelineConfig& config);

    struct Result {
        double speech_prob = 0.0;
        Vector features;
    };
    Result process(const dsp::MultichannelClip& second);
    dsp::Spectrogram spectrogram(const dsp::MultichannelClip& second);

private:
    PipelineConfig config_;
    dsp::SpectrogramEngine engine_;
    embed::FrozenEncoder frozen_;
};

/// Per-second front-end output for a whole recording.
struct Corpus {
    PipelineConfig config;
    std::int64_t duration_s = 0;
    Matrix features;                       // duration x feature_dim
    std::vector<double> probs;             // gate output
    std::vector<double> truth;             // occupancy at the start of each second
    std::vector<std::uint8_t> speech_labels;  // generator truth, when known

    std::vector<gate::GateDecision> decisions() const;
};

using Progress = std::function<void(std::int64_t done, std::int64_t total)>;

/// Renders the scenario block by block and processes every second.
/// `workers` threads share each rendered block.
Corpus process_scenario(const synth::Scenario& scenario, const PipelineConfig& config, int workers = 1,
                        const Progress& progress = {});

/// Same, reading the audio of a scenario directory.
Corpus process_scenario_dir(const std::string& dir, const PipelineConfig& config, int workers = 1,
                            const Progress& progress = {});

/// Fold f covers seconds [f*D/F, (f+1)*D/F).
int fold_of(std::int64_t second, std::int64_t duration_s, int folds);

/// Windows assembled per fold (assemblers restart at fold boundaries) under
/// the configured scheme. Reads through fetch() are counted per fold.
class Dataset {
public:
    static Dataset build(const Corpus& corpus);

    const PipelineConfig& config() const { return config_; }
    int folds() const { return config_.folds; }
    std::size_t size() const { return windows_.size(); }

    /// Audited access.
    const TrainWindow& fetch(std::size_t index) const;
    std::uint64_t reads(int fold) const;
    void reset_reads() const;

    std::vector<std::size_t> indices_in_folds(const std::vector<int>& folds) const;
    std::vector<std::size_t> indices_in_fold(int fold) const { return indices_in_folds({fold}); }

    /// Occupancy truth of every second in the given folds.
    std::vector<double> truth_in_folds(const std::vector<int>& folds) const;
    std::int64_t duration_s() const { return static_cast<std::int64_t>(truth_.size()); }

    /// SHA-256 over window contents, for run manifests.
    std::string content_hash() const;

private:
    PipelineConfig config_;
    std::vector<TrainWindow> windows_;
    std::vector<double> truth_;
    std::unique_ptr<std::atomic<std::uint64_t>[]> reads_;
};

void save_corpus(const std::string& dir, const Corpus& corpus);
Corpus load_corpus(const std::string& dir);

}  // namespace quietroom::data
