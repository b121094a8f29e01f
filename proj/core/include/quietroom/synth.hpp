#pragma once

// Synthetic waiting-room scenarios: arrivals and departures, per-person
// acoustic events, and multichannel audio rendered at a microphone array.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "quietroom/dsp.hpp"
#include "quietroom/random.hpp"
#include "quietroom/types.hpp"

namespace quietroom::synth {

using Position = std::array<double, 3>;  // metres

constexpr double kSpeedOfSound = 343.0;

struct ScenarioConfig {
    std::int64_t duration_s = 3600;
    int sample_rate = 16000;

    /// Persons per hour. When arrival_profile is non-empty it replaces the
    /// constant rate, one entry per hour of scenario time (cycled).
    double arrival_rate = 6.0;
    std::vector<double> arrival_profile;
    double mean_dwell_s = 1200.0;

    double cough_per_min = 0.15;
    double footstep_bursts_per_min = 0.2;
    double speech_fraction = 0.03;  // share of each person's stay spent talking

    double rustle_level = 0.015;  // RMS at 1 m
    double cough_level = 0.12;
    double footstep_level = 0.08;
    double speech_level = 0.08;
    double noise_floor = 0.003;  // HVAC RMS at the array

    Position room{10.0, 8.0, 3.0};
    std::vector<Position> mics = respeaker_square({5.0, 4.0, 1.0});
    Position hvac_position{0.5, 0.5, 2.8};

    std::uint64_t seed = 1;

    void validate() const;

    /// Four microphones on a 45.7 mm square centred at `center`.
    static std::vector<Position> respeaker_square(Position center);
};

/// Arrival rates per hour with morning and afternoon peaks, one entry per
/// hour of a clinic day starting at 07:00.
std::vector<double> clinic_day_profile(int hours, double peak_rate = 18.0, double base_rate = 2.0);

/// Time-sorted entry/exit events. Arrivals follow a (possibly inhomogeneous)
/// Poisson process, dwell times are exponential; a stay that outlasts the
/// scenario keeps its entry and has no exit.
std::vector<EntryExitEvent> generate_events(const ScenarioConfig& config, Rng& rng);

/// One sound-emitting source instance with a fixed position.
struct SoundSource {
    enum class Kind { Rustle, Cough, Footsteps, Speech, Hvac };
    Kind kind = Kind::Rustle;
    std::int64_t start_sample = 0;
    std::int64_t length = 0;
    Position position{};
    double level = 0.0;
    std::uint64_t seed = 0;
    double pitch = 0.0;  // speech f0 or footstep rate
};

struct RenderPlan {
    std::vector<SoundSource> sources;      // sorted by start_sample
    std::vector<std::uint8_t> speech_labels;  // one per second, 1 = speech
};

/// Expands events into concrete sound sources. Speech bouts are whole
/// seconds so that per-second labels are exact.
RenderPlan plan_sounds(const std::vector<EntryExitEvent>& events, const ScenarioConfig& config, Rng& rng);

/// Sequential renderer; produces the scenario audio block by block with
/// bounded memory. Rendering is deterministic for a given plan.
class AudioRenderer {
public:
    AudioRenderer(RenderPlan plan, const ScenarioConfig& config);
    ~AudioRenderer();
    AudioRenderer(AudioRenderer&&) noexcept;
    AudioRenderer& operator=(AudioRenderer&&) noexcept;

    std::int64_t total_samples() const;
    std::int64_t position() const;
    bool done() const { return position() >= total_samples(); }

    /// Next min(frames, remaining) frames of every channel.
    dsp::MultichannelClip next(std::int64_t frames);

    const std::vector<std::uint8_t>& speech_labels() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct RenderedAudio {
    dsp::MultichannelClip clip;
    std::vector<std::uint8_t> speech_labels;
};

RenderedAudio render_audio(const std::vector<EntryExitEvent>& events, const ScenarioConfig& config, Rng& rng);

struct Scenario {
    ScenarioConfig config;
    std::vector<EntryExitEvent> events;
    OccupancySeries truth;
    RenderPlan plan;

    /// Fresh renderer over the whole scenario.
    AudioRenderer renderer() const { return AudioRenderer(plan, config); }
};

/// Events, truth and sound plan derived from config.seed; audio is rendered
/// lazily through Scenario::renderer().
Scenario make_scenario(const ScenarioConfig& config);

/// Integer-sample delay from a source to each microphone.
std::vector<int> propagation_delays(const Position& source, const std::vector<Position>& mics, int sample_rate);

nlohmann::json to_json(const ScenarioConfig& config);
ScenarioConfig scenario_config_from_json(const nlohmann::json& j);

/// Scenario directory: events.csv, truth.csv, labels.csv, audio.wav (PCM16,
/// one channel per microphone) and manifest.json.
void write_scenario(const std::string& dir, const Scenario& scenario);

struct ScenarioFiles {
    ScenarioConfig config;
    std::vector<EntryExitEvent> events;
    OccupancySeries truth;
    std::vector<std::uint8_t> speech_labels;
    std::string audio_path;
};

ScenarioFiles read_scenario(const std::string& dir);

}  // namespace quietroom::synth
