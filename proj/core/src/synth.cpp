#include "quietroom/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "quietroom/error.hpp"
#include "quietroom/eval.hpp"
#include "quietroom/wav.hpp"

namespace quietroom::synth {

namespace {

double distance(const Position& a, const Position& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double rate_at(const ScenarioConfig& c, double t) {
    if (c.arrival_profile.empty()) return c.arrival_rate;
    const auto hour = static_cast<std::size_t>(t / 3600.0) % c.arrival_profile.size();
    return c.arrival_profile[hour];
}

Position random_seat(const ScenarioConfig& c, Rng& rng, double z) {
    const double margin = 0.5;
    return {rng.uniform(margin, c.room[0] - margin), rng.uniform(margin, c.room[1] - margin), z};
}

struct Visit {
    std::uint64_t id = 0;
    double arrival = 0.0;
    double departure = 0.0;
    bool leaves = false;
};

std::vector<Visit> visits_from_events(const std::vector<EntryExitEvent>& events, double duration) {
    std::map<std::uint64_t, Visit> open;
    std::vector<Visit> visits;
    for (const auto& e : events) {
        if (e.delta > 0) {
            open[e.person_id] = Visit{e.person_id, e.timestamp, duration, false};
        } else {
            auto it = open.find(e.person_id);
            if (it == open.end()) throw DataError("plan_sounds: exit without entry for person " + std::to_string(e.person_id));
            it->second.departure = e.timestamp;
            it->second.leaves = true;
            visits.push_back(it->second);
            open.erase(it);
        }
    }
    for (auto& [id, v] : open) visits.push_back(v);
    std::sort(visits.begin(), visits.end(), [](const Visit& a, const Visit& b) { return a.arrival < b.arrival; });
    return visits;
}

void add_source(std::vector<SoundSource>& out, SoundSource::Kind kind, double start_s, double length_s,
                const Position& pos, double level, Rng& rng, double pitch, const ScenarioConfig& c) {
    const auto total = c.duration_s * c.sample_rate;
    SoundSource s;
    s.kind = kind;
    s.start_sample = static_cast<std::int64_t>(std::llround(start_s * c.sample_rate));
    s.length = static_cast<std::int64_t>(std::llround(length_s * c.sample_rate));
    s.start_sample = std::clamp<std::int64_t>(s.start_sample, 0, total);
    s.length = std::clamp<std::int64_t>(s.length, 0, total - s.start_sample);
    if (s.length <= 0) return;
    s.position = pos;
    s.level = level;
    s.seed = rng.next_u64();
    s.pitch = pitch;
    out.push_back(s);
}

}  // namespace

std::vector<Position> ScenarioConfig::respeaker_square(Position center) {
    const double h = 0.0457 / 2.0;
    return {
        Position{center[0] - h, center[1] - h, center[2]},
        Position{center[0] + h, center[1] - h, center[2]},
        Position{center[0] + h, center[1] + h, center[2]},
        Position{center[0] - h, center[1] + h, center[2]},
    };
}

void ScenarioConfig::validate() const {
    if (duration_s <= 0) throw ConfigError("scenario: duration must be positive");
    if (sample_rate <= 0) throw ConfigError("scenario: sample_rate must be positive");
    if (mics.empty()) throw ConfigError("scenario: microphone geometry is empty");
    auto nonneg = [](double v) { return v >= 0.0 && std::isfinite(v); };
    if (!nonneg(arrival_rate) || !nonneg(cough_per_min) || !nonneg(footstep_bursts_per_min) ||
        !nonneg(rustle_level) || !nonneg(cough_level) || !nonneg(footstep_level) || !nonneg(speech_level) ||
        !nonneg(noise_floor))
        throw ConfigError("scenario: rates and levels must be non-negative");
    for (double r : arrival_profile)
        if (!nonneg(r)) throw ConfigError("scenario: arrival profile rates must be non-negative");
    if (!(mean_dwell_s > 0.0)) throw ConfigError("scenario: mean dwell must be positive");
    if (!(speech_fraction >= 0.0 && speech_fraction < 1.0)) throw ConfigError("scenario: speech fraction must be in [0, 1)");
    if (!(room[0] > 1.0 && room[1] > 1.0 && room[2] > 0.0)) throw ConfigError("scenario: room too small");
}

std::vector<double> clinic_day_profile(int hours, double peak_rate, double base_rate) {
    std::vector<double> profile(static_cast<std::size_t>(std::max(hours, 0)));
    for (int h = 0; h < hours; ++h) {
        const double t = std::fmod(h + 0.5, 12.0);
        const double morning = std::exp(-0.5 * std::pow((t - 2.5) / 1.2, 2));
        const double afternoon = 0.85 * std::exp(-0.5 * std::pow((t - 7.5) / 1.5, 2));
        profile[static_cast<std::size_t>(h)] = base_rate + peak_rate * (morning + afternoon);
    }
    return profile;
}

std::vector<EntryExitEvent> generate_events(const ScenarioConfig& config, Rng& rng) {
    config.validate();
    const double duration = static_cast<double>(config.duration_s);
    double peak = config.arrival_rate;
    if (!config.arrival_profile.empty())
        peak = *std::max_element(config.arrival_profile.begin(), config.arrival_profile.end());
    std::vector<EntryExitEvent> events;
    if (peak <= 0.0) return events;

    std::uint64_t next_id = 1;
    double t = 0.0;
    while (true) {
        t += rng.exponential(3600.0 / peak);
        if (t >= duration) break;
        // Thinning for the inhomogeneous profile.
        if (rng.uniform() * peak >= rate_at(config, t)) continue;
        const auto id = next_id++;
        events.push_back({t, +1, id});
        const double exit = t + rng.exponential(config.mean_dwell_s);
        if (exit < duration) events.push_back({exit, -1, id});
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const EntryExitEvent& a, const EntryExitEvent& b) { return a.timestamp < b.timestamp; });
    return events;
}

std::vector<int> propagation_delays(const Position& source, const std::vector<Position>& mics, int sample_rate) {
    std::vector<int> d;
    d.reserve(mics.size());
    for (const auto& m : mics)
        d.push_back(static_cast<int>(std::lround(distance(source, m) / kSpeedOfSound * sample_rate)));
    return d;
}

RenderPlan plan_sounds(const std::vector<EntryExitEvent>& events, const ScenarioConfig& c, Rng& rng) {
    c.validate();
    const double duration = static_cast<double>(c.duration_s);
    RenderPlan plan;
    plan.speech_labels.assign(static_cast<std::size_t>(c.duration_s), 0);

    Position array_center{0.0, 0.0, 0.0};
    for (const auto& m : c.mics)
        for (int i = 0; i < 3; ++i) array_center[static_cast<std::size_t>(i)] += m[static_cast<std::size_t>(i)] / static_cast<double>(c.mics.size());
    const double hvac_dist = std::max(distance(c.hvac_position, array_center), 0.5);
    add_source(plan.sources, SoundSource::Kind::Hvac, 0.0, duration, c.hvac_position, c.noise_floor * hvac_dist, rng, 0.0, c);

    constexpr double kMeanBout = 2.5;
    for (const auto& v : visits_from_events(events, duration)) {
        const auto seat = random_seat(c, rng, 1.1);
        const Position floor_pos{seat[0], seat[1], 0.0};
        const double stay = v.departure - v.arrival;

        add_source(plan.sources, SoundSource::Kind::Rustle, v.arrival, stay, {seat[0], seat[1], 0.8},
                   c.rustle_level * std::exp(0.35 * rng.normal()), rng, 0.0, c);

        auto walk = [&](double at) {
            const double rate = rng.uniform(1.6, 2.1);
            add_source(plan.sources, SoundSource::Kind::Footsteps, at, 6.0 / rate, floor_pos,
                       c.footstep_level * std::exp(0.25 * rng.normal()), rng, rate, c);
        };
        walk(v.arrival);
        if (v.leaves) walk(std::max(v.arrival, v.departure - 3.0));

        if (c.footstep_bursts_per_min > 0.0) {
            for (double t = v.arrival + rng.exponential(60.0 / c.footstep_bursts_per_min); t < v.departure;
                 t += rng.exponential(60.0 / c.footstep_bursts_per_min))
                walk(t);
        }
        if (c.cough_per_min > 0.0) {
            for (double t = v.arrival + rng.exponential(60.0 / c.cough_per_min); t < v.departure;
                 t += rng.exponential(60.0 / c.cough_per_min)) {
                add_source(plan.sources, SoundSource::Kind::Cough, t, rng.uniform(0.3, 0.5), seat,
                           c.cough_level * std::exp(0.3 * rng.normal()), rng, 0.0, c);
            }
        }
        if (c.speech_fraction > 0.0) {
            const double mean_gap = kMeanBout * (1.0 - c.speech_fraction) / c.speech_fraction;
            const double level = c.speech_level * std::exp(0.2 * rng.normal());
            const double f0 = rng.uniform(100.0, 220.0);
            auto s = static_cast<std::int64_t>(std::ceil(v.arrival));
            const auto end = static_cast<std::int64_t>(std::floor(v.departure));
            while (true) {
                s += rng.geometric(mean_gap);
                const auto len = rng.uniform_int(1, 4);
                if (s >= end) break;
                const auto bout_end = std::min(s + len, end);
                add_source(plan.sources, SoundSource::Kind::Speech, static_cast<double>(s),
                           static_cast<double>(bout_end - s), seat, level, rng, f0 * std::exp(0.05 * rng.normal()), c);
                for (auto k = s; k < bout_end; ++k) plan.speech_labels[static_cast<std::size_t>(k)] = 1;
                s = bout_end;
            }
        }
    }
    std::stable_sort(plan.sources.begin(), plan.sources.end(),
                     [](const SoundSource& a, const SoundSource& b) { return a.start_sample < b.start_sample; });
    return plan;
}

RenderedAudio render_audio(const std::vector<EntryExitEvent>& events, const ScenarioConfig& config, Rng& rng) {
    AudioRenderer renderer(plan_sounds(events, config, rng), config);
    RenderedAudio out;
    out.speech_labels = renderer.speech_labels();
    out.clip = renderer.next(renderer.total_samples());
    return out;
}

Scenario make_scenario(const ScenarioConfig& config) {
    config.validate();
    Scenario s;
    s.config = config;
    Rng event_rng(mix_seed(config.seed, 1));
    s.events = generate_events(config, event_rng);
    s.truth = eval::occupancy_from_events(s.events, config.duration_s);
    Rng sound_rng(mix_seed(config.seed, 2));
    s.plan = plan_sounds(s.events, config, sound_rng);
    return s;
}

nlohmann::json to_json(const ScenarioConfig& c) {
    nlohmann::json j;
    j["duration_s"] = c.duration_s;
    j["sample_rate"] = c.sample_rate;
    j["arrival_rate"] = c.arrival_rate;
    j["arrival_profile"] = c.arrival_profile;
    j["mean_dwell_s"] = c.mean_dwell_s;
    j["cough_per_min"] = c.cough_per_min;
    j["footstep_bursts_per_min"] = c.footstep_bursts_per_min;
    j["speech_fraction"] = c.speech_fraction;
    j["rustle_level"] = c.rustle_level;
    j["cough_level"] = c.cough_level;
    j["footstep_level"] = c.footstep_level;
    j["speech_level"] = c.speech_level;
    j["noise_floor"] = c.noise_floor;
    j["room"] = c.room;
    j["mics"] = c.mics;
    j["hvac_position"] = c.hvac_position;
    j["seed"] = c.seed;
    return j;
}

ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
    ScenarioConfig c;
    try {
        c.duration_s = j.at("duration_s").get<std::int64_t>();
        c.sample_rate = j.at("sample_rate").get<int>();
        c.arrival_rate = j.at("arrival_rate").get<double>();
        c.arrival_profile = j.at("arrival_profile").get<std::vector<double>>();
        c.mean_dwell_s = j.at("mean_dwell_s").get<double>();
        c.cough_per_min = j.at("cough_per_min").get<double>();
        c.footstep_bursts_per_min = j.at("footstep_bursts_per_min").get<double>();
        c.speech_fraction = j.at("speech_fraction").get<double>();
        c.rustle_level = j.at("rustle_level").get<double>();
        c.cough_level = j.at("cough_level").get<double>();
        c.footstep_level = j.at("footstep_level").get<double>();
        c.speech_level = j.at("speech_level").get<double>();
        c.noise_floor = j.at("noise_floor").get<double>();
        c.room = j.at("room").get<Position>();
        c.mics = j.at("mics").get<std::vector<Position>>();
        c.hvac_position = j.at("hvac_position").get<Position>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("scenario config: ") + e.what());
    }
    c.validate();
    return c;
}

void write_scenario(const std::string& dir, const Scenario& scenario) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path root(dir);

    {
        std::ofstream out(root / "events.csv");
        out << "timestamp,delta,person_id\n" << std::setprecision(17);
        for (const auto& e : scenario.events) out << e.timestamp << ',' << e.delta << ',' << e.person_id << '\n';
    }
    {
        std::ofstream out(root / "truth.csv");
        out << "second,count\n";
        for (std::size_t s = 0; s < scenario.truth.size(); ++s)
            out << scenario.truth.start_time + static_cast<std::int64_t>(s) << ',' << scenario.truth.counts[s] << '\n';
    }
    {
        std::ofstream out(root / "labels.csv");
        out << "second,speech\n";
        for (std::size_t s = 0; s < scenario.plan.speech_labels.size(); ++s)
            out << s << ',' << static_cast<int>(scenario.plan.speech_labels[s]) << '\n';
    }
    {
        auto renderer = scenario.renderer();
        wav::WavWriter writer((root / "audio.wav").string(), scenario.config.sample_rate,
                              static_cast<int>(scenario.config.mics.size()));
        while (!renderer.done()) writer.write(renderer.next(60LL * scenario.config.sample_rate));
        writer.close();
    }
    nlohmann::json manifest;
    manifest["kind"] = "scenario";
    manifest["config"] = to_json(scenario.config);
    manifest["seed"] = scenario.config.seed;
    manifest["files"] = {"events.csv", "truth.csv", "labels.csv", "audio.wav"};
    std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

ScenarioFiles read_scenario(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    ScenarioFiles out;
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw DataError("scenario directory lacks manifest.json: " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("scenario manifest: ") + e.what());
    }
    out.config = scenario_config_from_json(manifest.at("config"));
    try {
        for (const auto& r : read_csv(root / "events.csv")) {
            if (r.size() != 3) throw DataError("events.csv: expected 3 columns");
            out.events.push_back({std::stod(r[0]), std::stoi(r[1]), std::stoull(r[2])});
        }
        for (const auto& r : read_csv(root / "truth.csv")) {
            if (r.size() != 2) throw DataError("truth.csv: expected 2 columns");
            if (out.truth.counts.empty()) out.truth.start_time = std::stoll(r[0]);
            out.truth.counts.push_back(std::stoi(r[1]));
        }
        for (const auto& r : read_csv(root / "labels.csv")) {
            if (r.size() != 2) throw DataError("labels.csv: expected 2 columns");
            out.speech_labels.push_back(static_cast<std::uint8_t>(std::stoi(r[1])));
        }
    } catch (const std::logic_error& e) {
        throw DataError(std::string("scenario csv: ") + e.what());
    }
    out.audio_path = (root / "audio.wav").string();
    return out;
}

}  // namespace quietroom::synth
