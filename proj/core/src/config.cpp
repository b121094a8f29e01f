#include "quietroom/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "quietroom/error.hpp"

namespace quietroom::config {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("config: " + key + " = '" + v + "' is not a number");
    return out;
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& origin) {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        auto key = trim(std::string_view(t).substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        kv.set(key, trim(std::string_view(t).substr(eq + 1)));
    }
    return kv;
}

KeyValues KeyValues::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

KeyValues KeyValues::from_json(const nlohmann::json& j) {
    KeyValues kv;
    if (!j.is_object()) throw ConfigError("config: expected a JSON object of key/value strings");
    for (const auto& [k, v] : j.items()) kv.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    return kv;
}

void KeyValues::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

const std::string& KeyValues::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("config: missing key " + key);
    return it->second;
}

double KeyValues::get_double(const std::string& key) const { return parse_double(key, get(key)); }

std::int64_t KeyValues::get_int(const std::string& key) const {
    const auto& v = get(key);
    std::int64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("config: " + key + " = '" + v + "' is not an integer");
    return out;
}

bool KeyValues::get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: " + key + " = '" + v + "' is not a boolean");
}

std::vector<double> KeyValues::get_doubles(const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_double(key, item));
    }
    return out;
}

void KeyValues::merge(const KeyValues& other) {
    for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

nlohmann::json KeyValues::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : entries_) j[k] = v;
    return j;
}

std::string KeyValues::dump() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

const KeyValues& defaults() {
    static const KeyValues kv = KeyValues::parse(R"(
synth.duration_s = 3600
synth.sample_rate = 16000
synth.arrival_rate = 6
synth.profile = constant
synth.peak_rate = 18
synth.base_rate = 2
synth.mean_dwell_s = 1200
synth.cough_per_min = 0.15
synth.footstep_bursts_per_min = 0.2
synth.speech_fraction = 0.03
synth.rustle_level = 0.015
synth.cough_level = 0.12
synth.footstep_level = 0.08
synth.speech_level = 0.08
synth.noise_floor = 0.003

frontend.window_len = 400
frontend.hop_len = 160
frontend.n_mels = 64
frontend.fmin = 60
frontend.fmax = 7800
frontend.log_floor = 1e-10
frontend.beamform = true
frontend.max_lag = 4

pipeline.encoder = trainable
pipeline.scheme = 1
pipeline.window = 60
pipeline.threshold = 0.5
pipeline.folds = 10

model.layers = 4
model.heads = 8
model.d_emb = 128
model.d_head = 16
model.scaled_attention = false
model.cnn_c1 = 16
model.cnn_c2 = 32
model.cnn_out = 128

train.epochs = 30
train.lr = 0.001
train.beta1 = 0.9
train.beta2 = 0.999
train.adam_eps = 1e-8
train.train_folds = 0,1,2,3,4,5,6,7,8
train.test_folds = 9

dp.clip_bound = 1.0
dp.epsilon =
dp.noise_aware = true
dp.sweep = 5,2,1,0.5,0.25,0.1

eval.windows = 1800,3600,7200
)",
                                                 "<defaults>");
    return kv;
}

KeyValues resolve(const KeyValues& user) {
    for (const auto& [k, v] : user.entries())
        if (!defaults().has(k) && k != "seed") throw ConfigError("config: unknown key " + k);
    KeyValues out = defaults();
    out.set("seed", "1");
    out.merge(user);
    return out;
}

synth::ScenarioConfig scenario_config(const KeyValues& kv) {
    synth::ScenarioConfig c;
    c.duration_s = kv.get_int("synth.duration_s");
    c.sample_rate = static_cast<int>(kv.get_int("synth.sample_rate"));
    c.arrival_rate = kv.get_double("synth.arrival_rate");
    const auto& profile = kv.get("synth.profile");
    if (profile == "clinic") {
        const auto hours = static_cast<int>((c.duration_s + 3599) / 3600);
        c.arrival_profile = synth::clinic_day_profile(hours, kv.get_double("synth.peak_rate"), kv.get_double("synth.base_rate"));
    } else if (profile != "constant") {
        throw ConfigError("config: synth.profile must be constant or clinic");
    }
    c.mean_dwell_s = kv.get_double("synth.mean_dwell_s");
    c.cough_per_min = kv.get_double("synth.cough_per_min");
    c.footstep_bursts_per_min = kv.get_double("synth.footstep_bursts_per_min");
    c.speech_fraction = kv.get_double("synth.speech_fraction");
    c.rustle_level = kv.get_double("synth.rustle_level");
    c.cough_level = kv.get_double("synth.cough_level");
    c.footstep_level = kv.get_double("synth.footstep_level");
    c.speech_level = kv.get_double("synth.speech_level");
    c.noise_floor = kv.get_double("synth.noise_floor");
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
    c.validate();
    return c;
}

data::PipelineConfig pipeline_config(const KeyValues& kv) {
    data::PipelineConfig c;
    auto& s = c.spectrogram;
    s.sample_rate = static_cast<int>(kv.get_int("synth.sample_rate"));
    s.window_len = static_cast<int>(kv.get_int("frontend.window_len"));
    s.hop_len = static_cast<int>(kv.get_int("frontend.hop_len"));
    s.n_mels = static_cast<int>(kv.get_int("frontend.n_mels"));
    s.fmin = kv.get_double("frontend.fmin");
    s.fmax = kv.get_double("frontend.fmax");
    s.log_floor = kv.get_double("frontend.log_floor");
    c.beamform = kv.get_bool("frontend.beamform");
    c.max_lag = static_cast<int>(kv.get_int("frontend.max_lag"));
    c.encoder = embed::encoder_from_string(kv.get("pipeline.encoder"));
    c.scheme = static_cast<int>(kv.get_int("pipeline.scheme"));
    c.window = static_cast<int>(kv.get_int("pipeline.window"));
    c.threshold = kv.get_double("pipeline.threshold");
    c.folds = static_cast<int>(kv.get_int("pipeline.folds"));
    c.validate();
    return c;
}

ModelConfig model_config(const KeyValues& kv) {
    ModelConfig m;
    m.transformer.layers = static_cast<int>(kv.get_int("model.layers"));
    m.transformer.heads = static_cast<int>(kv.get_int("model.heads"));
    m.transformer.d_emb = static_cast<int>(kv.get_int("model.d_emb"));
    m.transformer.d_head = static_cast<int>(kv.get_int("model.d_head"));
    m.transformer.scaled = kv.get_bool("model.scaled_attention");
    m.cnn.c1 = static_cast<int>(kv.get_int("model.cnn_c1"));
    m.cnn.c2 = static_cast<int>(kv.get_int("model.cnn_c2"));
    m.cnn.out_dim = static_cast<int>(kv.get_int("model.cnn_out"));
    const auto p = pipeline_config(kv);
    m.encoder = p.encoder;
    m.append_prob = p.scheme == 2;
    const auto spec = p.cnn_spec();
    m.cnn.height = spec.height;
    m.cnn.width = spec.width;
    m.frozen_mels = p.spectrogram.n_mels;
    m.validate();
    return m;
}

TrainConfig train_config(const KeyValues& kv) {
    TrainConfig t;
    t.epochs = static_cast<int>(kv.get_int("train.epochs"));
    t.adam.lr = kv.get_double("train.lr");
    t.adam.beta1 = kv.get_double("train.beta1");
    t.adam.beta2 = kv.get_double("train.beta2");
    t.adam.eps = kv.get_double("train.adam_eps");
    t.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
    if (kv.get_bool("dp.noise_aware")) t.dp = dp_params(kv);
    return t;
}

std::optional<privacy::PrivacyParams> dp_params(const KeyValues& kv) {
    if (kv.get("dp.epsilon").empty()) return std::nullopt;
    privacy::PrivacyParams p{kv.get_double("dp.clip_bound"), kv.get_double("dp.epsilon")};
    p.validate();
    return p;
}

}  // namespace quietroom::config
