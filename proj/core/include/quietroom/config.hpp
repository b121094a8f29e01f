#pragma once

// Flat "section.key = value" run configuration. Lines starting with '#' are
// comments. Every known key has a default (see defaults()); unknown keys
// are rejected so that typos fail loudly.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "quietroom/dataset.hpp"
#include "quietroom/privacy.hpp"
#include "quietroom/regressor.hpp"
#include "quietroom/synth.hpp"
#include "quietroom/train.hpp"

namespace quietroom::config {

class KeyValues {
public:
    static KeyValues parse(std::string_view text, const std::string& origin = "<string>");
    static KeyValues load(const std::string& path);
    static KeyValues from_json(const nlohmann::json& j);

    void set(const std::string& key, std::string value);
    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    const std::map<std::string, std::string>& entries() const { return entries_; }

    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    /// Comma-separated numbers.
    std::vector<double> get_doubles(const std::string& key) const;

    /// Entries of `other` replace ours.
    void merge(const KeyValues& other);

    nlohmann::json to_json() const;
    std::string dump() const;

private:
    std::map<std::string, std::string> entries_;
};

/// Every recognised key with its default value.
const KeyValues& defaults();

/// defaults() overlaid with `user`; throws ConfigError for unknown keys.
KeyValues resolve(const KeyValues& user);

synth::ScenarioConfig scenario_config(const KeyValues& kv);
data::PipelineConfig pipeline_config(const KeyValues& kv);
ModelConfig model_config(const KeyValues& kv);
TrainConfig train_config(const KeyValues& kv);
/// Present only when dp.epsilon is set (non-empty).
std::optional<privacy::PrivacyParams> dp_params(const KeyValues& kv);

}  // namespace quietroom::config
