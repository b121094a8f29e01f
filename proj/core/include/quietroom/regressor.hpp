#pragma once

// Full per-window model.
//
//   rows -> standardize -> encoder -> [append p] -> [L1 clip]  (released)
//        -> [+ Laplace noise] -> [adapter] -> transformer -> T predictions
//
// The encoder is either the trainable CNN (rows are pooled spectrograms) or
// the fixed frozen projection (rows are frozen summary features). The
// adapter is a linear map inserted whenever the released width differs
// from the transformer's d_emb.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "quietroom/cnn_encoder.hpp"
#include "quietroom/embed.hpp"
#include "quietroom/params.hpp"
#include "quietroom/privacy.hpp"
#include "quietroom/transformer.hpp"

namespace quietroom {

struct ModelConfig {
    embed::EncoderKind encoder = embed::EncoderKind::Trainable;
    CnnSpec cnn;
    int frozen_mels = 64;
    int frozen_dim = embed::kFrozenDim;
    bool append_prob = false;
    std::optional<double> clip_bound;
    TransformerConfig transformer;

    int input_dim() const;
    int encoder_dim() const;
    int released_dim() const { return encoder_dim() + (append_prob ? 1 : 0); }
    bool has_adapter() const { return released_dim() != transformer.d_emb; }
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// One window of model input.
struct WindowInput {
    const Matrix* rows = nullptr;                       // T x input_dim
    const std::vector<double>* probs = nullptr;         // T, needed when appending
    const std::vector<std::uint8_t>* mask = nullptr;    // T, 0 = zeroed for speech; may be null
};

/// Optional Laplace release between the device and backend halves.
struct DpContext {
    privacy::PrivacyParams params;
    privacy::NoiseSource* source = nullptr;
    privacy::PrivacyLedger* ledger = nullptr;
};

class Regressor {
public:
    Regressor(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    Parameters& params() { return params_; }
    const Parameters& params() const { return params_; }

    /// Per-column standardization applied to input rows before the encoder.
    void set_input_scaler(Vector mean, Vector inv_std);
    const Vector& input_mean() const { return mean_; }
    const Vector& input_inv_std() const { return inv_std_; }
    void set_output_bias(double b);

    struct Cache {
        Matrix encoder_in;
        CnnEncoder::Cache cnn;
        Matrix pre_clip;
        Matrix released;
        Matrix backend_in;  // released rows after any noise
        Matrix adapted;
        Transformer::Cache tf;
    };

    /// Device half: the clipped per-second rows that would leave the sensor.
    Matrix release(const WindowInput& in, Cache* cache = nullptr) const;
    /// Backend half.
    Vector predict_released(const Matrix& released, Cache* cache = nullptr) const;
    /// release -> optional privatize -> predict_released.
    Vector forward(const WindowInput& in, const DpContext* dp = nullptr, Cache* cache = nullptr) const;

    /// Accumulates gradients of every trainable parameter for dpred into grads.
    void backward(const Cache& cache, const Vector& dpred, Parameters& grads) const;

    void save(const std::string& path, nlohmann::json extra = nlohmann::json::object()) const;
    static Regressor load(const std::string& path, nlohmann::json* metadata = nullptr);

private:
    ModelConfig config_;
    Parameters params_;
    std::optional<CnnEncoder> cnn_;
    std::optional<embed::FrozenEncoder> frozen_;
    Transformer transformer_;
    Vector mean_, inv_std_;
};

}  // namespace quietroom
