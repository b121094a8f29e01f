#include "quietroom/regressor.hpp"

#include <cmath>

#include "quietroom/error.hpp"
#include "quietroom/random.hpp"

namespace quietroom {

int ModelConfig::input_dim() const {
    return encoder == embed::EncoderKind::Trainable ? cnn.input_dim() : 4 * frozen_mels;
}

int ModelConfig::encoder_dim() const {
    return encoder == embed::EncoderKind::Trainable ? cnn.out_dim : frozen_dim;
}

void ModelConfig::validate() const {
    transformer.validate();
    if (encoder == embed::EncoderKind::Trainable) cnn.validate();
    if (frozen_mels < 1 || frozen_dim < 1) throw ConfigError("frozen encoder sizes must be positive");
    if (clip_bound && !(*clip_bound > 0.0)) throw ConfigError("clip bound C must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["encoder"] = embed::to_string(c.encoder);
    j["cnn"] = {{"height", c.cnn.height}, {"width", c.cnn.width}, {"c1", c.cnn.c1}, {"c2", c.cnn.c2}, {"out_dim", c.cnn.out_dim}};
    j["frozen_mels"] = c.frozen_mels;
    j["frozen_dim"] = c.frozen_dim;
    j["append_prob"] = c.append_prob;
    j["clip_bound"] = c.clip_bound ? nlohmann::json(*c.clip_bound) : nlohmann::json(nullptr);
    const auto& t = c.transformer;
    j["transformer"] = {{"layers", t.layers}, {"heads", t.heads}, {"d_emb", t.d_emb}, {"d_head", t.d_head}, {"scaled", t.scaled}};
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.encoder = embed::encoder_from_string(j.at("encoder").get<std::string>());
        const auto& n = j.at("cnn");
        c.cnn = {n.at("height"), n.at("width"), n.at("c1"), n.at("c2"), n.at("out_dim")};
        c.frozen_mels = j.at("frozen_mels");
        c.frozen_dim = j.at("frozen_dim");
        c.append_prob = j.at("append_prob");
        if (!j.at("clip_bound").is_null()) c.clip_bound = j.at("clip_bound").get<double>();
        const auto& t = j.at("transformer");
        c.transformer = {t.at("layers"), t.at("heads"), t.at("d_emb"), t.at("d_head"), t.at("scaled")};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

Regressor::Regressor(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), transformer_((config_.validate(), config_.transformer)) {
    Rng rng(seed);
    if (config_.encoder == embed::EncoderKind::Trainable) {
        cnn_.emplace(config_.cnn);
        cnn_->init(params_, rng);
    } else {
        frozen_.emplace(config_.frozen_mels, config_.frozen_dim);
    }
    if (config_.has_adapter()) {
        const int in = config_.released_dim();
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        auto& w = params_.add("adapter.w", in, config_.transformer.d_emb);
        for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.uniform(-bound, bound);
        params_.add("adapter.b", 1, config_.transformer.d_emb);
    }
    transformer_.init(params_, rng);
    mean_ = Vector::Zero(config_.input_dim());
    inv_std_ = Vector::Ones(config_.input_dim());
}

void Regressor::set_input_scaler(Vector mean, Vector inv_std) {
    if (mean.size() != config_.input_dim() || inv_std.size() != config_.input_dim())
        throw ConfigError("input scaler width does not match the model input");
    mean_ = std::move(mean);
    inv_std_ = std::move(inv_std);
}

void Regressor::set_output_bias(double b) { params_.at("tf.out.b")(0, 0) = b; }

Matrix Regressor::release(const WindowInput& in, Cache* cache) const {
    if (!in.rows) throw ConfigError("release: no input rows");
    const Matrix& x = *in.rows;
    const auto t = x.rows();
    if (x.cols() != config_.input_dim())
        throw DataError("model input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(config_.input_dim()));
    if (config_.append_prob && (!in.probs || in.probs->size() != static_cast<std::size_t>(t)))
        throw DataError("model appends speech probabilities but the window has none");
    if (in.mask && in.mask->size() != static_cast<std::size_t>(t)) throw DataError("window mask length mismatch");

    Cache local;
    Cache& c = cache ? *cache : local;
    c.encoder_in = (x.rowwise() - mean_.transpose()).array().rowwise() * inv_std_.transpose().array();
    if (in.mask)
        for (Eigen::Index i = 0; i < t; ++i)
            if ((*in.mask)[static_cast<std::size_t>(i)] == 0) c.encoder_in.row(i).setZero();

    Matrix e = cnn_ ? cnn_->forward(params_, c.encoder_in, &c.cnn) : Matrix(c.encoder_in * frozen_->projection().transpose());
    if (config_.append_prob) {
        Matrix wide(t, e.cols() + 1);
        wide.leftCols(e.cols()) = e;
        for (Eigen::Index i = 0; i < t; ++i) wide(i, e.cols()) = (*in.probs)[static_cast<std::size_t>(i)];
        e = std::move(wide);
    }
    if (!e.allFinite()) throw NumericalFault("encoder produced non-finite embeddings");
    c.pre_clip = e;
    if (config_.clip_bound) embed::clip_rows(e, *config_.clip_bound);
    c.released = e;
    return e;
}

Vector Regressor::predict_released(const Matrix& released, Cache* cache) const {
    if (released.cols() != config_.released_dim()) throw DataError("released rows have the wrong width");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.backend_in = released;
    if (config_.has_adapter()) {
        c.adapted = released * params_.at("adapter.w");
        c.adapted.rowwise() += params_.at("adapter.b").row(0);
    } else {
        c.adapted = released;
    }
    return transformer_.forward(params_, c.adapted, &c.tf);
}

Vector Regressor::forward(const WindowInput& in, const DpContext* dp, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    Matrix released = release(in, &c);
    if (dp) {
        if (!config_.clip_bound || *config_.clip_bound != dp->params.clip_bound)
            throw ConfigError("private inference needs the model clip bound to equal the mechanism's C");
        if (!dp->source || !dp->ledger) throw ConfigError("private inference needs a noise source and a ledger");
        released = privacy::privatize(released, dp->params, *dp->source, *dp->ledger);
    }
    return predict_released(released, &c);
}

void Regressor::backward(const Cache& c, const Vector& dpred, Parameters& grads) const {
    Matrix d = transformer_.backward(params_, c.tf, dpred, grads);
    if (config_.has_adapter()) {
        grads.at("adapter.w").noalias() += c.backend_in.transpose() * d;
        grads.at("adapter.b") += d.colwise().sum();
        d = d * params_.at("adapter.w").transpose();
    }
    // Additive noise passes the gradient through unchanged.
    if (config_.clip_bound)
        for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) = embed::clip_backward(c.pre_clip.row(i), d.row(i), *config_.clip_bound);
    if (!cnn_) return;
    const Matrix de = d.leftCols(config_.encoder_dim());
    cnn_->backward(params_, c.cnn, de, grads);
}

void Regressor::save(const std::string& path, nlohmann::json extra) const {
    Parameters all = params_;
    all.add("fixed.input_mean", 1, mean_.size()).row(0) = mean_.transpose();
    all.add("fixed.input_inv_std", 1, inv_std_.size()).row(0) = inv_std_.transpose();
    nlohmann::json meta = std::move(extra);
    meta["model"] = to_json(config_);
    write_parameters(path, all, meta);
}

Regressor Regressor::load(const std::string& path, nlohmann::json* metadata) {
    auto file = read_parameters(path);
    if (!file.metadata.contains("model")) throw DataError(path + ": checkpoint has no model config");
    Regressor r(model_config_from_json(file.metadata["model"]), 0);
    for (std::size_t i = 0; i < r.params_.size(); ++i) {
        const auto& name = r.params_.name(i);
        if (!file.params.contains(name)) throw DataError(path + ": missing parameter block " + name);
        const auto& src = file.params.at(name);
        if (src.rows() != r.params_[i].rows() || src.cols() != r.params_[i].cols())
            throw DataError(path + ": parameter block " + name + " has the wrong shape");
        r.params_[i] = src;
    }
    const auto& m = file.params.at("fixed.input_mean");
    const auto& s = file.params.at("fixed.input_inv_std");
    r.set_input_scaler(m.row(0).transpose(), s.row(0).transpose());
    if (file.params.size() != r.params_.size() + 2) throw DataError(path + ": unexpected extra parameter blocks");
    if (metadata) *metadata = std::move(file.metadata);
    return r;
}

}  // namespace quietroom
