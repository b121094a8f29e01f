#include "quietroom/transformer.hpp"

#include <cmath>

#include "quietroom/error.hpp"

namespace quietroom {

void TransformerConfig::validate() const {
    if (layers < 1) throw ConfigError("transformer: layers must be >= 1");
    if (heads < 1 || d_head < 1) throw ConfigError("transformer: heads and d_head must be >= 1");
    if (heads * d_head != d_emb)
        throw ConfigError("transformer: heads x d_head must equal d_emb (" + std::to_string(heads) + " x " +
                          std::to_string(d_head) + " != " + std::to_string(d_emb) + ")");
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

double mse_loss(const Vector& pred, const Vector& truth) {
    if (pred.size() != truth.size()) throw ConfigError("mse_loss: length mismatch");
    if (pred.size() == 0) throw DataError("mse_loss: empty series");
    return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

Vector mse_gradient(const Vector& pred, const Vector& truth) {
    if (pred.size() != truth.size()) throw ConfigError("mse_gradient: length mismatch");
    return 2.0 * (pred - truth) / static_cast<double>(pred.size());
}

Transformer::Transformer(TransformerConfig config, std::string prefix) : config_(config), prefix_(std::move(prefix)) {
    config_.validate();
}

std::string Transformer::key(int layer, const char* name) const {
    return prefix_ + "L" + std::to_string(layer) + "." + name;
}

void Transformer::init(Parameters& params, Rng& rng) const {
    const auto& c = config_;
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.d_emb));
    auto fill = [&](Matrix& m) {
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-bound, bound);
    };
    for (int l = 0; l < c.layers; ++l)
        for (const char* name : {"wq", "wk", "wv"}) fill(params.add(key(l, name), c.d_emb, c.heads * c.d_head));
    fill(params.add(prefix_ + "out.w", c.d_emb, 1));
    params.add(prefix_ + "out.b", 1, 1);
}

std::vector<Matrix> Transformer::attention_weights(const Parameters& params, int layer, const Matrix& x) const {
    LayerCache c;
    layer_forward(params, layer, x, &c);
    return c.attn;
}

Matrix Transformer::layer_forward(const Parameters& params, int layer, const Matrix& x, LayerCache* cache) const {
    const auto& cfg = config_;
    if (x.cols() != cfg.d_emb)
        throw ConfigError("attention layer: expected d_emb " + std::to_string(cfg.d_emb) + ", got " + std::to_string(x.cols()));
    LayerCache local;
    LayerCache& c = cache ? *cache : local;
    c.x = x;
    c.q.noalias() = x * params.at(key(layer, "wq"));
    c.k.noalias() = x * params.at(key(layer, "wk"));
    c.v.noalias() = x * params.at(key(layer, "wv"));
    const double scale = cfg.scaled ? 1.0 / std::sqrt(static_cast<double>(cfg.d_head)) : 1.0;
    c.attn.resize(static_cast<std::size_t>(cfg.heads));
    c.z = x;
    for (int h = 0; h < cfg.heads; ++h) {
        const auto off = h * cfg.d_head;
        Matrix logits = c.q.middleCols(off, cfg.d_head) * c.k.middleCols(off, cfg.d_head).transpose();
        if (scale != 1.0) logits *= scale;
        auto& a = c.attn[static_cast<std::size_t>(h)];
        a = softmax_rows(logits);
        c.z.middleCols(off, cfg.d_head).noalias() += a * c.v.middleCols(off, cfg.d_head);
    }
    if (!c.z.allFinite())
        throw NumericalFault("attention layer " + std::to_string(layer) + ": non-finite activations");
    return c.z.cwiseMax(0.0);
}

Vector Transformer::forward(const Parameters& params, const Matrix& x, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.layers.resize(static_cast<std::size_t>(config_.layers));
    Matrix h = x;
    for (int l = 0; l < config_.layers; ++l) h = layer_forward(params, l, h, &c.layers[static_cast<std::size_t>(l)]);
    Vector out = h * params.at(prefix_ + "out.w");
    out.array() += params.at(prefix_ + "out.b")(0, 0);
    if (!out.allFinite()) throw NumericalFault("transformer output is not finite");
    c.top = std::move(h);
    return out;
}

Matrix Transformer::layer_backward(const Parameters& params, int layer, const LayerCache& c, const Matrix& dy,
                                   Parameters& grads) const {
    const auto& cfg = config_;
    const double scale = cfg.scaled ? 1.0 / std::sqrt(static_cast<double>(cfg.d_head)) : 1.0;
    Matrix dz = dy.array() * (c.z.array() > 0.0).cast<double>();
    Matrix dx = dz;  // residual path
    Matrix dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (int h = 0; h < cfg.heads; ++h) {
        const auto off = h * cfg.d_head;
        const auto& a = c.attn[static_cast<std::size_t>(h)];
        const auto dout = dz.middleCols(off, cfg.d_head);
        const Matrix da = dout * c.v.middleCols(off, cfg.d_head).transpose();
        dv.middleCols(off, cfg.d_head).noalias() = a.transpose() * dout;
        // softmax: dS = A o (dA - rowsum(dA o A))
        const Eigen::VectorXd inner = (da.array() * a.array()).rowwise().sum();
        Matrix ds = a.array() * (da.colwise() - inner).array();
        if (scale != 1.0) ds *= scale;
        dq.middleCols(off, cfg.d_head).noalias() = ds * c.k.middleCols(off, cfg.d_head);
        dk.middleCols(off, cfg.d_head).noalias() = ds.transpose() * c.q.middleCols(off, cfg.d_head);
    }
    const auto& wq = params.at(key(layer, "wq"));
    const auto& wk = params.at(key(layer, "wk"));
    const auto& wv = params.at(key(layer, "wv"));
    grads.at(key(layer, "wq")).noalias() += c.x.transpose() * dq;
    grads.at(key(layer, "wk")).noalias() += c.x.transpose() * dk;
    grads.at(key(layer, "wv")).noalias() += c.x.transpose() * dv;
    dx.noalias() += dq * wq.transpose();
    dx.noalias() += dk * wk.transpose();
    dx.noalias() += dv * wv.transpose();
    return dx;
}

Matrix Transformer::backward(const Parameters& params, const Cache& c, const Vector& dpred, Parameters& grads) const {
    if (c.layers.size() != static_cast<std::size_t>(config_.layers) || c.top.rows() != dpred.size())
        throw ConfigError("transformer backward: cache does not match this model or gradient");
    grads.at(prefix_ + "out.w").noalias() += c.top.transpose() * dpred;
    grads.at(prefix_ + "out.b")(0, 0) += dpred.sum();
    Matrix d = dpred * params.at(prefix_ + "out.w").transpose();
    for (int l = config_.layers - 1; l >= 0; --l) d = layer_backward(params, l, c.layers[static_cast<std::size_t>(l)], d, grads);
    return d;
}

}  // namespace quietroom
