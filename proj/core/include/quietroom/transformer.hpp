#pragma once

// Stacked self-attention encoder with a linear per-position output head.
//
// Layer l: per head h, A_h = softmax(Q_h K_h^T) with Q = X Wq, K = X Wk,
// V = X Wv; Y = ReLU(X + [A_1 V_1, ..., A_H V_H]). Softmax logits are not
// scaled by 1/sqrt(d_head) unless `scaled` is set. The head maps each
// position to one value: y = X w + b.

#include <string>
#include <vector>

#include "quietroom/params.hpp"
#include "quietroom/random.hpp"

namespace quietroom {

struct TransformerConfig {
    int layers = 4;
    int heads = 8;
    int d_emb = 128;
    int d_head = 16;
    bool scaled = false;

    void validate() const;
};

class Transformer {
public:
    explicit Transformer(TransformerConfig config, std::string prefix = "tf.");

    const TransformerConfig& config() const { return config_; }

    /// Adds L{l}.wq/wk/wv (d_emb x heads*d_head each; head h owns columns
    /// [h*d_head, (h+1)*d_head)), out.w (d_emb x 1) and out.b (1 x 1).
    void init(Parameters& params, Rng& rng) const;

    struct LayerCache {
        Matrix x, q, k, v, z;
        std::vector<Matrix> attn;  // one T x T matrix per head
    };
    struct Cache {
        std::vector<LayerCache> layers;
        Matrix top;  // input to the output head
    };

    /// One attention layer; x is T x d_emb.
    Matrix layer_forward(const Parameters& params, int layer, const Matrix& x, LayerCache* cache = nullptr) const;

    /// Row-stochastic attention weights of every head of one layer.
    std::vector<Matrix> attention_weights(const Parameters& params, int layer, const Matrix& x) const;

    /// x: T x d_emb -> T predictions. Throws NumericalFault on non-finite activations.
    Vector forward(const Parameters& params, const Matrix& x, Cache* cache = nullptr) const;

    /// Accumulates parameter gradients for dpred (length T) and returns dL/dx.
    Matrix backward(const Parameters& params, const Cache& cache, const Vector& dpred, Parameters& grads) const;

private:
    TransformerConfig config_;
    std::string prefix_;

    std::string key(int layer, const char* name) const;
    Matrix layer_backward(const Parameters& params, int layer, const LayerCache& c, const Matrix& dy, Parameters& grads) const;
};

/// Row-wise softmax with the row maximum subtracted first.
Matrix softmax_rows(const Matrix& logits);

double mse_loss(const Vector& pred, const Vector& truth);
/// d mse / d pred.
Vector mse_gradient(const Vector& pred, const Vector& truth);

}  // namespace quietroom
