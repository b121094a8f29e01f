#pragma once

// Trainable per-second encoder: conv3x3(c1) -> ReLU -> maxpool2 ->
// conv3x3(c2) -> ReLU -> maxpool2 -> flatten -> linear(out_dim).
// Convolutions use zero "same" padding and run as im2col + GEMM over a
// whole window of chunks at once.

#include <string>
#include <vector>

#include "quietroom/params.hpp"
#include "quietroom/random.hpp"

namespace quietroom {

struct CnnSpec {
    int height = 12;  // pooled frames
    int width = 16;   // pooled mel bands
    int c1 = 16;
    int c2 = 32;
    int out_dim = 128;

    int input_dim() const { return height * width; }
    int flat_dim() const { return (height / 2 / 2) * (width / 2 / 2) * c2; }
    void validate() const;
};

class CnnEncoder {
public:
    explicit CnnEncoder(CnnSpec spec, std::string prefix = "cnn.");

    const CnnSpec& spec() const { return spec_; }

    /// Adds conv1.{w,b}, conv2.{w,b}, fc.{w,b} under the prefix.
    void init(Parameters& params, Rng& rng) const;

    struct Cache {
        Eigen::Index batch = 0;
        Matrix cols1, z1;
        std::vector<Eigen::Index> arg1;
        Matrix cols2, z2;
        std::vector<Eigen::Index> arg2;
        Matrix flat;
    };

    /// x: N x (height * width), one flattened chunk per row. Returns N x out_dim.
    Matrix forward(const Parameters& params, const Matrix& x, Cache* cache = nullptr) const;

    /// Accumulates parameter gradients for dout (N x out_dim) into grads.
    void backward(const Parameters& params, const Cache& cache, const Matrix& dout, Parameters& grads) const;

private:
    CnnSpec spec_;
    std::string prefix_;
};

namespace cnn_detail {
/// (N*H*W) x C activations -> (N*H*W) x 9C patches, column (dy*3+dx)*C + c.
Matrix im2col(const Matrix& in, Eigen::Index n, int h, int w);
/// Adjoint of im2col.
Matrix col2im(const Matrix& cols, Eigen::Index n, int h, int w, int channels);
}  // namespace cnn_detail

}  // namespace quietroom
