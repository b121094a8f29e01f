#include "quietroom/cnn_encoder.hpp"

#include <cmath>
#include <limits>

#include "quietroom/error.hpp"

namespace quietroom {

void CnnSpec::validate() const {
    if (height < 4 || width < 4) throw ConfigError("cnn: input must be at least 4x4");
    if (c1 < 1 || c2 < 1 || out_dim < 1) throw ConfigError("cnn: channel and output sizes must be positive");
}

namespace cnn_detail {

Matrix im2col(const Matrix& in, Eigen::Index n, int h, int w) {
    const auto c = in.cols();
    Matrix cols = Matrix::Zero(n * h * w, 9 * c);
    for (Eigen::Index b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto row = (b * h + y) * w + x;
                for (int dy = 0; dy < 3; ++dy) {
                    const int sy = y + dy - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (int dx = 0; dx < 3; ++dx) {
                        const int sx = x + dx - 1;
                        if (sx < 0 || sx >= w) continue;
                        cols.row(row).segment((dy * 3 + dx) * c, c) = in.row((b * h + sy) * w + sx);
                    }
                }
            }
    return cols;
}

Matrix col2im(const Matrix& cols, Eigen::Index n, int h, int w, int channels) {
    Matrix out = Matrix::Zero(n * h * w, channels);
    for (Eigen::Index b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto row = (b * h + y) * w + x;
                for (int dy = 0; dy < 3; ++dy) {
                    const int sy = y + dy - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (int dx = 0; dx < 3; ++dx) {
                        const int sx = x + dx - 1;
                        if (sx < 0 || sx >= w) continue;
                        out.row((b * h + sy) * w + sx) += cols.row(row).segment((dy * 3 + dx) * channels, channels);
                    }
                }
            }
    return out;
}

}  // namespace cnn_detail

namespace {

// 2x2 stride-2 max pool over (N*H*W) x C; trailing odd row/column dropped.
Matrix max_pool(const Matrix& in, Eigen::Index n, int h, int w, std::vector<Eigen::Index>& arg) {
    const int ho = h / 2, wo = w / 2;
    const auto c = in.cols();
    Matrix out(n * ho * wo, c);
    arg.assign(static_cast<std::size_t>(out.size()), 0);
    for (Eigen::Index b = 0; b < n; ++b)
        for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
                const auto orow = (b * ho + y) * wo + x;
                for (Eigen::Index ch = 0; ch < c; ++ch) {
                    double best = -std::numeric_limits<double>::infinity();
                    Eigen::Index best_row = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const auto irow = (b * h + 2 * y + dy) * w + 2 * x + dx;
                            if (in(irow, ch) > best) {
                                best = in(irow, ch);
                                best_row = irow;
                            }
                        }
                    out(orow, ch) = best;
                    arg[static_cast<std::size_t>(orow * c + ch)] = best_row;
                }
            }
    return out;
}

Matrix max_pool_backward(const Matrix& dout, const std::vector<Eigen::Index>& arg, Eigen::Index in_rows) {
    const auto c = dout.cols();
    Matrix din = Matrix::Zero(in_rows, c);
    for (Eigen::Index r = 0; r < dout.rows(); ++r)
        for (Eigen::Index ch = 0; ch < c; ++ch) din(arg[static_cast<std::size_t>(r * c + ch)], ch) += dout(r, ch);
    return din;
}

void fill_uniform(Matrix& m, double bound, Rng& rng) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-bound, bound);
}

}  // namespace

CnnEncoder::CnnEncoder(CnnSpec spec, std::string prefix) : spec_(spec), prefix_(std::move(prefix)) { spec_.validate(); }

void CnnEncoder::init(Parameters& params, Rng& rng) const {
    const auto& s = spec_;
    fill_uniform(params.add(prefix_ + "conv1.w", s.c1, 9), 1.0 / 3.0, rng);
    params.add(prefix_ + "conv1.b", 1, s.c1);
    fill_uniform(params.add(prefix_ + "conv2.w", s.c2, 9 * s.c1), 1.0 / std::sqrt(9.0 * s.c1), rng);
    params.add(prefix_ + "conv2.b", 1, s.c2);
    fill_uniform(params.add(prefix_ + "fc.w", s.flat_dim(), s.out_dim), 1.0 / std::sqrt(static_cast<double>(s.flat_dim())), rng);
    params.add(prefix_ + "fc.b", 1, s.out_dim);
}

Matrix CnnEncoder::forward(const Parameters& params, const Matrix& x, Cache* cache) const {
    const auto& s = spec_;
    if (x.cols() != s.input_dim())
        throw DataError("cnn: expected rows of " + std::to_string(s.input_dim()) + " values, got " + std::to_string(x.cols()));
    const auto n = x.rows();
    const int h1 = s.height, w1 = s.width, h2 = h1 / 2, w2 = w1 / 2;

    const auto& cw1 = params.at(prefix_ + "conv1.w");
    const auto& cb1 = params.at(prefix_ + "conv1.b");
    const auto& cw2 = params.at(prefix_ + "conv2.w");
    const auto& cb2 = params.at(prefix_ + "conv2.b");
    const auto& fw = params.at(prefix_ + "fc.w");
    const auto& fb = params.at(prefix_ + "fc.b");

    // One input channel: the row-major N x (H*W) block is already (N*H*W) x 1.
    const Eigen::Map<const Matrix> in(x.data(), n * h1 * w1, 1);
    Cache local;
    Cache& c = cache ? *cache : local;
    c.batch = n;
    c.cols1 = cnn_detail::im2col(in, n, h1, w1);
    c.z1.noalias() = c.cols1 * cw1.transpose();
    c.z1.rowwise() += cb1.row(0);
    const Matrix a1 = c.z1.cwiseMax(0.0);
    const Matrix p1 = max_pool(a1, n, h1, w1, c.arg1);

    c.cols2 = cnn_detail::im2col(p1, n, h2, w2);
    c.z2.noalias() = c.cols2 * cw2.transpose();
    c.z2.rowwise() += cb2.row(0);
    const Matrix a2 = c.z2.cwiseMax(0.0);
    const Matrix p2 = max_pool(a2, n, h2, w2, c.arg2);

    c.flat = Eigen::Map<const Matrix>(p2.data(), n, s.flat_dim());
    Matrix out = c.flat * fw;
    out.rowwise() += fb.row(0);
    return out;
}

void CnnEncoder::backward(const Parameters& params, const Cache& c, const Matrix& dout, Parameters& grads) const {
    const auto& s = spec_;
    const auto n = c.batch;
    if (dout.rows() != n || dout.cols() != s.out_dim) throw ConfigError("cnn backward: gradient shape mismatch");
    const int h1 = s.height, w1 = s.width, h2 = h1 / 2, w2 = w1 / 2;

    grads.at(prefix_ + "fc.w").noalias() += c.flat.transpose() * dout;
    grads.at(prefix_ + "fc.b") += dout.colwise().sum();
    const Matrix dflat = dout * params.at(prefix_ + "fc.w").transpose();
    const Eigen::Map<const Matrix> dp2(dflat.data(), n * (h2 / 2) * (w2 / 2), s.c2);

    Matrix dz2 = max_pool_backward(dp2, c.arg2, n * h2 * w2);
    dz2.array() *= (c.z2.array() > 0.0).cast<double>();
    grads.at(prefix_ + "conv2.w").noalias() += dz2.transpose() * c.cols2;
    grads.at(prefix_ + "conv2.b") += dz2.colwise().sum();
    const Matrix dcols2 = dz2 * params.at(prefix_ + "conv2.w");
    const Matrix dp1 = cnn_detail::col2im(dcols2, n, h2, w2, s.c1);

    Matrix dz1 = max_pool_backward(dp1, c.arg1, n * h1 * w1);
    dz1.array() *= (c.z1.array() > 0.0).cast<double>();
    grads.at(prefix_ + "conv1.w").noalias() += dz1.transpose() * c.cols1;
    grads.at(prefix_ + "conv1.b") += dz1.colwise().sum();
}

}  // namespace quietroom
