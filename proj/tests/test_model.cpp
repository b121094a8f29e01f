#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "quietroom/adam.hpp"
#include "quietroom/cnn_encoder.hpp"
#include "quietroom/error.hpp"
#include "quietroom/regressor.hpp"
#include "quietroom/train.hpp"
#include "quietroom/transformer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace quietroom;
using namespace qrtest;

namespace {

// Direct-loop evaluation of one self-attention layer.
Matrix naive_attention_layer(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv, int heads, int dh, bool scaled) {
    const auto t = x.rows();
    const auto d = x.cols();
    Matrix y = x;
    for (int h = 0; h < heads; ++h) {
        for (Eigen::Index i = 0; i < t; ++i) {
            std::vector<double> logits(static_cast<std::size_t>(t));
            for (Eigen::Index j = 0; j < t; ++j) {
                double acc = 0;
                for (int c = 0; c < dh; ++c) {
                    double q = 0, k = 0;
                    for (Eigen::Index e = 0; e < d; ++e) {
                        q += x(i, e) * wq(e, h * dh + c);
                        k += x(j, e) * wk(e, h * dh + c);
                    }
                    acc += q * k;
                }
                logits[static_cast<std::size_t>(j)] = scaled ? acc / std::sqrt(static_cast<double>(dh)) : acc;
            }
            const double m = *std::max_element(logits.begin(), logits.end());
            double z = 0;
            for (auto& l : logits) z += (l = std::exp(l - m));
            for (int c = 0; c < dh; ++c) {
                double acc = 0;
                for (Eigen::Index j = 0; j < t; ++j) {
                    double v = 0;
                    for (Eigen::Index e = 0; e < d; ++e) v += x(j, e) * wv(e, h * dh + c);
                    acc += logits[static_cast<std::size_t>(j)] / z * v;
                }
                y(i, h * dh + c) += acc;
            }
        }
    }
    return y.cwiseMax(0.0);
}

// Direct-loop CNN for one flattened chunk.
Vector naive_cnn(const Parameters& p, const CnnSpec& s, const Eigen::RowVectorXd& chunk) {
    auto conv = [](const std::vector<double>& in, int h, int w, int cin, const Matrix& wt, const Matrix& b) {
        const auto cout = wt.rows();
        std::vector<double> out(static_cast<std::size_t>(h * w * cout));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (Eigen::Index k = 0; k < cout; ++k) {
                    double acc = b(0, k);
                    for (int dy = 0; dy < 3; ++dy)
                        for (int dx = 0; dx < 3; ++dx) {
                            const int sy = y + dy - 1, sx = x + dx - 1;
                            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                            for (int c = 0; c < cin; ++c)
                                acc += wt(k, (dy * 3 + dx) * cin + c) * in[static_cast<std::size_t>((sy * w + sx) * cin + c)];
                        }
                    out[static_cast<std::size_t>((y * w + x) * cout + k)] = std::max(0.0, acc);
                }
        return out;
    };
    auto pool = [](const std::vector<double>& in, int h, int w, int c) {
        std::vector<double> out(static_cast<std::size_t>((h / 2) * (w / 2) * c));
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w / 2; ++x)
                for (int k = 0; k < c; ++k) {
                    double m = -1e300;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            m = std::max(m, in[static_cast<std::size_t>(((2 * y + dy) * w + 2 * x + dx) * c + k)]);
                    out[static_cast<std::size_t>((y * (w / 2) + x) * c + k)] = m;
                }
        return out;
    };
    std::vector<double> img(chunk.data(), chunk.data() + chunk.size());
    auto a = pool(conv(img, s.height, s.width, 1, p.at("cnn.conv1.w"), p.at("cnn.conv1.b")), s.height, s.width, s.c1);
    auto b = pool(conv(a, s.height / 2, s.width / 2, s.c1, p.at("cnn.conv2.w"), p.at("cnn.conv2.b")), s.height / 2, s.width / 2, s.c2);
    const auto& fw = p.at("cnn.fc.w");
    Vector out = p.at("cnn.fc.b").row(0).transpose();
    for (Eigen::Index o = 0; o < fw.cols(); ++o)
        for (std::size_t i = 0; i < b.size(); ++i) out[o] += b[i] * fw(static_cast<Eigen::Index>(i), o);
    return out;
}

std::vector<TrainWindow> constant_windows(const ModelConfig& cfg, double c, int count, Rng& rng) {
    std::vector<TrainWindow> out;
    for (int k = 0; k < count; ++k) {
        TrainWindow w;
        w.rows.resize(6, cfg.input_dim());
        for (Eigen::Index i = 0; i < w.rows.size(); ++i) w.rows.data()[i] = rng.normal();
        for (int i = 0; i < 6; ++i) {
            w.probs.push_back(0.1);
            w.mask.push_back(1);
            w.seconds.push_back(k * 6 + i);
        }
        w.target = Vector::Constant(6, c);
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<const TrainWindow*> pointers(const std::vector<TrainWindow>& w) {
    std::vector<const TrainWindow*> out;
    for (const auto& x : w) out.push_back(&x);
    return out;
}

}  // namespace

TEST_CASE("gradient check on the tiny transformer with the trainable encoder") {
    Rng rng(1);
    for (bool append : {false, true})
        for (std::optional<double> clip : {std::optional<double>{}, std::optional<double>{0.7}}) {
            const auto cfg = tiny_config(embed::EncoderKind::Trainable, append, clip);
            Regressor model(cfg, 17);
            const auto s = random_sample(cfg, rng);
            const auto r = check_gradients(model, s, nullptr, rng);
            CAPTURE(append);
            CAPTURE(clip.has_value());
            CAPTURE(r.where);
            CHECK(r.worst < 1e-4);
            CHECK(r.checked >= 50);
        }
}

TEST_CASE("gradient check through the frozen encoder, adapter and Laplace release") {
    Rng rng(2);
    auto cfg = tiny_config(embed::EncoderKind::Frozen, true, 1.0);
    REQUIRE(cfg.has_adapter());
    Regressor model(cfg, 5);
    const auto s = random_sample(cfg, rng);
    CHECK(check_gradients(model, s, nullptr, rng).worst < 1e-4);

    SeededDp dp({1.0, 2.0});
    CHECK(check_gradients(model, s, &dp, rng).worst < 1e-4);

    auto tcfg = tiny_config(embed::EncoderKind::Trainable, true, 1.0);
    Regressor trainable(tcfg, 6);
    const auto ts = random_sample(tcfg, rng);
    CHECK(check_gradients(trainable, ts, &dp, rng).worst < 1e-4);
}

TEST_CASE("gradient check with masked rows and two layers") {
    Rng rng(3);
    auto cfg = tiny_config(embed::EncoderKind::Trainable, true, 0.9);
    cfg.transformer.layers = 2;
    Regressor model(cfg, 8);
    auto s = random_sample(cfg, rng, 6);
    s.mask[2] = 0;
    s.mask[4] = 0;
    const auto r = check_gradients(model, s, nullptr, rng);
    CAPTURE(r.where);
    CHECK(r.worst < 1e-4);
}

TEST_CASE("backward is linear in the loss gradient and zero when the head is zero") {
    Rng rng(4);
    const auto cfg = tiny_config(embed::EncoderKind::Trainable, true, 0.8);
    Regressor model(cfg, 9);
    const auto s = random_sample(cfg, rng);
    Regressor::Cache cache;
    const Vector pred = model.forward(s.input(), nullptr, &cache);
    const Vector d = mse_gradient(pred, s.target);
    auto g1 = model.params().zeros_like();
    auto g2 = model.params().zeros_like();
    model.backward(cache, d, g1);
    model.backward(cache, 2.0 * d, g2);
    for (std::size_t b = 0; b < g1.size(); ++b) CHECK(g2[b] == 2.0 * g1[b]);

    model.params().at("tf.out.w").setZero();
    Regressor::Cache c2;
    model.forward(s.input(), nullptr, &c2);
    auto g3 = model.params().zeros_like();
    model.backward(c2, d, g3);
    for (std::size_t b = 0; b < g3.size(); ++b) {
        if (g3.name(b) == "tf.out.w" || g3.name(b) == "tf.out.b") continue;
        CAPTURE(g3.name(b));
        CHECK(g3[b].isZero(0.0));
    }
}

TEST_CASE("attention layer matches a direct-loop evaluation") {
    Rng rng(5);
    for (bool scaled : {false, true}) {
        TransformerConfig tc{2, 4, 16, 4, scaled};
        Transformer tf(tc);
        Parameters p;
        tf.init(p, rng);
        Matrix x(7, 16);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
        const Matrix y = tf.layer_forward(p, 1, x);
        const Matrix ref = naive_attention_layer(x, p.at("tf.L1.wq"), p.at("tf.L1.wk"), p.at("tf.L1.wv"), 4, 4, scaled);
        CHECK((y - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("attention weights are row-stochastic and output length follows T") {
    Rng rng(6);
    TransformerConfig tc;
    Transformer tf(tc);
    Parameters p;
    tf.init(p, rng);
    for (int t : {1, 7, 60}) {
        Matrix x(t, 128);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(0.0, 0.3);
        for (int l = 0; l < tc.layers; ++l) {
            for (const auto& a : tf.attention_weights(p, l, x)) {
                CHECK((a.array() >= 0.0).all());
                for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
            }
            x = tf.layer_forward(p, l, x);
        }
    }
    Matrix x(9, 128);
    x.setRandom();
    const Vector a = tf.forward(p, x);
    CHECK(a.size() == 9);
    CHECK(tf.forward(p, x) == a);
    x(0, 0) = NAN;
    CHECK_THROWS_AS(tf.forward(p, x), NumericalFault);
    CHECK_THROWS_AS(Transformer(TransformerConfig{1, 3, 8, 4, false}), ConfigError);
}

TEST_CASE("softmax and loss") {
    Matrix l(1, 3);
    l << 1.0, 2.0, 3.0;
    const Matrix s = softmax_rows(l);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(s(0, 2) == doctest::Approx(std::exp(3.0) / z).epsilon(1e-15));
    Matrix big(1, 2);
    big << 1000.0, 1000.0;
    CHECK(softmax_rows(big)(0, 0) == 0.5);

    Vector pred(3), truth(3);
    pred << 1, 2, 3;
    truth << 2, 2, 5;
    CHECK(mse_loss(pred, truth) == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
    CHECK(mse_loss(truth, truth) == 0.0);
    Vector grad(3);
    grad << -2.0 / 3, 0, -4.0 / 3;
    CHECK(mse_gradient(pred, truth).isApprox(grad));
    CHECK_THROWS_AS(mse_loss(pred, Vector(2)), ConfigError);
}

TEST_CASE("cnn encoder matches direct loops; im2col and col2im are adjoint") {
    Rng rng(7);
    CnnSpec spec{12, 16, 4, 5, 6};
    CnnEncoder cnn(spec);
    Parameters p;
    cnn.init(p, rng);
    for (std::size_t b = 0; b < p.size(); ++b)
        for (Eigen::Index i = 0; i < p[b].size(); ++i) p[b].data()[i] += 0.05 * rng.normal();
    Matrix x(3, spec.input_dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const Matrix y = cnn.forward(p, x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) CHECK((y.row(r).transpose() - naive_cnn(p, spec, x.row(r))).cwiseAbs().maxCoeff() < 1e-12);

    Matrix a(2 * 5 * 6, 3), c(2 * 5 * 6, 27);
    a.setRandom();
    c.setRandom();
    const double lhs = (cnn_detail::im2col(a, 2, 5, 6).array() * c.array()).sum();
    const double rhs = (a.array() * cnn_detail::col2im(c, 2, 5, 6, 3).array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("adam") {
    Parameters p;
    p.add("w", 2, 2) << 1.0, -2.0, 0.5, 3.0;
    SUBCASE("first step moves each parameter by lr against the gradient sign") {
        Adam opt(p);
        auto g = p.zeros_like();
        g[0] << 0.3, -4.0, 1e-3, -0.2;
        const Matrix before = p[0];
        opt.step(p, g);
        const Matrix expect = before.array() - 0.001 * g[0].array().sign();
        CHECK((p[0] - expect).cwiseAbs().maxCoeff() < 1e-7);
        CHECK(opt.steps() == 1);
    }
    SUBCASE("zero gradient from a fresh state leaves parameters unchanged") {
        Adam opt(p);
        const Matrix before = p[0];
        opt.step(p, p.zeros_like());
        CHECK(p[0] == before);
        CHECK(opt.first_moment()[0].isZero(0.0));
        CHECK(opt.second_moment()[0].isZero(0.0));
    }
    SUBCASE("zero gradient after a step decays the moments and coasts on momentum") {
        Adam opt(p);
        auto g = p.zeros_like();
        g[0].setConstant(0.5);
        opt.step(p, g);
        const Matrix before = p[0];
        const Matrix m1 = opt.first_moment()[0];
        const Matrix v1 = opt.second_moment()[0];
        opt.step(p, p.zeros_like());
        CHECK(opt.first_moment()[0] == 0.9 * m1);
        CHECK(opt.second_moment()[0] == 0.999 * v1);
        const double mh = 0.9 * 0.05 / (1 - 0.81);
        const double vh = 0.999 * 0.00025 / (1 - 0.999 * 0.999);
        const double step = 0.001 * mh / (std::sqrt(vh) + 1e-8);
        CHECK((before.array() - p[0].array() - step).abs().maxCoeff() < 1e-15);
    }
    SUBCASE("constant gradient: steps follow the recurrence and approach lr") {
        Adam opt(p);
        auto g = p.zeros_like();
        g[0].setConstant(0.25);
        double m = 0, v = 0;
        double last_step = 0;
        for (int t = 1; t <= 3000; ++t) {
            const Matrix before = p[0];
            opt.step(p, g);
            m = 0.9 * m + 0.1 * 0.25;
            v = 0.999 * v + 0.001 * 0.0625;
            const double mh = m / (1 - std::pow(0.9, t));
            const double vh = v / (1 - std::pow(0.999, t));
            const double expect = 0.001 * mh / (std::sqrt(vh) + 1e-8);
            last_step = before(0, 0) - p[0](0, 0);
            CHECK(last_step == doctest::Approx(expect).epsilon(1e-9));
        }
        CHECK(last_step == doctest::Approx(0.001).epsilon(1e-4));
    }
    SUBCASE("layout mismatch") {
        Adam opt(p);
        Parameters other;
        other.add("w", 3, 1);
        CHECK_THROWS_AS(opt.step(p, other), ConfigError);
    }
}

TEST_CASE("training on a constant target") {
    Rng rng(8);
    auto cfg = tiny_config(embed::EncoderKind::Trainable, false, std::nullopt);
    const auto windows = constant_windows(cfg, 2.5, 8, rng);
    const auto ptrs = pointers(windows);
    TrainConfig tc;
    tc.epochs = 60;
    tc.adam.lr = 0.01;
    tc.init_bias_to_mean = false;
    tc.seed = 3;
    const auto r = train(cfg, ptrs, tc);
    REQUIRE(r.loss_history.size() == 60);
    for (double l : r.loss_history) CHECK(std::isfinite(l));
    CHECK(r.loss_history.back() < 1e-3);
    for (const auto& w : windows) {
        const Vector pred = r.model.forward(w.input());
        CHECK((pred.array() - 2.5).abs().maxCoeff() < 0.1);
    }

    const auto again = train(cfg, ptrs, tc);
    CHECK(again.loss_history == r.loss_history);
    for (std::size_t b = 0; b < r.model.params().size(); ++b) CHECK(again.model.params()[b] == r.model.params()[b]);

    TrainConfig other = tc;
    other.seed = 4;
    CHECK(train(cfg, ptrs, other).loss_history != r.loss_history);

    CHECK_THROWS_AS(train(cfg, std::span<const TrainWindow* const>{}, tc), DataError);
}

TEST_CASE("training loss trends down after epoch 3 at the default learning rate") {
    // Per-window Adam steps are not monotone epoch to epoch; block means are.
    Rng rng(12);
    auto cfg = tiny_config(embed::EncoderKind::Trainable, false, std::nullopt);
    const auto windows = constant_windows(cfg, 2.5, 16, rng);
    TrainConfig tc;
    tc.epochs = 30;
    tc.init_bias_to_mean = false;
    const auto h = train(cfg, pointers(windows), tc).loss_history;
    auto block = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (std::size_t e = a; e < b; ++e) s += h[e];
        return s / static_cast<double>(b - a);
    };
    for (double l : h) CHECK(std::isfinite(l));
    CHECK(block(3, 10) >= block(10, 20));
    CHECK(block(10, 20) >= block(20, 30));
    CHECK(h.back() < h[3]);
}

TEST_CASE("training diverges loudly") {
    Rng rng(9);
    auto cfg = tiny_config(embed::EncoderKind::Trainable, false, std::nullopt);
    auto windows = constant_windows(cfg, 1.0, 2, rng);
    windows[1].target[0] = std::numeric_limits<double>::infinity();
    TrainConfig tc;
    tc.epochs = 2;
    tc.init_bias_to_mean = false;
    CHECK_THROWS_AS(train(cfg, pointers(windows), tc), NumericalFault);
}

TEST_CASE("input scaler and checkpoint round trip") {
    Rng rng(10);
    auto cfg = tiny_config(embed::EncoderKind::Frozen, true, 0.5);
    auto windows = constant_windows(cfg, 1.0, 5, rng);
    for (auto& w : windows) w.rows.array() = 3.0 + 2.0 * w.rows.array();
    windows[0].mask[1] = 0;
    windows[0].rows.row(1).setConstant(1000.0);
    const auto ptrs = pointers(windows);
    const auto [mean, inv] = fit_input_scaler(ptrs);
    double direct = 0;
    int n = 0;
    for (const auto& w : windows)
        for (Eigen::Index i = 0; i < w.rows.rows(); ++i)
            if (w.mask[static_cast<std::size_t>(i)]) {
                direct += w.rows(i, 0);
                ++n;
            }
    CHECK(mean[0] == doctest::Approx(direct / n).epsilon(1e-12));

    TrainConfig tc;
    tc.epochs = 2;
    const auto r = train(cfg, ptrs, tc);
    qrtest::TempDir dir;
    r.model.save(dir.file("model.qrp"), {{"note", "x"}});
    nlohmann::json meta;
    const auto loaded = Regressor::load(dir.file("model.qrp"), &meta);
    CHECK(meta["note"] == "x");
    CHECK(loaded.input_mean() == r.model.input_mean());
    for (const auto& w : windows) CHECK(loaded.forward(w.input()) == r.model.forward(w.input()));
}

TEST_CASE("model config validation and serialisation") {
    auto cfg = tiny_config(embed::EncoderKind::Trainable, true, 1.0);
    const auto back = model_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    cfg.clip_bound = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(ModelConfig{}.released_dim() == 128);
    CHECK_FALSE(ModelConfig{}.has_adapter());
}
