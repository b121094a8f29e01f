#pragma once

// Independent reference implementations shared by the unit suites and the
// acceptance run. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "quietroom/dsp.hpp"
#include "quietroom/regressor.hpp"
#include "quietroom/train.hpp"
#include "quietroom/types.hpp"
#include "support.hpp"

namespace qrtest {

using namespace quietroom;

// Brute-force linear cross-correlation, r(l) = sum_n a[n] b[n + l].
inline int xcorr_argmax(const std::vector<double>& a, const std::vector<double>& b, int max_lag) {
    const auto n = static_cast<int>(a.size());
    int best = 0;
    double best_v = -1e300;
    for (int lag = -max_lag; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const int j = i + lag;
            if (j >= 0 && j < n) acc += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(j)];
        }
        if (acc > best_v) {
            best_v = acc;
            best = lag;
        }
    }
    return best;
}

// other[n] = ref[n - delay], cut from one longer noise realisation.
inline std::pair<dsp::MonoClip, dsp::MonoClip> delayed_pair(Rng& rng, std::size_t n, int delay) {
    const std::size_t pad = 64;
    const auto base = white_noise(rng, n + 2 * pad);
    dsp::MonoClip a, b;
    a.samples.assign(base.begin() + pad, base.begin() + pad + n);
    b.samples.assign(base.begin() + static_cast<std::ptrdiff_t>(pad) - delay,
                     base.begin() + static_cast<std::ptrdiff_t>(pad) - delay + static_cast<std::ptrdiff_t>(n));
    return {a, b};
}

// Walk every second and count the events at or before it.
inline std::vector<int> replay_occupancy(const std::vector<EntryExitEvent>& events, std::int64_t duration) {
    std::vector<int> out(static_cast<std::size_t>(duration), 0);
    for (std::int64_t s = 0; s < duration; ++s) {
        int n = 0;
        for (const auto& e : events)
            if (e.timestamp <= static_cast<double>(s)) n += e.delta;
        out[static_cast<std::size_t>(s)] = n;
    }
    return out;
}

// Random valid event list: persons enter and leave at random times.
inline std::vector<EntryExitEvent> random_events(Rng& rng, std::int64_t duration) {
    std::vector<EntryExitEvent> ev;
    const auto people = rng.uniform_int(0, 30);
    for (std::int64_t p = 1; p <= people; ++p) {
        // Whole, half and arbitrary seconds, so boundary ties are exercised.
        auto when = [&] {
            const double t = rng.uniform(0.0, static_cast<double>(duration));
            switch (rng.uniform_int(0, 2)) {
                case 0: return std::floor(t);
                case 1: return std::floor(t) + 0.5;
                default: return t;
            }
        };
        double a = when(), b = when();
        if (b < a) std::swap(a, b);
        ev.push_back({a, +1, static_cast<std::uint64_t>(p)});
        if (rng.bernoulli(0.7) && b > a) ev.push_back({b, -1, static_cast<std::uint64_t>(p)});
    }
    // Entries before exits at equal times keep every prefix non-negative.
    std::sort(ev.begin(), ev.end(), [](const auto& x, const auto& y) {
        return x.timestamp != y.timestamp ? x.timestamp < y.timestamp : x.delta > y.delta;
    });
    return ev;
}

// T = 4, d = 8, two heads, one layer.
inline ModelConfig tiny_config(embed::EncoderKind kind, bool append, std::optional<double> clip) {
    ModelConfig m;
    m.encoder = kind;
    m.cnn = {4, 4, 2, 3, 8};
    m.frozen_mels = 3;
    m.frozen_dim = 6;
    m.append_prob = append;
    m.clip_bound = clip;
    m.transformer = {1, 2, 8, 4, false};
    return m;
}

struct Sample {
    Matrix rows;
    std::vector<double> probs;
    std::vector<std::uint8_t> mask;
    Vector target;
    WindowInput input() const { return {&rows, &probs, &mask}; }
};

inline Sample random_sample(const ModelConfig& cfg, Rng& rng, int t = 4) {
    Sample s;
    s.rows.resize(t, cfg.input_dim());
    for (Eigen::Index i = 0; i < s.rows.size(); ++i) s.rows.data()[i] = rng.normal();
    s.target.resize(t);
    for (int i = 0; i < t; ++i) {
        s.probs.push_back(rng.uniform());
        s.mask.push_back(1);
        s.target[i] = rng.uniform(0.0, 5.0);
    }
    return s;
}

// Fresh, identically seeded noise for every evaluation so the loss is a
// deterministic function of the parameters.
struct SeededDp {
    explicit SeededDp(privacy::PrivacyParams p) : params(p) {}
    privacy::PrivacyParams params;
    privacy::NoiseSource source = privacy::NoiseSource::seeded(99);
    privacy::PrivacyLedger ledger;
    DpContext context() {
        source = privacy::NoiseSource::seeded(99);
        return {params, &source, &ledger};
    }
};

inline double loss_of(const Regressor& model, const Sample& s, SeededDp* dp) {
    DpContext ctx;
    if (dp) ctx = dp->context();
    return mse_loss(model.forward(s.input(), dp ? &ctx : nullptr), s.target);
}

inline Parameters analytic_grads(const Regressor& model, const Sample& s, SeededDp* dp) {
    DpContext ctx;
    if (dp) ctx = dp->context();
    Regressor::Cache cache;
    const Vector pred = model.forward(s.input(), dp ? &ctx : nullptr, &cache);
    Parameters g = model.params().zeros_like();
    model.backward(cache, mse_gradient(pred, s.target), g);
    return g;
}

struct GradCheck {
    double worst = 0.0;
    std::string where;
    int checked = 0;
    int kinks = 0;  // coordinates excluded because the loss is not smooth within +-h
};

// Gradients near zero are compared against the finite-difference roundoff
// scale (a small multiple of eps * |L| / h) instead of their own magnitude.
inline double relative_error(double a, double n, double floor) {
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    return std::abs(a - n) / denom;
}

// Central differences at h = 1e-5. Parameters are jittered first so that
// zero-initialised biases do not sit exactly on ReLU kinks. Checks 50 random
// scalars plus three from every block, or every scalar when `all` is set.
// A coordinate whose h and h/2 estimates disagree has a ReLU or max-pool
// switch inside the step; it is counted as a kink, not compared.
inline GradCheck check_gradients(Regressor& model, const Sample& s, SeededDp* dp, Rng& rng, bool all = false) {
    const double h = 1e-5;
    for (std::size_t b = 0; b < model.params().size(); ++b)
        for (Eigen::Index i = 0; i < model.params()[b].size(); ++i) model.params()[b].data()[i] += 0.05 * rng.normal();
    auto g = analytic_grads(model, s, dp);
    const double floor = 1e5 * std::numeric_limits<double>::epsilon() * loss_of(model, s, dp) / h;
    std::vector<std::size_t> picks;
    const auto total = model.params().scalar_count();
    if (all) {
        for (std::size_t i = 0; i < total; ++i) picks.push_back(i);
    } else {
        for (int i = 0; i < 50; ++i) picks.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1)));
        std::size_t offset = 0;
        for (std::size_t b = 0; b < model.params().size(); ++b) {
            const auto n = static_cast<std::size_t>(model.params()[b].size());
            for (int i = 0; i < 3; ++i) picks.push_back(offset + static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
            offset += n;
        }
    }
    GradCheck out;
    for (auto idx : picks) {
        double& p = model.params().scalar(idx);
        const double saved = p;
        p = saved + h;
        const double up = loss_of(model, s, dp);
        p = saved - h;
        const double dn = loss_of(model, s, dp);
        p = saved + h / 2;
        const double up2 = loss_of(model, s, dp);
        p = saved - h / 2;
        const double dn2 = loss_of(model, s, dp);
        p = saved;
        const double numeric = (up - dn) / (2 * h);
        if (relative_error(numeric, (up2 - dn2) / h, floor) > 1e-5) {
            ++out.kinks;
            continue;
        }
        const double err = relative_error(g.scalar(idx), numeric, floor);
        if (err > out.worst) {
            std::size_t rem = idx, b = 0;
            while (rem >= static_cast<std::size_t>(model.params()[b].size())) rem -= static_cast<std::size_t>(model.params()[b++].size());
            out.where = model.params().name(b) + "[" + std::to_string(rem) + "] analytic " + std::to_string(g.scalar(idx)) +
                        " numeric " + std::to_string(numeric);
        }
        out.worst = std::max(out.worst, err);
        ++out.checked;
    }
    return out;
}

}  // namespace qrtest
