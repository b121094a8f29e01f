#include "quietroom/privacy.hpp"

#include <cmath>

#include "quietroom/embed.hpp"
#include "quietroom/error.hpp"

namespace quietroom::privacy {

void PrivacyParams::validate() const {
    if (!(clip_bound > 0.0) || !std::isfinite(clip_bound)) throw ConfigError("privacy: clip bound C must be positive");
    if (!(epsilon > 0.0)) throw ConfigError("privacy: epsilon must be positive");
}

NoiseSource NoiseSource::system() {
    NoiseSource s;
    s.device_ = std::make_unique<std::random_device>();
    return s;
}

NoiseSource NoiseSource::seeded(std::uint64_t seed) {
    NoiseSource s;
    s.seeded_.emplace(seed);
    return s;
}

NoiseSource::NoiseSource(NoiseSource&&) noexcept = default;
NoiseSource& NoiseSource::operator=(NoiseSource&&) noexcept = default;
NoiseSource::~NoiseSource() = default;

double NoiseSource::centered_uniform() {
    if (seeded_) return seeded_->uniform_open() - 0.5;
    std::uint64_t bits = (static_cast<std::uint64_t>((*device_)()) << 32) ^ static_cast<std::uint64_t>((*device_)());
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53 - 0.5;
}

namespace {
double laplace_from_uniform(double scale, double u) {
    const double s = u < 0.0 ? -1.0 : (u > 0.0 ? 1.0 : 0.0);
    return scale * s * std::log(1.0 - 2.0 * std::abs(u));
}
}  // namespace

double laplace_sample(double scale, NoiseSource& source) {
    if (!(scale > 0.0)) throw ConfigError("laplace_sample: scale must be positive");
    return laplace_from_uniform(scale, source.centered_uniform());
}

double laplace_sample(double scale, Rng& rng) {
    if (!(scale > 0.0)) throw ConfigError("laplace_sample: scale must be positive");
    return laplace_from_uniform(scale, rng.uniform_open() - 0.5);
}

PrivacyLedger::PrivacyLedger(const PrivacyLedger& other) : clips_(other.clips_released()), epsilon_(other.epsilon_) {}

PrivacyLedger& PrivacyLedger::operator=(const PrivacyLedger& other) {
    clips_.store(other.clips_released(), std::memory_order_release);
    epsilon_ = other.epsilon_;
    return *this;
}

void PrivacyLedger::record(std::uint64_t rows, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("ledger: epsilon must be positive");
    if (clips_released() > 0 && epsilon != epsilon_)
        throw ConfigError("ledger: per-clip epsilon changed from " + std::to_string(epsilon_) + " to " + std::to_string(epsilon));
    epsilon_ = epsilon;
    clips_.fetch_add(rows, std::memory_order_acq_rel);
}

nlohmann::json PrivacyLedger::to_json() const {
    return {{"clips_released", clips_released()}, {"per_clip_epsilon", epsilon_}, {"total_spent", total_spent()}};
}

PrivacyLedger PrivacyLedger::from_json(const nlohmann::json& j) {
    PrivacyLedger l;
    try {
        const auto clips = j.at("clips_released").get<std::uint64_t>();
        const auto eps = j.at("per_clip_epsilon").get<double>();
        if (clips > 0) l.record(clips, eps);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("ledger: ") + e.what());
    }
    return l;
}

Matrix privatize(const Matrix& rows, const PrivacyParams& params, NoiseSource& source, PrivacyLedger& ledger,
                 Enforcement mode) {
    params.validate();
    if (!rows.allFinite()) throw DataError("privatize: non-finite input");
    Matrix out = rows;
    if (mode == Enforcement::Reject) {
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            const double n = out.row(i).cwiseAbs().sum();
            if (n > params.clip_bound)
                throw DataError("privatize: row " + std::to_string(i) + " has L1 norm " + std::to_string(n) +
                                " above the clip bound " + std::to_string(params.clip_bound));
        }
    } else {
        embed::clip_rows(out, params.clip_bound);
    }
    const double b = params.scale();
    for (Eigen::Index k = 0; k < out.size(); ++k) out.data()[k] += laplace_from_uniform(b, source.centered_uniform());
    ledger.record(static_cast<std::uint64_t>(rows.rows()), params.epsilon);
    return out;
}

double sensitivity_audit(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("sensitivity_audit: shape mismatch");
    int differing = 0;
    double dist = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double d = (a.row(i) - b.row(i)).cwiseAbs().sum();
        if (d != 0.0) ++differing;
        dist += d;
    }
    if (differing > 1) throw DataError("sensitivity_audit: sequences differ in " + std::to_string(differing) + " rows");
    return dist;
}

}  // namespace quietroom::privacy
