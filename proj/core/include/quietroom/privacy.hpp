#pragma once

// Laplace mechanism over L1-clipped embedding rows and budget accounting.

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "quietroom/matrix_io.hpp"
#include "quietroom/random.hpp"

namespace quietroom::privacy {

struct PrivacyParams {
    double clip_bound = 1.0;
    double epsilon = 1.0;

    void validate() const;
    /// Laplace scale b = C / epsilon.
    double scale() const { return clip_bound / epsilon; }
};

/// Randomness for the mechanism. system() draws from the operating
/// system's entropy source. seeded() is reproducible and exists for tests
/// and experiments only: a seeded source voids the privacy guarantee.
class NoiseSource {
public:
    static NoiseSource system();
    static NoiseSource seeded(std::uint64_t seed);

    NoiseSource(NoiseSource&&) noexcept;
    NoiseSource& operator=(NoiseSource&&) noexcept;
    ~NoiseSource();

    bool is_seeded() const { return seeded_.has_value(); }

    /// Uniform in (-0.5, 0.5).
    double centered_uniform();

private:
    NoiseSource() = default;
    std::optional<Rng> seeded_;
    std::unique_ptr<std::random_device> device_;
};

/// One Laplace(0, b) draw by inverse CDF: b sign(u) ln(1 - 2|u|) with
/// u uniform on (-1/2, 1/2).
double laplace_sample(double scale, NoiseSource& source);
double laplace_sample(double scale, Rng& rng);

/// Running privacy spend. Stores the release count and the per-row epsilon
/// and forms the product on read, so the total never accumulates rounding.
class PrivacyLedger {
public:
    PrivacyLedger() = default;
    PrivacyLedger(const PrivacyLedger& other);
    PrivacyLedger& operator=(const PrivacyLedger& other);

    std::uint64_t clips_released() const { return clips_.load(std::memory_order_acquire); }
    double per_clip_epsilon() const { return epsilon_; }
    double total_spent() const { return static_cast<double>(clips_released()) * epsilon_; }

    /// Single writer. Throws ConfigError if epsilon differs from earlier releases.
    void record(std::uint64_t rows, double epsilon);

    nlohmann::json to_json() const;
    static PrivacyLedger from_json(const nlohmann::json& j);

private:
    std::atomic<std::uint64_t> clips_{0};
    double epsilon_ = 0.0;
};

enum class Enforcement { Reclip, Reject };

/// Adds i.i.d. Laplace(0, C/epsilon) noise to every coordinate of `rows`
/// and advances the ledger by rows.rows(). Rows with L1 norm above C are
/// clipped first (Reclip) or rejected with a DataError naming the row
/// (Reject). The input is not modified.
Matrix privatize(const Matrix& rows, const PrivacyParams& params, NoiseSource& source, PrivacyLedger& ledger,
                 Enforcement mode = Enforcement::Reclip);

/// L1 distance between two sequences that differ in at most one row.
/// Throws DataError when more than one row differs.
double sensitivity_audit(const Matrix& a, const Matrix& b);

}  // namespace quietroom::privacy
