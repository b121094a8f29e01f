#include "quietroom/random.hpp"

#include <cmath>
#include <numbers>

#include "quietroom/error.hpp"

namespace quietroom {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw ConfigError("uniform_int: empty range");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::exponential(double mean) {
    if (!(mean > 0.0)) throw ConfigError("exponential: mean must be positive");
    return -mean * std::log(uniform_open());
}

std::int64_t Rng::geometric(double mean) {
    if (!(mean >= 0.0)) throw ConfigError("geometric: mean must be non-negative");
    if (mean == 0.0) return 0;
    const double p = 1.0 / (mean + 1.0);
    return static_cast<std::int64_t>(std::floor(std::log(uniform_open()) / std::log1p(-p)));
}

}  // namespace quietroom
