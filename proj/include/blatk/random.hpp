#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace blatk {

/// Independent random streams. Every signal source draws from its own stream so that a
/// shared user seed never correlates, e.g., the reference phases with the process noise.
enum class Stream : std::uint64_t {
    reference      = 1,
    plant_noise    = 2,
    actuator_noise = 3,
    feedback_noise = 4,
    measurement_u  = 5,
    measurement_y  = 6,
    monte_carlo    = 7,
    grid           = 8,
    generic        = 9,
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for (seed, stream, index); index is typically the realization number.
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) noexcept {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    return splitmix64(h ^ (index * 0xd1b54a32d192ed03ULL));
}

/// mt19937_64 with distribution code written out here: the standard distributions are
/// implementation-defined, and outputs must agree across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1].
    double uniform_open_low() noexcept { return 1.0 - uniform(); }

    double phase() noexcept { return 2.0 * std::numbers::pi * uniform(); }

    /// Standard normal, Box-Muller.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double radius = std::sqrt(-2.0 * std::log(uniform_open_low()));
        const double angle  = phase();
        spare_              = radius * std::sin(angle);
        has_spare_          = true;
        return radius * std::cos(angle);
    }

    std::uint64_t next() noexcept { return engine_(); }

private:
    std::mt19937_64 engine_;
    double          spare_{0.0};
    bool            has_spare_{false};
};

} // namespace blatk
