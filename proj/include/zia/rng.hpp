#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "zia/common.hpp"

namespace zia::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// xoshiro256++ seeded through splitmix64. All randomness in the project flows
// from one root seed through named substreams so ablations share like-for-like
// noise and parallel work stays deterministic.
class Stream {
public:
    explicit Stream(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    Stream(std::uint64_t seed, std::string_view substream)
        : Stream(seed ^ fnv1a64(substream)) {}

    // Derive an independent child stream (episode index, MC draw index, ...).
    Stream child(std::uint64_t index) const {
        std::uint64_t x = state_[0] ^ (0x9e3779b97f4a7c15ull * (index + 1));
        return Stream(splitmix64(x) ^ state_[2]);
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in the open interval (0,1); never returns an exact endpoint so
    // inverse-CDF transforms stay finite.
    double uniform01() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * uniform01();
    }

    int uniform_int(int n) noexcept {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    // Standard normal via Box-Muller (spare cached).
    double normal() noexcept {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.2831853071795864769 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) noexcept { return mean + sigma * normal(); }

    // Inverse-CDF sample from Laplace(0, scale).
    double laplace(double scale) {
        if (!(scale > 0.0)) throw ConfigError("laplace: scale must be positive");
        const double u = uniform01() - 0.5;
        const double s = (u < 0.0) ? -1.0 : 1.0;
        return -scale * s * std::log(1.0 - 2.0 * std::abs(u));
    }

    int categorical(std::span<const double> probs) {
        const double u = uniform01();
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace zia::rng
