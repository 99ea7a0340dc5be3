#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace zia {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Invalid or inconsistent configuration (bad scenario, bad filter spec, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure inside a computation (rank deficiency, divergence, ...).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, used for named RNG substreams and config hashing. Stable across
// platforms, unlike std::hash.
inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// Fixed-format double rendering for CSV/JSON output. Re-runs must produce
// byte-identical report bodies, so all floats funnel through here.
inline std::string fmt_double(double v, int precision = 10) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

inline std::string fmt_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace zia
