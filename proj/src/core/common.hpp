#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace digpt {

// Error taxonomy surfaced through the C API as status codes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct KeyError : std::runtime_error {
    explicit KeyError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline uint64_t fnv1a64(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic RNG helpers layered on mt19937_64. All draws are pure
// functions of the engine state (no cached spare in the normal sampler),
// so serializing the engine captures the full random state.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = eng_();
        while (r >= limit) r = eng_();
        return r % n;
    }

    // Box-Muller, always consuming two uniforms and discarding the spare.
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Normal(0, std) truncated to [-2*std, 2*std], sampled by rejection.
    double trunc_normal(double std_dev) {
        for (;;) {
            const double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * std_dev;
        }
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw FormatError("invalid rng state string");
    }

    // Independent stream for a named purpose at a given (epoch, step) point,
    // so data-side randomness is replayable from (seed, counters) alone.
    static Rng derive(uint64_t seed, const std::string& purpose, uint64_t a = 0, uint64_t b = 0) {
        uint64_t h = splitmix64(seed ^ fnv1a64(purpose));
        h = splitmix64(h ^ a);
        h = splitmix64(h ^ b);
        return Rng(h);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace digpt
