#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fogmesh {

// Base for all typed errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MalformedLine : Error {
    int line_no;
    explicit MalformedLine(int line)
        : Error("malformed line " + std::to_string(line)), line_no(line) {}
};

struct NonMonotonicTime : Error {
    int line_no;
    explicit NonMonotonicTime(int line)
        : Error("non-monotonic timestamp at line " + std::to_string(line)), line_no(line) {}
};

struct MissingDataset : Error {
    explicit MissingDataset(const std::string& root)
        : Error("no dataset files found under " + root) {}
};

struct TooFewWindows : Error {
    using Error::Error;
};

struct SignalTooShort : Error {
    using Error::Error;
};

struct EmptyChannel : Error {
    using Error::Error;
};

struct SingleClass : Error {
    using Error::Error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct BudgetExceeded : Error {
    std::size_t param_count;
    explicit BudgetExceeded(std::size_t n)
        : Error("trainable parameter budget exceeded: " + std::to_string(n)), param_count(n) {}
};

struct BadMagic : Error {
    using Error::Error;
};

struct VersionMismatch : Error {
    using Error::Error;
};

struct TooFewSamples : Error {
    using Error::Error;
};

struct LengthMismatch : Error {
    using Error::Error;
};

struct UndefinedMetric : Error {
    std::string metric;
    explicit UndefinedMetric(const std::string& name)
        : Error("metric undefined (zero denominator): " + name), metric(name) {}
};

// splitmix64 step; the core of all seed derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Named seed derivation: every consumer of randomness gets its own stream,
// derived from the single top-level seed, a purpose tag and an index.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose,
                                 std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (unsigned char c : purpose) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    h ^= index + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    std::uint64_t s = h;
    return splitmix64(s);
}

// Small deterministic RNG. std::uniform_real_distribution is
// implementation-defined, so all draws go through explicit conversions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0,1)
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo,hi)
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // standard normal, Box-Muller
    double next_normal() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // uniform integer in [0,n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

}  // namespace fogmesh
