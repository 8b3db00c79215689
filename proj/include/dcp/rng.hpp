#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "dcp/tensor.hpp"

namespace dcp {

/// Seeded generator with platform-independent uniform/normal draws.
///
/// The engine is mt19937_64; the real-valued draws are built from raw 64-bit
/// outputs instead of std distributions so streams match across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller.
    double normal();
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    Tensor normal_tensor(Shape dims, double stddev = 1.0);
    Tensor uniform_tensor(Shape dims, double lo, double hi);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// SplitMix64 finalizer; combines seeds into well-mixed streams.
std::uint64_t mix64(std::uint64_t x);

}  // namespace dcp
