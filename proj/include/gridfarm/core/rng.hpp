#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gridfarm {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view text);

/// Derives an independent seed for (seed, resource, purpose). Adding a
/// resource never changes another resource's streams.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view resource, std::string_view purpose);

/// Stateless uniform draw in [0, 1) keyed by the full tuple.
double keyed_uniform(std::uint64_t seed, std::string_view resource, std::string_view purpose,
                     std::uint64_t a, std::uint64_t b = 0);

/// Portable random stream. std::mt19937_64 is fully specified by the
/// standard; the distributions below are written out so results do not
/// depend on the standard library vendor.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();                       // standard normal, Box-Muller
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gridfarm
