#ifndef BRIDGELAB_RNG_HPP
#define BRIDGELAB_RNG_HPP

#include <cmath>
#include <cstdint>

namespace bridgelab {

// counter-based generator: every draw is a pure function of (seed, stream, counter),
// so parallel per-particle streams are reproducible regardless of scheduling
inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct CounterRng {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;

    CounterRng(std::uint64_t seed_, std::uint64_t stream_ = 0) : seed(seed_), stream(stream_) {}

    std::uint64_t next_u64() {
        std::uint64_t k = splitmix64(seed ^ splitmix64(stream));
        return splitmix64(k ^ (0x9e3779b97f4a7c15ULL * ++counter));
    }

    // uniform on (0,1)
    double next_double() {
        return (next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }

    double next_normal() {
        double u1 = next_double(), u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
};

}  // namespace bridgelab

#endif
