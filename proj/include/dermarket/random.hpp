#pragma once

#include <cstdint>

namespace dermarket {

/// SplitMix64 (Steele, Lea, Flood 2014). Chosen over <random> distributions
/// because its output, and the uniform mapping below, are identical on every
/// platform and standard library.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

private:
    std::uint64_t state_;
};

/// Independent stream for item `index` under a run-level seed. Streams depend
/// only on (seed, index), so appending items leaves earlier draws untouched.
[[nodiscard]] inline SplitMix64 stream_for(std::uint64_t seed, std::uint64_t index) {
    SplitMix64 mixer(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
    return SplitMix64(mixer.next());
}

}  // namespace dermarket
