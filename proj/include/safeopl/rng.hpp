#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace safeopl {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// FNV-1a, used to turn purpose labels into stream ids.
inline constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Counter-based generator: draw i of stream (seed, stream_id) is a pure
// function of (seed, stream_id, i). Satisfies UniformRandomBitGenerator.
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id), key_(make_key(seed, stream_id)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return splitmix64(key_ + 0xD1B54A32D192ED03ULL * counter_++); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n); n > 0. Lemire's nearly-divisionless method.
    std::uint64_t below(std::uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Independent child stream for a named purpose. Does not advance this stream.
    [[nodiscard]] RngStream derive(std::string_view purpose) const { return derive(fnv1a64(purpose)); }
    [[nodiscard]] RngStream derive(std::uint64_t tag) const {
        return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(tag + 0x632BE59BD9B4E019ULL)));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

private:
    static constexpr std::uint64_t make_key(std::uint64_t seed, std::uint64_t stream) {
        return splitmix64(seed ^ splitmix64(stream ^ 0xA0761D6478BD642FULL));
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t key_ = make_key(0, 0);
    std::uint64_t counter_ = 0;
};

}  // namespace safeopl
