#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace sim {

/// Seedable, splittable pseudo-random generator (xoshiro256** state seeded
/// through splitmix64). All samplers in the toolkit draw through this type so
/// a seed reproduces a run on any platform.
class Rng {
public:
    static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64";

    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    /// Uniform integer on {0, ..., n-1}; unbiased (rejection sampling).
    std::uint64_t uniform_index(std::uint64_t n);
    /// Standard normal draw (Marsaglia polar method).
    double normal();

    /// Independent child stream; deterministic in (parent seed, stream id),
    /// and does not advance the parent.
    Rng split(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

    struct State {
        std::array<std::uint64_t, 4> s;
        std::uint64_t seed;
        bool has_spare;
        double spare;
    };
    State state() const;
    static Rng from_state(const State& st);

private:
    std::array<std::uint64_t, 4> s_{};
    std::uint64_t seed_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace sim
