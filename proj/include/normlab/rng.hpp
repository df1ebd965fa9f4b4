#pragma once

#include <array>
#include <cstdint>

namespace normlab {

// xoshiro256++ with splitmix64 seeding. We roll our own generator and
// normal sampler because std::mt19937/std::normal_distribution are not
// guaranteed to produce the same stream across standard libraries, and
// every experiment here must be bitwise reproducible from its seed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 bits of randomness.
    double uniform();

    // Standard normal via Box-Muller (two uniforms per draw, no caching,
    // so the stream position is a pure function of the draw count).
    double normal();
    double normal(double mean, double std);

    // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
    std::uint64_t uniform_int(std::uint64_t n);

    // Derive an independent stream without advancing this generator.
    Rng split(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

  private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace normlab
