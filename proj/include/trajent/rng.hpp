#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, particle id, step), so results do not depend on how particles are
// scheduled across workers.
//
// Bit mixing is Philox4x32-10; Gaussians come from the
// Box-Muller transform of the two 53-bit uniforms one Philox block yields.

#include "trajent/common.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace trajent {

struct Philox4x32 {
    using Block = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr std::uint32_t M0 = 0xD2511F53u;
    static constexpr std::uint32_t M1 = 0xCD9E8D57u;
    static constexpr std::uint32_t W0 = 0x9E3779B9u;
    static constexpr std::uint32_t W1 = 0xBB67AE85u;

    static constexpr Block round(Block ctr, Key key) noexcept
    {
        std::uint64_t const p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        std::uint64_t const p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        return {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }

    static constexpr Block generate(Block ctr, Key key) noexcept
    {
        for (int r = 0; r < 10; ++r) {
            ctr = round(ctr, key);
            key[0] += W0;
            key[1] += W1;
        }
        return ctr;
    }
};

/// Two uniforms in (0, 1) from the block for (seed, stream, counter).
inline std::array<double, 2> rng_uniform_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter)
{
    Philox4x32::Block const ctr{static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                                static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
    Philox4x32::Key const key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    auto const out = Philox4x32::generate(ctr, key);
    auto to_unit = [](std::uint32_t hi, std::uint32_t lo) {
        std::uint64_t const bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53; // never 0 or 1
    };
    return {to_unit(out[0], out[1]), to_unit(out[2], out[3])};
}

/// Standard normal increment vector for (seed, particle_id, step).
template <int Dim>
Point<Dim> rng_stream(std::uint64_t seed, std::uint64_t particle_id, std::uint64_t step)
{
    static_assert(Dim >= 1 && Dim <= 2, "one Philox block covers at most two normals");
    auto const u = rng_uniform_pair(seed, particle_id, step);
    double const r = std::sqrt(-2.0 * std::log(u[0]));
    double const theta = 2.0 * std::numbers::pi * u[1];
    Point<Dim> z{};
    z[0] = r * std::cos(theta);
    if constexpr (Dim == 2) z[1] = r * std::sin(theta);
    return z;
}

/// Counter values reserved for initial-position sampling; they never collide
/// with step indices of a simulation.
inline constexpr std::uint64_t kInitialSamplingCounter = std::uint64_t{1} << 63;

} // namespace trajent
