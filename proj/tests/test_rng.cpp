#include "trajent/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace trajent;

TEST(Rng, PhiloxKnownAnswers)
{
    // Random123 known-answer vectors for Philox4x32-10
    EXPECT_EQ(Philox4x32::generate({0, 0, 0, 0}, {0, 0}),
              (Philox4x32::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (Philox4x32::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (Philox4x32::Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Rng, Deterministic)
{
    auto const a = rng_stream<2>(42, 7, 123);
    auto const b = rng_stream<2>(42, 7, 123);
    EXPECT_EQ(a, b);
    EXPECT_NE(rng_stream<2>(42, 7, 124), a);
    EXPECT_NE(rng_stream<2>(43, 7, 123), a);
}

TEST(Rng, UniformsInOpenInterval)
{
    for (std::uint64_t c = 0; c < 10000; ++c) {
        auto const u = rng_uniform_pair(1, 2, c);
        for (double x : u) {
            EXPECT_GT(x, 0.0);
            EXPECT_LT(x, 1.0);
        }
    }
}

TEST(Rng, NormalMoments)
{
    std::size_t const n = 1'000'000;
    std::vector<double> x(n), x2(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng_stream<1>(2024, i % 1000, i / 1000)[0];
        x2[i] = x[i] * x[i];
    }
    double const m = pairwise_sum(x) / n;
    double const v = pairwise_sum(x2) / n - m * m;
    EXPECT_LE(std::abs(m), 4.0 / std::sqrt(static_cast<double>(n)));
    EXPECT_LE(std::abs(v - 1.0), 0.01);
}

TEST(Rng, SecondAxisIsStandardNormalAndUncorrelated)
{
    std::size_t const n = 200'000;
    std::vector<double> a(n), b(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto const z = rng_stream<2>(5, 3, i);
        a[i] = z[1] * z[1];
        b[i] = z[1];
        ab[i] = z[0] * z[1];
    }
    EXPECT_LE(std::abs(pairwise_sum(b) / n), 4.0 / std::sqrt(static_cast<double>(n)));
    EXPECT_NEAR(pairwise_sum(a) / n, 1.0, 0.02);
    EXPECT_LE(std::abs(pairwise_sum(ab) / n), 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Rng, DistinctParticlesUncorrelated)
{
    std::size_t const n = 100'000;
    for (std::uint64_t other : {1u, 2u, 1000u}) {
        std::vector<double> xa(n), xb(n), xab(n), xa2(n), xb2(n);
        for (std::size_t s = 0; s < n; ++s) {
            xa[s] = rng_stream<1>(9, 0, s)[0];
            xb[s] = rng_stream<1>(9, other, s)[0];
            xab[s] = xa[s] * xb[s];
            xa2[s] = xa[s] * xa[s];
            xb2[s] = xb[s] * xb[s];
        }
        double const ma = pairwise_sum(xa) / n, mb = pairwise_sum(xb) / n;
        double const cov = pairwise_sum(xab) / n - ma * mb;
        double const rho = cov / std::sqrt((pairwise_sum(xa2) / n - ma * ma) * (pairwise_sum(xb2) / n - mb * mb));
        EXPECT_LE(std::abs(rho), 4.0 / std::sqrt(static_cast<double>(n))) << other;
    }
}

TEST(Rng, InitialSamplingCounterDoesNotCollideWithSteps)
{
    EXPECT_NE(rng_uniform_pair(1, 1, kInitialSamplingCounter), rng_uniform_pair(1, 1, 0));
    EXPECT_GT(kInitialSamplingCounter, std::uint64_t{1} << 40);
}
