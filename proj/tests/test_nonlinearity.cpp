#include "trajent/nonlinearity.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using trajent::Nonlinearity;

namespace {

Nonlinearity cubic()
{
    return Nonlinearity::custom([](double u) { return u * u * u; }, [](double u) { return 3.0 * u * u; });
}

} // namespace

TEST(Nonlinearity, HExamples)
{
    auto const pm = Nonlinearity::porous_medium(2.0);
    EXPECT_DOUBLE_EQ(pm.h(1.0), 0.0);
    EXPECT_NEAR(pm.h(3.0), 4.0, 1e-14);
    // int_1^2 3s ds
    EXPECT_NEAR(cubic().h(2.0), 4.5, 1e-9);
}

TEST(Nonlinearity, PhiExamples)
{
    EXPECT_EQ(Nonlinearity::porous_medium(2.0).Phi(0.0), 0.0);
    EXPECT_NEAR(Nonlinearity::porous_medium(2.0).Phi(1.0), -1.0, 1e-14);
    EXPECT_NEAR(Nonlinearity::porous_medium(3.0).Phi(2.0), 1.0, 1e-14);
    // u log u - u at u = e is 0
    EXPECT_NEAR(Nonlinearity::linear().Phi(std::exp(1.0)), 0.0, 1e-14);
}

TEST(Nonlinearity, CustomPhiMatchesClosedForm)
{
    // f = u^3 has h = 1.5(u^2 - 1) and Phi = u^3/2 - 1.5u
    auto const nl = cubic();
    for (double u : {0.3, 1.0, 2.5})
        EXPECT_NEAR(nl.Phi(u), 0.5 * u * u * u - 1.5 * u, 1e-8) << u;
}

TEST(Nonlinearity, PressureExamples)
{
    auto const pm = Nonlinearity::porous_medium(2.0);
    EXPECT_NEAR(pm.pressure(1.0), -1.0, 1e-14);
    EXPECT_NEAR(pm.pressure(2.0), 0.0, 1e-14);
    EXPECT_NEAR(Nonlinearity::linear().pressure(1.0), -1.0, 1e-14);
}

TEST(Nonlinearity, DiffusionCoeffExamples)
{
    auto const pm = Nonlinearity::porous_medium(2.0);
    EXPECT_NEAR(pm.diffusion_coeff(2.0), 2.0, 1e-14);
    EXPECT_NEAR(pm.diffusion_coeff(0.5), 1.0, 1e-14);
    EXPECT_NEAR(Nonlinearity::linear().diffusion_coeff(7.0), std::sqrt(2.0), 1e-15);
}

TEST(Nonlinearity, DomainErrors)
{
    auto const pm = Nonlinearity::porous_medium(2.0);
    EXPECT_THROW(pm.h(0.0), std::domain_error);
    EXPECT_THROW(pm.h(-1.0), std::domain_error);
    EXPECT_THROW(pm.pressure(0.0), std::domain_error);
    EXPECT_THROW(pm.diffusion_coeff(-0.1), std::domain_error);
    EXPECT_THROW(pm.Phi(-1.0), std::domain_error);
    EXPECT_THROW(Nonlinearity::porous_medium(1.0), std::domain_error);
}

TEST(Nonlinearity, DivergentQuadratureThrows)
{
    // h(s) ~ -1/s^2 near 0 is not integrable
    auto const nl = Nonlinearity::custom([](double u) { return -1.0 / u; }, [](double u) { return 1.0 / (u * u); });
    EXPECT_THROW(nl.Phi(1.0), trajent::IntegrationError);
}

TEST(Nonlinearity, StructuralIdentitiesClosedForm)
{
    std::mt19937_64 rng(3);
    double const kappa = 4.0;
    std::uniform_real_distribution<double> dist(1.0 / kappa, kappa);
    for (auto const &nl : {Nonlinearity::porous_medium(2.0), Nonlinearity::porous_medium(3.5), Nonlinearity::linear()}) {
        for (int i = 0; i < 1000; ++i) {
            double const u = dist(rng);
            double const phi = nl.pressure(u), dphi = nl.pressure_slope(u), ddphi = nl.pressure_curvature(u);
            EXPECT_NEAR(phi, nl.h(u) - nl.f(u) / u, 1e-8);
            EXPECT_NEAR(nl.h(u), dphi * u + phi, 1e-8);
            EXPECT_NEAR(nl.Phi_curvature(u), ddphi * u + 2.0 * dphi, 1e-8);
        }
    }
}

TEST(Nonlinearity, StructuralIdentitiesCustomByDifferences)
{
    // phi from the nested quadrature Phi(u)/u; every derivative is a first
    // central difference with step 1e-5
    auto const nl = Nonlinearity::custom([](double u) { return u * u + u; }, [](double u) { return 2.0 * u + 1.0; });
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(0.25, 4.0);
    double const e = 1e-5;
    auto phi = [&](double u) { return nl.Phi(u) / u; };
    auto dphi_exact = [&](double u) { return nl.f(u) / (u * u); };
    for (int i = 0; i < 1000; ++i) {
        double const u = dist(rng);
        double const dphi = (phi(u + e) - phi(u - e)) / (2 * e);
        double const ddphi = (dphi_exact(u + e) - dphi_exact(u - e)) / (2 * e);
        double const ddPhi = (nl.h(u + e) - nl.h(u - e)) / (2 * e);
        EXPECT_NEAR(phi(u), nl.h(u) - nl.f(u) / u, 1e-8);
        EXPECT_NEAR(nl.h(u), dphi * u + phi(u), 1e-5);
        EXPECT_NEAR(ddPhi, ddphi * u + 2.0 * dphi, 1e-5);
    }
}

TEST(Nonlinearity, PhiDerivativeIsH)
{
    double const e = 1e-6;
    for (auto const &nl : {Nonlinearity::porous_medium(2.0), Nonlinearity::linear(), cubic()})
        for (double u = 0.1; u <= 5.0; u += 0.07)
            EXPECT_NEAR((nl.Phi(u + e) - nl.Phi(u - e)) / (2 * e), nl.h(u), 1e-6) << nl.describe() << " u=" << u;
}

TEST(Nonlinearity, DiffusionCoeffSquaredRecoversF)
{
    for (auto const &nl : {Nonlinearity::porous_medium(2.0), Nonlinearity::porous_medium(1.7), Nonlinearity::linear()})
        for (double u = 0.05; u < 6.0; u += 0.11) {
            double const s = nl.diffusion_coeff(u);
            EXPECT_NEAR(s * s * u / 2.0, nl.f(u), 1e-12 * std::max(1.0, nl.f(u)));
        }
}

TEST(Nonlinearity, AssumptionSampling)
{
    EXPECT_NO_THROW(Nonlinearity::porous_medium(2.0).check_assumptions(0.0, 5.0));
    auto const concave = Nonlinearity::custom([](double u) { return std::sqrt(u); },
                                              [](double u) { return 0.5 / std::sqrt(u); });
    EXPECT_THROW(concave.check_assumptions(0.1, 2.0), std::domain_error);
}
