#include "trajent/network_simplex.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace trajent;

namespace {

std::vector<double> random_weights(std::size_t n, std::mt19937_64 &rng, bool with_zeros = false)
{
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> w(n);
    for (auto &x : w) x = u(rng);
    if (with_zeros && n > 2) w[1] = 0.0;
    double const s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto &x : w) x /= s;
    return w;
}

/// Squared-cost optimum in 1-D by the monotone (north-west corner) coupling of
/// sorted supports.
double monotone_cost(std::vector<double> const &xa, std::vector<double> const &wa, std::vector<double> const &xb,
                     std::vector<double> const &wb)
{
    std::vector<std::size_t> ia(xa.size()), ib(xb.size());
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::sort(ia.begin(), ia.end(), [&](auto a, auto b) { return xa[a] < xa[b]; });
    std::sort(ib.begin(), ib.end(), [&](auto a, auto b) { return xb[a] < xb[b]; });
    std::size_t i = 0, j = 0;
    double ra = wa[ia[0]], rb = wb[ib[0]], cost = 0.0;
    while (i < ia.size() && j < ib.size()) {
        double const m = std::min(ra, rb);
        double const d = xa[ia[i]] - xb[ib[j]];
        cost += m * d * d;
        ra -= m;
        rb -= m;
        if (ra <= 1e-15 && ++i < ia.size()) ra = wa[ia[i]];
        if (rb <= 1e-15 && ++j < ib.size()) rb = wb[ib[j]];
    }
    return cost;
}

} // namespace

TEST(NetworkSimplex, PointMasses)
{
    EXPECT_NEAR(w2_discrete({1.0}, {1.0}, {(0.3 - 1.7) * (0.3 - 1.7)}), 1.4, 1e-15);
}

TEST(NetworkSimplex, TwoPointsToOne)
{
    // {(0, 1/2), (1, 1/2)} -> {(1/2, 1)}: the only plan costs 2 * 1/2 * 1/4
    EXPECT_NEAR(w2_discrete({0.5, 0.5}, {1.0}, {0.25, 0.25}), 0.5, 1e-15);
}

TEST(NetworkSimplex, IdenticalMarginals)
{
    EXPECT_NEAR(w2_discrete({0.5, 0.5}, {0.5, 0.5}, {0.0, 1.0, 1.0, 0.0}), 0.0, 1e-15);
}

TEST(NetworkSimplex, InputErrors)
{
    EXPECT_THROW(w2_discrete({}, {1.0}, {}), InputError);
    EXPECT_THROW(w2_discrete({0.6, 0.6}, {1.0}, {0, 0}), InputError);
    EXPECT_THROW(w2_discrete({1.2, -0.2}, {1.0}, {0, 0}), InputError);
    EXPECT_THROW(w2_discrete({NAN, 1.0}, {1.0}, {0, 0}), InputError);
    EXPECT_THROW(w2_discrete({0.5, 0.5}, {1.0}, {0.0}), InputError);
}

TEST(NetworkSimplex, PlanHasCorrectMarginals)
{
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        auto const mu = random_weights(7 + rep % 5, rng, rep % 3 == 0);
        auto const nu = random_weights(5 + rep % 4, rng);
        std::vector<double> cost(mu.size() * nu.size());
        std::uniform_real_distribution<double> u(0.0, 3.0);
        for (auto &c : cost) c = u(rng);
        auto const t = solve_discrete_transport(mu, nu, cost);
        std::vector<double> rows(mu.size(), 0.0), cols(nu.size(), 0.0);
        double total = 0.0;
        for (auto const &f : t.plan) {
            EXPECT_GT(f.mass, 0.0);
            rows[f.source] += f.mass;
            cols[f.target] += f.mass;
            total += f.mass * cost[f.source * nu.size() + f.target];
        }
        for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_NEAR(rows[i], mu[i], 1e-12);
        for (std::size_t j = 0; j < nu.size(); ++j) EXPECT_NEAR(cols[j], nu[j], 1e-12);
        EXPECT_NEAR(total, t.cost, 1e-12);
    }
}

TEST(NetworkSimplex, MatchesMonotoneCouplingIn1D)
{
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 30; ++rep) {
        std::size_t const n = 5 + static_cast<std::size_t>(rep) * 3, m = 4 + static_cast<std::size_t>(rep) * 2;
        std::vector<double> xa(n), xb(m);
        for (auto &x : xa) x = z(rng);
        for (auto &x : xb) x = 0.5 + 1.3 * z(rng);
        auto const wa = random_weights(n, rng), wb = random_weights(m, rng);
        std::vector<double> cost(n * m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) cost[i * m + j] = (xa[i] - xb[j]) * (xa[i] - xb[j]);
        EXPECT_NEAR(solve_discrete_transport(wa, wb, cost).cost, monotone_cost(xa, wa, xb, wb), 1e-10) << rep;
    }
}

TEST(NetworkSimplex, MatchesBruteForceAssignment)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t const n = 7;
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<Point<2>> xs(n), ys(n);
        for (auto &p : xs) p = {u(rng), u(rng)};
        for (auto &p : ys) p = {u(rng), u(rng)};
        auto const cost = squared_distance_costs<2>(xs, ys);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        double best = 1e300;
        do {
            double c = 0.0;
            for (std::size_t i = 0; i < n; ++i) c += cost[i * n + perm[i]];
            best = std::min(best, c / n);
        } while (std::next_permutation(perm.begin(), perm.end()));
        std::vector<double> w(n, 1.0 / n);
        EXPECT_NEAR(solve_discrete_transport(w, w, cost).cost, best, 1e-12);
    }
}

TEST(NetworkSimplex, LargeInstanceCompletes)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t const n = 400;
    std::vector<double> xa(n), xb(n);
    for (auto &x : xa) x = u(rng);
    for (auto &x : xb) x = u(rng) * 0.8 + 0.3;
    auto const wa = random_weights(n, rng), wb = random_weights(n, rng);
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = (xa[i] - xb[j]) * (xa[i] - xb[j]);
    EXPECT_NEAR(solve_discrete_transport(wa, wb, cost).cost, monotone_cost(xa, wa, xb, wb), 1e-10);
}
