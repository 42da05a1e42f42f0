#include "trajent/sde.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

using namespace trajent;
using std::numbers::pi;

namespace {

DensityField<1> cosine_p0(int n = 200)
{
    return sample(Grid<1>::interval(0.0, 1.0, n), [](Point<1> const &x) { return 1.0 + 0.5 * std::cos(pi * x[0]); });
}

PdeRun<1> cosine_run(double t_end, double spacing = 1e-4, PerturbationPotential<1> const *beta = nullptr)
{
    SolveOptions o;
    o.t_end = t_end;
    o.snapshot_spacing = spacing;
    return solve<1>(cosine_p0(), Nonlinearity::porous_medium(2.0), beta, o);
}

PdeRun<1> uniform_run(double t_end)
{
    SolveOptions o;
    o.t_end = t_end;
    o.snapshot_spacing = 1e-4;
    return solve(DensityField<1>(Grid<1>::interval(0.0, 1.0, 50), 1.0), Nonlinearity::porous_medium(2.0), o);
}

template <class T>
bool same_bits(std::vector<T> const &a, std::vector<T> const &b)
{
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

} // namespace

TEST(Sde, ReflectionExamples)
{
    auto const g = Grid<1>::interval(0.0, 1.0, 10);
    Point<1> x{0.3};
    EXPECT_EQ(reflect_into(g, x), 0.0);
    EXPECT_EQ(x[0], 0.3);
    x = {-0.05};
    EXPECT_NEAR(reflect_into(g, x), 0.05, 1e-15);
    EXPECT_NEAR(x[0], 0.05, 1e-15);
    x = {1.2};
    EXPECT_NEAR(reflect_into(g, x), 0.2, 1e-15);
    EXPECT_NEAR(x[0], 0.8, 1e-15);
    x = {-1.5};
    EXPECT_THROW(reflect_into(g, x), StepSizeError);

    auto const r = Grid<2>::rectangle({0, 0}, {1, 2}, {4, 4});
    Point<2> y{-0.1, 2.3};
    EXPECT_NEAR(reflect_into(r, y), 0.4, 1e-15);
    EXPECT_NEAR(y[0], 0.1, 1e-15);
    EXPECT_NEAR(y[1], 1.7, 1e-15);
}

TEST(Sde, StepReflectsAndAccumulatesLocalTime)
{
    auto const nl = Nonlinearity::porous_medium(2.0);
    DensityField<1> p(Grid<1>::interval(0.0, 1.0, 10), 1.0);
    ParticleState<1> s{{0.05}, 0.0, 0};
    // sigma = sqrt(2): proposal 0.05 - 0.1 = -0.05
    auto const st = em_step_reflected(s, p, nl, 1e-3, {-0.1 / std::sqrt(2.0)});
    EXPECT_NEAR(st.after.x[0], 0.05, 1e-15);
    EXPECT_NEAR(st.after.l, 0.05, 1e-15);
    auto const in = em_step_reflected(s, p, nl, 1e-3, {0.1 / std::sqrt(2.0)});
    EXPECT_NEAR(in.after.x[0], 0.15, 1e-15);
    EXPECT_EQ(in.after.l, 0.0);
    EXPECT_THROW(em_step_reflected(s, p, nl, 1e-3, {-5.0}), StepSizeError);
}

TEST(Sde, OneStepVarianceMatchesQuadraticVariation)
{
    auto const nl = Nonlinearity::porous_medium(2.0);
    DensityField<1> p(Grid<1>::interval(0.0, 1.0, 10), 1.0);
    double const dt = 1e-4;
    std::size_t const n = 100'000;
    std::vector<double> inc(n), inc2(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto z = rng_stream<1>(77, i, 0);
        z[0] *= std::sqrt(dt);
        inc[i] = em_step_reflected(ParticleState<1>{{0.5}, 0.0, i}, p, nl, dt, z).after.x[0] - 0.5;
        inc2[i] = inc[i] * inc[i];
    }
    double const m = mean(inc);
    double const var = mean(inc2) - m * m;
    double const se = var * std::sqrt(2.0 / static_cast<double>(n - 1));
    EXPECT_LE(std::abs(var - 2.0 * dt), 3.0 * se);
}

TEST(Sde, PerturbedStepExamples)
{
    auto const nl = Nonlinearity::porous_medium(2.0);
    DensityField<1> p(Grid<1>::interval(0.0, 1.0, 10), 1.0);
    ParticleState<1> s{{0.5}, 0.0, 0};
    auto const a = em_step_reflected(s, p, nl, 1e-3, {0.01});
    auto const b = em_step_perturbed(s, p, nl, PerturbationPotential<1>::zero(), 1e-3, {0.01});
    EXPECT_EQ(a.after.x, b.after.x);
    EXPECT_EQ(a.after.l, b.after.l);

    auto const beta = PerturbationPotential<1>::cosine(1.0, 1);
    auto const c = em_step_perturbed(s, p, nl, beta, 1e-3, {0.0});
    EXPECT_NEAR(c.after.x[0], 0.5 + pi * 1e-3, 1e-15);

    auto const edge = em_step_perturbed(ParticleState<1>{{0.0}, 0.0, 0}, p, nl, beta, 1e-3, {0.0});
    EXPECT_EQ(edge.after.x[0], 0.0);
    EXPECT_EQ(edge.after.l, 0.0);
}

TEST(Sde, UniformEnsembleIsStationaryWithTrivialDecomposition)
{
    auto const run = uniform_run(0.01);
    EnsembleOptions o;
    o.n_particles = 10000;
    o.dt = 1e-4;
    o.seed = 3;
    o.record_paths = 5;
    auto const e = simulate_ensemble(run, o);
    double const l1 = histogram_l1(e.summaries.back().hist, run.snapshots.back(), o.histogram_bins);
    EXPECT_LE(l1, 0.05);
    auto const &last = e.checkpoints.back();
    for (std::size_t i = 0; i < last.m.size(); ++i) {
        EXPECT_EQ(last.m[i], 0.0);
        EXPECT_EQ(last.f[i], 0.0);
        EXPECT_EQ(last.v[i], e.checkpoints.front().v[i]);
    }
    for (auto const &r : e.records)
        for (std::size_t k = 0; k < r.times.size(); ++k) {
            EXPECT_EQ(r.m_path[k], 0.0);
            EXPECT_EQ(r.f_path[k], 0.0);
            EXPECT_EQ(r.v_path[k], r.v_path[0]);
        }
}

TEST(Sde, MartingaleMeanZeroAndMarginalLaw)
{
    auto const run = cosine_run(0.05);
    EnsembleOptions o;
    o.n_particles = 10000;
    o.dt = 1e-4;
    o.seed = 11;
    auto const e = simulate_ensemble(run, o);
    for (auto const &s : e.summaries) EXPECT_LE(std::abs(s.mean_m), 3.0 * s.se_m + 1e-300) << "t=" << s.t;
    double const l1 = histogram_l1(e.summaries.back().hist, run.snapshots.back(), o.histogram_bins);
    EXPECT_LE(l1, 0.1);
}

TEST(Sde, RecordMatchesEnsembleAndResidualIsSmall)
{
    auto const run = cosine_run(0.01);
    EnsembleOptions o;
    o.n_particles = 50;
    o.dt = 1e-4;
    o.record_paths = 50;
    o.keep_increments = true;
    auto const e = simulate_ensemble(run, o);
    auto const &last = e.checkpoints.back();
    for (std::size_t i = 0; i < 50; ++i) {
        auto const &r = e.records[i];
        ASSERT_EQ(r.steps(), 100u);
        EXPECT_EQ(r.dw_increments.size(), 100u);
        EXPECT_EQ(r.x_path.back(), last.x[i]);
        EXPECT_EQ(r.m_path.back(), last.m[i]);
        EXPECT_EQ(r.f_path.back(), last.f[i]);
        EXPECT_DOUBLE_EQ(r.v_path.back(), last.v[i]);
        for (std::size_t k = 1; k < r.l_path.size(); ++k) EXPECT_GE(r.l_path[k], r.l_path[k - 1]);
        EXPECT_LT(std::abs(r.residual(100)), 0.05);
    }
}

TEST(Sde, DecompositionContractViolations)
{
    auto const run = cosine_run(0.001);
    DensityPath<1> const path(run);
    ParticleState<1> s{{0.4}, 0.0, 0};
    auto rec = begin_record(s, path, 0.0);
    auto step = em_step_on_path(s, path, 0.0, 1e-4, {0.01});
    EXPECT_THROW(accumulate_decomposition(rec, step, path, {0.02}), ContractViolation);
    auto wrong_index = step;
    wrong_index.step_index = 3;
    EXPECT_THROW(accumulate_decomposition(rec, wrong_index, path, {0.01}), ContractViolation);
    auto elsewhere = em_step_on_path(ParticleState<1>{{0.6}, 0.0, 0}, path, 0.0, 1e-4, {0.01});
    EXPECT_THROW(accumulate_decomposition(rec, elsewhere, path, {0.01}), ContractViolation);
    EXPECT_NO_THROW(accumulate_decomposition(rec, step, path, {0.01}));
    EXPECT_EQ(rec.steps(), 1u);
}

TEST(Sde, ZeroPerturbationReproducesDecomposition)
{
    auto const run = cosine_run(0.005);
    auto const zero = PerturbationPotential<1>::zero();
    auto const runz = cosine_run(0.005, 1e-4, &zero);
    EnsembleOptions o;
    o.n_particles = 500;
    o.dt = 1e-4;
    auto const a = simulate_ensemble(run, o);
    auto const b = simulate_ensemble(runz, o);
    for (std::size_t c = 0; c < a.checkpoints.size(); ++c) {
        EXPECT_TRUE(same_bits(a.checkpoints[c].x, b.checkpoints[c].x));
        EXPECT_TRUE(same_bits(a.checkpoints[c].m, b.checkpoints[c].m));
        EXPECT_TRUE(same_bits(a.checkpoints[c].f, b.checkpoints[c].f));
        EXPECT_TRUE(same_bits(a.checkpoints[c].v, b.checkpoints[c].v));
    }
}

TEST(Sde, ResidualHalvesWithStep)
{
    SolveOptions o;
    o.t_end = 1e-4;
    o.snapshot_spacing = 5e-5;
    auto const run = solve(cosine_p0(), Nonlinearity::porous_medium(2.0), o);
    auto const r = single_step_refinement(run, 1e-4, 1000, 42);
    EXPECT_GE(r.ratio, 1.8);
    EXPECT_LE(r.ratio, 2.2);
}

TEST(Sde, DeterministicAcrossWorkerCounts)
{
    auto const run = cosine_run(0.003);
    EnsembleOptions o;
    o.n_particles = 777;
    o.dt = 1e-4;
    o.checkpoint_steps = {10};
    o.workers = 1;
    auto const a = simulate_ensemble(run, o);
    o.workers = 5;
    auto const b = simulate_ensemble(run, o);
    ASSERT_EQ(a.checkpoints.size(), b.checkpoints.size());
    for (std::size_t c = 0; c < a.checkpoints.size(); ++c) {
        EXPECT_TRUE(same_bits(a.checkpoints[c].x, b.checkpoints[c].x));
        EXPECT_TRUE(same_bits(a.checkpoints[c].l, b.checkpoints[c].l));
        EXPECT_TRUE(same_bits(a.checkpoints[c].m, b.checkpoints[c].m));
        EXPECT_TRUE(same_bits(a.checkpoints[c].f, b.checkpoints[c].f));
        EXPECT_EQ(a.summaries[c].mean_m, b.summaries[c].mean_m);
        EXPECT_EQ(a.summaries[c].hist, b.summaries[c].hist);
    }
}

TEST(Sde, LocalTimeGrowsWithHorizon)
{
    // mass concentrated in the middle: few particles reach the walls early
    auto const g = Grid<1>::interval(0.0, 1.0, 100);
    auto p0 = sample(g, [](Point<1> const &x) { return 0.2 + std::exp(-80.0 * (x[0] - 0.5) * (x[0] - 0.5)); });
    p0 = normalized(p0);
    SolveOptions so;
    so.t_end = 0.02;
    so.snapshot_spacing = 1e-4;
    auto const run = solve(p0, Nonlinearity::linear(), so);
    EnsembleOptions o;
    o.n_particles = 4000;
    o.dt = 1e-4;
    o.checkpoint_steps = {10, 50};
    auto const e = simulate_ensemble(run, o);
    double prev = 0.0;
    for (auto const &s : e.summaries) {
        EXPECT_GE(s.fraction_touched, prev);
        prev = s.fraction_touched;
    }
    EXPECT_EQ(e.summaries.front().fraction_touched, 0.0);
    EXPECT_LT(e.summaries[1].fraction_touched, e.summaries.back().fraction_touched);
    for (std::size_t c = 1; c < e.checkpoints.size(); ++c)
        for (std::size_t i = 0; i < o.n_particles; ++i) EXPECT_GE(e.checkpoints[c].l[i], e.checkpoints[c - 1].l[i]);
}

TEST(Sde, TimeAlignmentChecked)
{
    auto const run = cosine_run(0.001);
    EnsembleOptions o;
    o.n_particles = 10;
    o.dt = 3e-5;
    EXPECT_THROW(simulate_ensemble(run, o), InputError);
    o.dt = 1e-5; // spacing 1e-4 = 10 dt is allowed
    EXPECT_NO_THROW(simulate_ensemble(run, o));
    o.dt = 5e-6;
    EXPECT_THROW(simulate_ensemble(run, o), InputError);
}

TEST(Sde, TwoDimensionalSamplingAndMartingale)
{
    auto const g = Grid<2>::rectangle({0, 0}, {1, 1}, {24, 24});
    auto const p0 = sample(g, [](Point<2> const &x) { return 1.0 + 0.4 * std::cos(pi * x[0]) * std::cos(pi * x[1]); });
    SolveOptions so;
    so.t_end = 0.005;
    so.snapshot_spacing = 1e-4;
    auto const run = solve(p0, Nonlinearity::porous_medium(2.0), so);
    EnsembleOptions o;
    o.n_particles = 10000;
    o.dt = 1e-4;
    o.histogram_bins = 6;
    auto const e = simulate_ensemble(run, o);
    EXPECT_LE(histogram_l1(e.summaries.front().hist, p0, 6), 0.1);
    auto const &s = e.summaries.back();
    EXPECT_LE(std::abs(s.mean_m), 3.0 * s.se_m);
    for (auto const &x : e.checkpoints.back().x) EXPECT_TRUE(g.contains(x));
}

TEST(Sde, TrajectoryCsv)
{
    auto const run = cosine_run(0.001);
    EnsembleOptions o;
    o.n_particles = 3;
    o.dt = 1e-4;
    o.record_paths = 2;
    auto const e = simulate_ensemble(run, o);
    std::stringstream ss;
    write_trajectories_csv(ss, e.records);
    std::string header;
    std::getline(ss, header);
    EXPECT_EQ(header, "particle_id,t,x0,l,v,m,f");
    std::size_t rows = 0;
    for (std::string line; std::getline(ss, line);) ++rows;
    EXPECT_EQ(rows, 22u);
    std::stringstream guard;
    EXPECT_THROW(write_trajectories_csv(guard, e.records, 10), InputError);
}

TEST(Sde, InverseCdfSampling)
{
    auto const p = cosine_p0(100);
    EXPECT_NEAR(sample_inverse_cdf(p, 0.5), 0.5 - 0.0, 0.2);
    // CDF of 1 + 0.5 cos(pi x) is x + sin(pi x) / (2 pi)
    for (double u : {0.1, 0.37, 0.8}) {
        double const x = sample_inverse_cdf(p, u);
        EXPECT_NEAR(x + std::sin(pi * x) / (2 * pi), u, 1e-4);
    }
}
