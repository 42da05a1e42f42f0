#pragma once

// Particle representation of the diffusion: reflected Euler-Maruyama for
//
//   dX = -grad beta(X) dt + sqrt(2 f(p)/p)(t, X) dW - n(X) dL
//
// driven by the PDE density p, together with the trajectorial decomposition
// v(t, X_t) - v(t0, X_t0) = M_t + F_t of the pressure (entropy) process.

#include "trajent/entropy.hpp"
#include "trajent/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <thread>
#include <vector>

namespace trajent {

template <int Dim>
struct ParticleState {
    Point<Dim> x{};
    double l = 0.0;               ///< accumulated local time (folded distance)
    std::uint64_t seed_id = 0;    ///< particle identity for the counter-based RNG
};

/// One Euler-Maruyama step, keeping what the decomposition needs: the
/// increment actually consumed and the left-point diffusion coefficient.
template <int Dim>
struct EmStep {
    ParticleState<Dim> before;
    ParticleState<Dim> after;
    Point<Dim> dw{};              ///< Brownian increment (already scaled by sqrt(dt))
    double sigma = 0.0;
    double dt = 0.0;
    double t = 0.0;               ///< time at the start of the step
    std::uint64_t step_index = 0;
};

/// Mirror x back into the box, axis 0 then axis 1. Returns the total folded
/// distance. Proposals more than one domain width outside are rejected.
template <int Dim>
double reflect_into(Grid<Dim> const &grid, PointArg<Dim> &x)
{
    double folded = 0.0;
    for (int a = 0; a < Dim; ++a) {
        double const lo = grid.lo[a], hi = grid.hi[a], len = hi - lo;
        if (!std::isfinite(x[a]) || x[a] < lo - len || x[a] > hi + len)
            throw StepSizeError("proposal lies more than one domain width outside; reduce dt");
        // at most two folds are needed within one width
        for (int guard = 0; guard < 3 && (x[a] < lo || x[a] > hi); ++guard) {
            if (x[a] < lo) {
                folded += lo - x[a];
                x[a] = 2.0 * lo - x[a];
            } else {
                folded += x[a] - hi;
                x[a] = 2.0 * hi - x[a];
            }
        }
    }
    return folded;
}

namespace detail {

template <int Dim>
EmStep<Dim> em_core(ParticleState<Dim> const &state, Grid<Dim> const &grid, double sigma,
                    PerturbationPotential<Dim> const *beta, double dt, PointArg<Dim> const &dw)
{
    if (!(dt > 0.0)) throw StepSizeError("dt must be positive");
    for (int a = 0; a < Dim; ++a)
        if (!std::isfinite(dw[a])) throw std::domain_error("non-finite Brownian increment");
    EmStep<Dim> s;
    s.before = state;
    s.dw = dw;
    s.sigma = sigma;
    s.dt = dt;
    Point<Dim> x = state.x;
    Point<Dim> drift{};
    if (beta != nullptr && !beta->identically_zero) drift = beta->gradient(state.x);
    for (int a = 0; a < Dim; ++a) x[a] += sigma * dw[a] - drift[a] * dt;
    double const dl = reflect_into(grid, x);
    s.after = state;
    s.after.x = x;
    s.after.l = state.l + dl;
    return s;
}

} // namespace detail

/// Reflected step driven by a density field at the current time.
template <int Dim>
EmStep<Dim> em_step_reflected(ParticleState<Dim> const &state, DensityField<Dim> const &p, Nonlinearity const &nl,
                              double dt, PointArg<Dim> const &dw)
{
    double const u = interpolate(p, state.x);
    if (!(u > 0.0)) throw std::domain_error("density must be strictly positive");
    return detail::em_core<Dim>(state, p.grid, nl.diffusion_coeff(u), nullptr, dt, dw);
}

template <int Dim>
EmStep<Dim> em_step_perturbed(ParticleState<Dim> const &state, DensityField<Dim> const &p, Nonlinearity const &nl,
                              PerturbationPotential<Dim> const &beta, double dt, PointArg<Dim> const &dw)
{
    double const u = interpolate(p, state.x);
    if (!(u > 0.0)) throw std::domain_error("density must be strictly positive");
    return detail::em_core<Dim>(state, p.grid, nl.diffusion_coeff(u), &beta, dt, dw);
}

// ---------------------------------------------------------------------------

/// Per-snapshot fields the particles read (density, grad v, D or D^beta),
/// linearly interpolated in time between snapshots.
template <int Dim>
class DensityPath {
public:
    struct Sample {
        double p = 0.0;
        Point<Dim> grad_v{};
        double d = 0.0;
    };

    explicit DensityPath(PdeRun<Dim> const &run) : run_(&run)
    {
        if (run.snapshots.empty()) throw std::invalid_argument("run has no snapshots");
        bool const drift = run.perturbed() && !run.beta->identically_zero;
        grad_v_.reserve(run.size());
        d_.reserve(run.size());
        for (auto const &p : run.snapshots) {
            grad_v_.push_back(gradient_neumann(pressure_field(p, run.nl)));
            d_.push_back(drift ? perturbed_dissipation_field(p, run.nl, *run.beta) : dissipation_field(p, run.nl));
        }
    }

    PdeRun<Dim> const &run() const { return *run_; }
    Grid<Dim> const &grid() const { return run_->grid; }
    Nonlinearity const &nl() const { return run_->nl; }
    PerturbationPotential<Dim> const *beta() const
    {
        return run_->perturbed() && !run_->beta->identically_zero ? &*run_->beta : nullptr;
    }
    double t_start() const { return run_->t_start; }
    double t_last() const { return run_->snapshots.back().time; }

    /// Bracketing snapshot and weight of the later one.
    std::pair<std::size_t, double> locate(double t) const
    {
        double const s = (t - run_->t_start) / run_->snapshot_spacing;
        std::size_t const last = run_->snapshots.size() - 1;
        if (s < -1e-9 || s > static_cast<double>(last) + 1e-9)
            throw std::domain_error("time outside the PDE run");
        double const r = std::round(s);
        if (std::abs(s - r) < 1e-9) return {static_cast<std::size_t>(r), 0.0};
        std::size_t const k = std::min(static_cast<std::size_t>(std::floor(s)), last - 1);
        return {k, s - static_cast<double>(k)};
    }

    double density(double t, Point<Dim> const &x) const
    {
        auto const [k, w] = locate(t);
        double const a = interpolate_unchecked(grid(), run_->snapshots[k].values.data(), x);
        if (w == 0.0) return a;
        double const b = interpolate_unchecked(grid(), run_->snapshots[k + 1].values.data(), x);
        return (1.0 - w) * a + w * b;
    }

    Sample at(double t, Point<Dim> const &x) const
    {
        auto const [k, w] = locate(t);
        Sample s = sample_snapshot(k, x);
        if (w == 0.0) return s;
        Sample const b = sample_snapshot(k + 1, x);
        s.p = (1.0 - w) * s.p + w * b.p;
        s.d = (1.0 - w) * s.d + w * b.d;
        for (int a = 0; a < Dim; ++a) s.grad_v[a] = (1.0 - w) * s.grad_v[a] + w * b.grad_v[a];
        return s;
    }

private:
    Sample sample_snapshot(std::size_t k, Point<Dim> const &x) const
    {
        Sample s;
        s.p = interpolate_unchecked(grid(), run_->snapshots[k].values.data(), x);
        s.grad_v = interpolate_unchecked(grad_v_[k], x);
        s.d = interpolate_unchecked(grid(), d_[k].values.data(), x);
        return s;
    }

    PdeRun<Dim> const *run_;
    std::vector<VectorField<Dim>> grad_v_;
    std::vector<CellField<Dim>> d_;
};

/// Step along a density path (time-interpolated coefficients).
template <int Dim>
EmStep<Dim> em_step_on_path(ParticleState<Dim> const &state, DensityPath<Dim> const &path, double t, double dt,
                            PointArg<Dim> const &dw)
{
    double const u = path.density(t, state.x);
    if (!(u > 0.0)) throw std::domain_error("density must be strictly positive");
    auto s = detail::em_core<Dim>(state, path.grid(), path.nl().diffusion_coeff(u), path.beta(), dt, dw);
    s.t = t;
    return s;
}

template <int Dim>
struct TrajectoryRecord {
    std::uint64_t particle_id = 0;
    std::vector<double> times;
    std::vector<Point<Dim>> x_path;
    std::vector<double> l_path;
    std::vector<double> v_path;
    std::vector<double> m_path;
    std::vector<double> f_path;
    std::vector<Point<Dim>> dw_increments; ///< filled only when requested
    bool keep_increments = false;

    std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
    double residual(std::size_t k) const { return v_path[k] - v_path[0] - m_path[k] - f_path[k]; }
};

/// Start a record at the particle's initial state.
template <int Dim>
TrajectoryRecord<Dim> begin_record(ParticleState<Dim> const &state, DensityPath<Dim> const &path, double t0,
                                   bool keep_increments = false)
{
    TrajectoryRecord<Dim> r;
    r.particle_id = state.seed_id;
    r.keep_increments = keep_increments;
    r.times.push_back(t0);
    r.x_path.push_back(state.x);
    r.l_path.push_back(state.l);
    r.v_path.push_back(path.nl().pressure(path.density(t0, state.x)));
    r.m_path.push_back(0.0);
    r.f_path.push_back(0.0);
    return r;
}

/// Append one step of the decomposition: M += sigma <grad v, dW> and
/// F += D dt, both at the left point, and the new value of v. `dw` must be the
/// increment the step consumed.
template <int Dim>
void accumulate_decomposition(TrajectoryRecord<Dim> &traj, EmStep<Dim> const &step, DensityPath<Dim> const &path,
                              PointArg<Dim> const &dw)
{
    if (step.step_index != traj.steps())
        throw ContractViolation("decomposition step index does not follow the record");
    if (dw != step.dw) throw ContractViolation("increment differs from the one the step consumed");
    if (traj.x_path.empty() || traj.x_path.back() != step.before.x)
        throw ContractViolation("step does not start where the record ends");
    auto const left = path.at(step.t, step.before.x);
    double const dm = step.sigma * dot<Dim>(left.grad_v, dw);
    double const df = left.d * step.dt;
    double const t1 = step.t + step.dt;
    traj.times.push_back(t1);
    traj.x_path.push_back(step.after.x);
    traj.l_path.push_back(step.after.l);
    traj.v_path.push_back(path.nl().pressure(path.density(t1, step.after.x)));
    traj.m_path.push_back(traj.m_path.back() + dm);
    traj.f_path.push_back(traj.f_path.back() + df);
    if (traj.keep_increments) traj.dw_increments.push_back(dw);
}

// ---------------------------------------------------------------------------
// Ensembles

/// Inverse-CDF sample from a 1-D grid density (piecewise constant per cell).
inline double sample_inverse_cdf(DensityField<1> const &p, double u)
{
    auto const &g = p.grid;
    double const dx = g.width(0);
    double const total = pairwise_sum(p.values) * dx;
    double target = u * total;
    for (int i = 0; i < g.n[0]; ++i) {
        double const m = p.values[static_cast<std::size_t>(i)] * dx;
        if (target <= m || i == g.n[0] - 1) {
            double const frac = m > 0.0 ? std::clamp(target / m, 0.0, 1.0) : 0.5;
            return g.face(0, i) + frac * dx;
        }
        target -= m;
    }
    return g.hi[0];
}

/// Initial position of a particle: inverse CDF in 1-D, rejection from the
/// max-value envelope in 2-D.
template <int Dim>
Point<Dim> sample_initial_position(DensityField<Dim> const &p, std::uint64_t seed, std::uint64_t id)
{
    if constexpr (Dim == 1) {
        return {sample_inverse_cdf(p, rng_uniform_pair(seed, id, kInitialSamplingCounter)[0])};
    } else {
        double const envelope = p.max();
        auto const &g = p.grid;
        for (std::uint64_t attempt = 0; attempt < 1'000'000; ++attempt) {
            auto const a = rng_uniform_pair(seed, id, kInitialSamplingCounter + 2 * attempt);
            auto const b = rng_uniform_pair(seed, id, kInitialSamplingCounter + 2 * attempt + 1);
            Point<2> const x{g.lo[0] + a[0] * g.length(0), g.lo[1] + a[1] * g.length(1)};
            if (b[0] * envelope <= interpolate_unchecked(g, p.values.data(), x)) return x;
        }
        throw std::runtime_error("rejection sampling failed to accept a point");
    }
}

struct EnsembleOptions {
    std::size_t n_particles = 10000;
    double dt = 1e-4;
    std::uint64_t seed = 42;
    double t_end = -1.0;                 ///< < 0: run to the end of the PDE run
    std::vector<std::size_t> checkpoint_steps; ///< empty: start and end only
    int histogram_bins = 20;             ///< per axis
    std::size_t record_paths = 0;        ///< full trajectories kept for the first N particles
    bool keep_increments = false;
    unsigned workers = 0;                ///< 0: hardware concurrency
};

/// Per-particle state at one checkpoint.
template <int Dim>
struct Checkpoint {
    std::size_t step = 0;
    double t = 0.0;
    std::vector<Point<Dim>> x;
    std::vector<double> l;
    std::vector<double> v;
    std::vector<double> m;
    std::vector<double> f;
    std::vector<double> d;   ///< D (or D^beta) at (t, x)
};

struct EnsembleSummary {
    double t = 0.0;
    double mean_v = 0.0;
    double mean_m = 0.0;
    double se_m = 0.0;
    double mean_f = 0.0;
    double se_f = 0.0;
    double mean_residual = 0.0;
    double mean_abs_residual = 0.0;
    double fraction_touched = 0.0;   ///< fraction of particles with l > 0
    std::vector<double> hist;        ///< density estimate per bin (flat, axis 0 fastest)
};

template <int Dim>
struct EnsembleResult {
    double dt = 0.0;
    double t_start = 0.0;
    std::size_t n_steps = 0;
    int histogram_bins = 0;
    std::vector<Checkpoint<Dim>> checkpoints;
    std::vector<EnsembleSummary> summaries;
    std::vector<TrajectoryRecord<Dim>> records;
};

/// Histogram density estimate of positions on `bins` equal bins per axis.
template <int Dim>
std::vector<double> histogram(Grid<Dim> const &grid, std::vector<PointArg<Dim>> const &xs, int bins)
{
    std::size_t total_bins = 1;
    for (int a = 0; a < Dim; ++a) total_bins *= static_cast<std::size_t>(bins);
    std::vector<double> counts(total_bins, 0.0);
    for (auto const &x : xs) {
        std::size_t idx = 0, mult = 1;
        for (int a = 0; a < Dim; ++a) {
            int b = static_cast<int>((x[a] - grid.lo[a]) / grid.length(a) * bins);
            b = std::clamp(b, 0, bins - 1);
            idx += static_cast<std::size_t>(b) * mult;
            mult *= static_cast<std::size_t>(bins);
        }
        counts[idx] += 1.0;
    }
    double bin_volume = 1.0;
    for (int a = 0; a < Dim; ++a) bin_volume *= grid.length(a) / bins;
    double const norm = 1.0 / (static_cast<double>(xs.size()) * bin_volume);
    for (double &c : counts) c *= norm;
    return counts;
}

/// Average of a grid field over `bins` equal bins per axis (exact cell overlap).
template <int Dim>
std::vector<double> bin_average(CellField<Dim> const &field, int bins)
{
    auto const &g = field.grid;
    // per-axis overlap weights: weight[a][b] lists (cell, fraction of bin)
    std::array<std::vector<std::vector<std::pair<int, double>>>, Dim> w;
    for (int a = 0; a < Dim; ++a) {
        w[a].resize(static_cast<std::size_t>(bins));
        double const bw = g.length(a) / bins, cw = g.width(a);
        for (int b = 0; b < bins; ++b) {
            double const b0 = g.lo[a] + b * bw, b1 = b0 + bw;
            for (int i = 0; i < g.n[a]; ++i) {
                double const c0 = g.face(a, i), c1 = c0 + cw;
                double const ov = std::min(b1, c1) - std::max(b0, c0);
                if (ov > 0.0) w[a][static_cast<std::size_t>(b)].push_back({i, ov / bw});
            }
        }
    }
    std::size_t total = 1;
    for (int a = 0; a < Dim; ++a) total *= static_cast<std::size_t>(bins);
    std::vector<double> out(total, 0.0);
    if constexpr (Dim == 1) {
        for (int b = 0; b < bins; ++b)
            for (auto [i, frac] : w[0][static_cast<std::size_t>(b)]) out[static_cast<std::size_t>(b)] += frac * field.values[static_cast<std::size_t>(i)];
    } else {
        for (int bj = 0; bj < bins; ++bj)
            for (int bi = 0; bi < bins; ++bi) {
                double s = 0.0;
                for (auto [j, fj] : w[1][static_cast<std::size_t>(bj)])
                    for (auto [i, fi] : w[0][static_cast<std::size_t>(bi)]) s += fi * fj * field.values[g.flatten({i, j})];
                out[static_cast<std::size_t>(bi) + static_cast<std::size_t>(bins) * static_cast<std::size_t>(bj)] = s;
            }
    }
    return out;
}

/// L1 distance between a histogram density and a grid field averaged on the
/// same bins.
template <int Dim>
double histogram_l1(std::vector<double> const &hist, CellField<Dim> const &field, int bins)
{
    auto const avg = bin_average(field, bins);
    if (avg.size() != hist.size()) throw std::invalid_argument("histogram and bin layout differ");
    double bin_volume = 1.0;
    for (int a = 0; a < Dim; ++a) bin_volume *= field.grid.length(a) / bins;
    std::vector<double> diff(hist.size());
    for (std::size_t i = 0; i < hist.size(); ++i) diff[i] = std::abs(hist[i] - avg[i]);
    return pairwise_sum(diff) * bin_volume;
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn &&fn)
{
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto &t : pool) t.join();
    for (auto &e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace detail

/// Check that the SDE step and the snapshot spacing are commensurate and the
/// spacing is at most 10 dt.
template <int Dim>
void check_time_alignment(PdeRun<Dim> const &run, double dt)
{
    double const spacing = run.snapshot_spacing;
    if (!(dt > 0.0)) throw InputError("particle dt must be positive");
    if (spacing > 10.0 * dt * (1.0 + 1e-9)) throw InputError("snapshot spacing exceeds 10 particle steps");
    double const r = spacing / dt, q = dt / spacing;
    if (std::abs(r - std::round(r)) > 1e-6 && std::abs(q - std::round(q)) > 1e-6)
        throw InputError("particle dt and snapshot spacing are not commensurate");
}

/// Simulate particles along a PDE run (the run's perturbation, if any, drives
/// the drift). Initial positions are drawn from the first snapshot.
template <int Dim>
EnsembleResult<Dim> simulate_ensemble(PdeRun<Dim> const &run, EnsembleOptions const &opt)
{
    if (opt.n_particles < 2) throw InputError("need at least two particles");
    check_time_alignment(run, opt.dt);
    DensityPath<Dim> const path(run);
    double const t0 = run.t_start;
    double const horizon = opt.t_end < 0.0 ? run.t_reached : opt.t_end;
    if (horizon > run.t_reached + 1e-12) throw InputError("ensemble horizon exceeds the PDE run");
    std::size_t const n_steps = static_cast<std::size_t>(std::llround((horizon - t0) / opt.dt));

    std::vector<std::size_t> cps = opt.checkpoint_steps;
    cps.push_back(0);
    cps.push_back(n_steps);
    std::sort(cps.begin(), cps.end());
    cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
    if (cps.back() > n_steps) throw InputError("checkpoint beyond the ensemble horizon");

    EnsembleResult<Dim> res;
    res.dt = opt.dt;
    res.t_start = t0;
    res.n_steps = n_steps;
    res.histogram_bins = opt.histogram_bins;
    std::size_t const n = opt.n_particles;
    res.checkpoints.resize(cps.size());
    for (std::size_t c = 0; c < cps.size(); ++c) {
        auto &cp = res.checkpoints[c];
        cp.step = cps[c];
        cp.t = t0 + static_cast<double>(cps[c]) * opt.dt;
        cp.x.resize(n);
        cp.l.resize(n);
        cp.v.resize(n);
        cp.m.resize(n);
        cp.f.resize(n);
        cp.d.resize(n);
    }
    std::size_t const n_records = std::min(opt.record_paths, n);
    res.records.resize(n_records);

    auto const &p0 = run.snapshots.front();
    auto const &nl = run.nl;
    double const sqrt_dt = std::sqrt(opt.dt);

    detail::parallel_for(n, opt.workers, [&](std::size_t id) {
        ParticleState<Dim> st;
        st.seed_id = id;
        st.x = sample_initial_position(p0, opt.seed, id);
        double const v0 = nl.pressure(path.density(t0, st.x));
        double m = 0.0, f = 0.0, v = v0;
        bool const record = id < n_records;
        TrajectoryRecord<Dim> rec;
        if (record) rec = begin_record(st, path, t0, opt.keep_increments);
        std::size_t next_cp = 0;
        auto store = [&](std::size_t step, double t) {
            auto &cp = res.checkpoints[next_cp];
            cp.x[id] = st.x;
            cp.l[id] = st.l;
            cp.v[id] = v;
            cp.m[id] = m;
            cp.f[id] = f;
            cp.d[id] = path.at(t, st.x).d;
            (void)step;
            ++next_cp;
        };
        if (cps[0] == 0) store(0, t0);
        for (std::size_t k = 0; k < n_steps; ++k) {
            double const t = t0 + static_cast<double>(k) * opt.dt;
            auto z = rng_stream<Dim>(opt.seed, id, k);
            for (int a = 0; a < Dim; ++a) z[a] *= sqrt_dt;
            auto step = em_step_on_path(st, path, t, opt.dt, z);
            step.step_index = k;
            if (record) accumulate_decomposition(rec, step, path, z);
            auto const left = path.at(t, st.x);
            m += step.sigma * dot<Dim>(left.grad_v, z);
            f += left.d * opt.dt;
            st = step.after;
            double const t1 = t0 + static_cast<double>(k + 1) * opt.dt;
            v = nl.pressure(path.density(t1, st.x));
            if (next_cp < cps.size() && cps[next_cp] == k + 1) store(k + 1, t1);
        }
        if (record) res.records[id] = std::move(rec);
    });

    for (auto const &cp : res.checkpoints) {
        EnsembleSummary s;
        s.t = cp.t;
        s.mean_v = mean(cp.v);
        s.mean_m = mean(cp.m);
        s.se_m = standard_error(cp.m);
        s.mean_f = mean(cp.f);
        s.se_f = standard_error(cp.f);
        std::vector<double> resid(n), abs_resid(n), touched(n);
        auto const &first = res.checkpoints.front();
        for (std::size_t i = 0; i < n; ++i) {
            resid[i] = cp.v[i] - first.v[i] - cp.m[i] - cp.f[i];
            abs_resid[i] = std::abs(resid[i]);
            touched[i] = cp.l[i] > 0.0 ? 1.0 : 0.0;
        }
        s.mean_residual = mean(resid);
        s.mean_abs_residual = mean(abs_resid);
        s.fraction_touched = mean(touched);
        s.hist = histogram(run.grid, cp.x, opt.histogram_bins);
        res.summaries.push_back(std::move(s));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Diagnostics built on the decomposition

struct RefinementReport {
    double dt = 0.0;
    std::size_t paths = 0;
    double median_coarse = 0.0;   ///< median |residual| after one step of dt
    double median_fine = 0.0;     ///< same with dt / 2 and the same normal draw
    double ratio = 0.0;           ///< median_coarse / median_fine
};

/// One-step decomposition residual v(t0+h, X) - v(t0, X0) - dM - dF for h = dt
/// and h = dt/2, driven by the same standard normal per path. The run needs
/// snapshots at t0 + dt/2 and t0 + dt.
template <int Dim>
RefinementReport single_step_refinement(PdeRun<Dim> const &run, double dt, std::size_t n_paths, std::uint64_t seed)
{
    DensityPath<Dim> const path(run);
    double const t0 = run.t_start;
    auto const &p0 = run.snapshots.front();
    std::vector<double> coarse(n_paths), fine(n_paths);
    for (std::size_t id = 0; id < n_paths; ++id) {
        ParticleState<Dim> st;
        st.seed_id = id;
        st.x = sample_initial_position(p0, seed, id);
        auto const z = rng_stream<Dim>(seed, id, 0);
        for (int level = 0; level < 2; ++level) {
            double const h = level == 0 ? dt : 0.5 * dt;
            Point<Dim> dw = z;
            for (int a = 0; a < Dim; ++a) dw[a] *= std::sqrt(h);
            auto rec = begin_record(st, path, t0);
            auto step = em_step_on_path(st, path, t0, h, dw);
            accumulate_decomposition(rec, step, path, dw);
            (level == 0 ? coarse : fine)[id] = std::abs(rec.residual(1));
        }
    }
    auto median = [](std::vector<double> v) {
        auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
        std::nth_element(v.begin(), mid, v.end());
        double m = *mid;
        if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
        return m;
    };
    RefinementReport r;
    r.dt = dt;
    r.paths = n_paths;
    r.median_coarse = median(coarse);
    r.median_fine = median(fine);
    r.ratio = r.median_fine > 0.0 ? r.median_coarse / r.median_fine : 0.0;
    return r;
}

struct RateRegression {
    double elapsed = 0.0;
    double slope = 0.0;            ///< coefficient of D(t0, X_t0)
    double intercept = 0.0;
    double control_coef = 0.0;     ///< coefficient of the martingale increment rate
    double slope_se = 0.0;
    std::size_t samples = 0;
    bool degenerate = false;       ///< D has (numerically) no spread
};

/// Regress [v(t, X_t) - v(t0, X_t0)] / (t - t0) on D(t0, X_t0), with the
/// martingale increment (M_t - M_t0) / (t - t0) as a second regressor. The
/// martingale part has zero conditional mean given X_t0, so it acts as a
/// control variate and leaves the D coefficient unbiased.
template <int Dim>
RateRegression conditional_rate_regression(Checkpoint<Dim> const &start, Checkpoint<Dim> const &later)
{
    std::size_t const n = start.v.size();
    if (later.v.size() != n || n < 4) throw InputError("checkpoints do not match");
    double const dt = later.t - start.t;
    if (!(dt > 0.0)) throw InputError("later checkpoint must follow the start");
    std::vector<double> y(n), d(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = (later.v[i] - start.v[i]) / dt;
        d[i] = start.d[i];
        c[i] = (later.m[i] - start.m[i]) / dt;
    }
    double const my = mean(y), md = mean(d), mc = mean(c);
    std::vector<double> sdd(n), sdc(n), scc(n), sdy(n), scy(n);
    for (std::size_t i = 0; i < n; ++i) {
        double const a = d[i] - md, b = c[i] - mc, e = y[i] - my;
        sdd[i] = a * a;
        sdc[i] = a * b;
        scc[i] = b * b;
        sdy[i] = a * e;
        scy[i] = b * e;
    }
    double const Sdd = pairwise_sum(sdd), Sdc = pairwise_sum(sdc), Scc = pairwise_sum(scc);
    double const Sdy = pairwise_sum(sdy), Scy = pairwise_sum(scy);
    RateRegression r;
    r.elapsed = dt;
    r.samples = n;
    double const det = Sdd * Scc - Sdc * Sdc;
    if (!(Sdd > 1e-20 * static_cast<double>(n)) || !(det > 0.0)) {
        r.degenerate = true;
        return r;
    }
    r.slope = (Sdy * Scc - Scy * Sdc) / det;
    r.control_coef = (Scy * Sdd - Sdy * Sdc) / det;
    r.intercept = my - r.slope * md - r.control_coef * mc;
    std::vector<double> res2(n);
    for (std::size_t i = 0; i < n; ++i) {
        double const e = y[i] - r.intercept - r.slope * d[i] - r.control_coef * c[i];
        res2[i] = e * e;
    }
    double const sigma2 = pairwise_sum(res2) / static_cast<double>(n - 3);
    r.slope_se = std::sqrt(sigma2 * Scc / det);
    return r;
}

/// Trajectory dump: particle_id, t, x..., l, v, m, f. Refuses to write more
/// than `max_rows` rows.
template <int Dim>
void write_trajectories_csv(std::ostream &os, std::vector<TrajectoryRecord<Dim>> const &records,
                            std::size_t max_rows = 1'000'000)
{
    std::size_t rows = 0;
    for (auto const &r : records) rows += r.times.size();
    if (rows > max_rows) throw InputError("trajectory dump exceeds the row limit");
    os << std::setprecision(17) << "particle_id,t";
    for (int a = 0; a < Dim; ++a) os << ",x" << a;
    os << ",l,v,m,f\n";
    for (auto const &r : records)
        for (std::size_t k = 0; k < r.times.size(); ++k) {
            os << r.particle_id << ',' << r.times[k];
            for (int a = 0; a < Dim; ++a) os << ',' << r.x_path[k][a];
            os << ',' << r.l_path[k] << ',' << r.v_path[k] << ',' << r.m_path[k] << ',' << r.f_path[k] << '\n';
        }
}

} // namespace trajent
