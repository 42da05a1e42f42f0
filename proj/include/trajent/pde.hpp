#pragma once

// Explicit conservative finite-volume solver for
//
//   d/dt p = Laplace f(p)                    (unperturbed)
//   d/dt p = div( grad f(p) + p grad beta )  (perturbed by a potential beta)
//
// with no-flux boundary conditions. Face fluxes are stored per axis; boundary
// faces carry zero flux, so total mass is conserved up to round-off.

#include "trajent/grid.hpp"
#include "trajent/nonlinearity.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace trajent {

template <int Dim>
using Hessian = std::array<std::array<double, Dim>, Dim>;

/// Smooth potential beta with gradient and Hessian. The gradient must vanish on
/// the boundary of the domain it is used on.
template <int Dim>
struct PerturbationPotential {
    std::function<double(Point<Dim> const &)> value;
    std::function<Point<Dim>(Point<Dim> const &)> gradient;
    std::function<Hessian<Dim>(Point<Dim> const &)> hessian;
    std::string label = "custom";
    bool identically_zero = false;

    static PerturbationPotential zero()
    {
        PerturbationPotential b;
        b.value = [](Point<Dim> const &) { return 0.0; };
        b.gradient = [](Point<Dim> const &) { return Point<Dim>{}; };
        b.hessian = [](Point<Dim> const &) { return Hessian<Dim>{}; };
        b.label = "zero";
        b.identically_zero = true;
        return b;
    }

    /// beta(x) = amplitude * cos(k pi (x_axis - lo)/L) along one axis. Integer k
    /// makes the gradient vanish at both ends of [lo, lo+L].
    static PerturbationPotential cosine(double amplitude, double k, double lo = 0.0, double length = 1.0, int axis = 0)
    {
        double const w = k * std::numbers::pi / length;
        PerturbationPotential b;
        b.value = [=](Point<Dim> const &x) { return amplitude * std::cos(w * (x[axis] - lo)); };
        b.gradient = [=](Point<Dim> const &x) {
            Point<Dim> g{};
            g[axis] = -amplitude * w * std::sin(w * (x[axis] - lo));
            return g;
        };
        b.hessian = [=](Point<Dim> const &x) {
            Hessian<Dim> hs{};
            hs[axis][axis] = -amplitude * w * w * std::cos(w * (x[axis] - lo));
            return hs;
        };
        b.label = "cosine(k=" + std::to_string(k) + ",A=" + std::to_string(amplitude) + ")";
        b.identically_zero = amplitude == 0.0;
        return b;
    }

    /// beta(x) = amplitude * prod_a (1 - cos(2 k pi (x_a - lo_a)/L_a)). The full
    /// gradient vanishes on the whole boundary of the box, also in 2-D.
    static PerturbationPotential bump(double amplitude, int k, Point<Dim> lo, Point<Dim> length)
    {
        Point<Dim> w{};
        for (int a = 0; a < Dim; ++a) w[a] = 2.0 * k * std::numbers::pi / length[a];
        auto parts = [=](Point<Dim> const &x) {
            std::array<std::array<double, 3>, Dim> t{}; // 1 - cos, sin, cos
            for (int a = 0; a < Dim; ++a) {
                double const arg = w[a] * (x[a] - lo[a]);
                t[a] = {1.0 - std::cos(arg), std::sin(arg), std::cos(arg)};
            }
            return t;
        };
        auto others = [](auto const &t, int a, int b) {
            double p = 1.0;
            for (int c = 0; c < Dim; ++c)
                if (c != a && c != b) p *= t[c][0];
            return p;
        };
        PerturbationPotential b;
        b.value = [=](Point<Dim> const &x) {
            auto const t = parts(x);
            return amplitude * others(t, -1, -1);
        };
        b.gradient = [=](Point<Dim> const &x) {
            auto const t = parts(x);
            Point<Dim> g{};
            for (int a = 0; a < Dim; ++a) g[a] = amplitude * w[a] * t[a][1] * others(t, a, a);
            return g;
        };
        b.hessian = [=](Point<Dim> const &x) {
            auto const t = parts(x);
            Hessian<Dim> hs{};
            for (int a = 0; a < Dim; ++a)
                for (int c = 0; c < Dim; ++c)
                    hs[a][c] = a == c ? amplitude * w[a] * w[a] * t[a][2] * others(t, a, a)
                                      : amplitude * w[a] * t[a][1] * w[c] * t[c][1] * others(t, a, c);
            return hs;
        };
        b.label = "bump(k=" + std::to_string(k) + ",A=" + std::to_string(amplitude) + ")";
        b.identically_zero = amplitude == 0.0;
        return b;
    }

    /// Sum of potentials.
    static PerturbationPotential sum(std::vector<PerturbationPotential> const &terms)
    {
        PerturbationPotential b;
        b.value = [terms](Point<Dim> const &x) {
            double s = 0.0;
            for (auto const &t : terms) s += t.value(x);
            return s;
        };
        b.gradient = [terms](Point<Dim> const &x) {
            Point<Dim> g{};
            for (auto const &t : terms) {
                auto const gt = t.gradient(x);
                for (int a = 0; a < Dim; ++a) g[a] += gt[a];
            }
            return g;
        };
        b.hessian = [terms](Point<Dim> const &x) {
            Hessian<Dim> hs{};
            for (auto const &t : terms) {
                auto const ht = t.hessian(x);
                for (int a = 0; a < Dim; ++a)
                    for (int c = 0; c < Dim; ++c) hs[a][c] += ht[a][c];
            }
            return hs;
        };
        b.label = "sum";
        b.identically_zero = std::all_of(terms.begin(), terms.end(), [](auto const &t) { return t.identically_zero; });
        return b;
    }

    /// Largest |grad beta| over sample points on the boundary of the grid's
    /// domain (faces of boundary cells plus corners).
    double max_boundary_gradient(Grid<Dim> const &grid) const
    {
        double worst = 0.0;
        auto probe = [&](Point<Dim> const &x) {
            auto const g = gradient(x);
            worst = std::max(worst, std::sqrt(dot<Dim>(g, g)));
        };
        if constexpr (Dim == 1) {
            probe({grid.lo[0]});
            probe({grid.hi[0]});
        } else {
            for (int i = 0; i <= grid.n[0]; ++i) {
                probe({grid.face(0, i), grid.lo[1]});
                probe({grid.face(0, i), grid.hi[1]});
            }
            for (int j = 0; j <= grid.n[1]; ++j) {
                probe({grid.lo[0], grid.face(1, j)});
                probe({grid.hi[0], grid.face(1, j)});
            }
        }
        return worst;
    }

    void check_boundary(Grid<Dim> const &grid, double tol = 1e-10) const
    {
        double const g = max_boundary_gradient(grid);
        if (g > tol)
            throw std::domain_error("perturbation gradient does not vanish on the boundary (|grad beta| = " +
                                    std::to_string(g) + ")");
    }

    double max_abs_gradient(Grid<Dim> const &grid) const
    {
        double worst = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            auto const g = gradient(grid.center(i));
            for (int a = 0; a < Dim; ++a) worst = std::max(worst, std::abs(g[a]));
        }
        // faces as well: the solver evaluates the drift there
        for (int a = 0; a < Dim; ++a)
            for (std::size_t i = 0; i < grid.size(); ++i) {
                auto x = grid.center(i);
                x[a] -= 0.5 * grid.width(a);
                worst = std::max(worst, std::abs(gradient(x)[a]));
            }
        return worst;
    }
};

// ---------------------------------------------------------------------------
// Time-step control

/// Recommended explicit step: safety * dx^2 / (2 d max f'(p)).
template <int Dim>
double cfl_dt(CellField<Dim> const &p, Nonlinearity const &nl, double safety = 0.45)
{
    double max_df = 0.0;
    for (double v : p.values) max_df = std::max(max_df, nl.df(v));
    if (!(max_df > 0.0)) return std::numeric_limits<double>::infinity();
    double const dx = p.grid.min_width();
    return safety * dx * dx / (2.0 * Dim * max_df);
}

/// Advective limit dx / (2 max |grad beta|).
template <int Dim>
double drift_cfl_dt(Grid<Dim> const &grid, PerturbationPotential<Dim> const &beta)
{
    if (beta.identically_zero) return std::numeric_limits<double>::infinity();
    double const g = beta.max_abs_gradient(grid);
    if (!(g > 0.0)) return std::numeric_limits<double>::infinity();
    return grid.min_width() / (2.0 * g);
}

namespace detail {

template <int Dim>
void check_step_size(CellField<Dim> const &p, Nonlinearity const &nl, double dt)
{
    if (!(dt > 0.0)) throw StepSizeError("time step must be positive");
    // The safety factor is a recommendation; the hard limit is the monotonicity
    // bound of the explicit scheme.
    double const limit = cfl_dt(p, nl, 1.0);
    if (dt > limit * (1.0 + 1e-12))
        throw StepSizeError("dt=" + std::to_string(dt) + " exceeds the diffusive stability limit " + std::to_string(limit));
}

template <int Dim>
void check_positive(std::vector<double> const &values)
{
    for (double v : values)
        if (!(v > 0.0)) throw StabilityError("explicit step produced a nonpositive density; reduce dt");
}

/// Drift gradient d beta / d x_axis sampled on the faces of each line.
template <int Dim>
std::vector<double> face_drift(Grid<Dim> const &grid, PerturbationPotential<Dim> const &beta, int axis)
{
    int const na = grid.n[axis];
    std::size_t const lines = grid.size() / static_cast<std::size_t>(na);
    std::vector<double> out(lines * static_cast<std::size_t>(na + 1), 0.0);
    for (std::size_t line = 0; line < lines; ++line) {
        std::size_t const base = line_base(grid, axis, line);
        Point<Dim> x = grid.center(base);
        for (int i = 1; i < na; ++i) {
            x[axis] = grid.face(axis, i);
            out[line * static_cast<std::size_t>(na + 1) + static_cast<std::size_t>(i)] = beta.gradient(x)[axis];
        }
    }
    return out;
}

} // namespace detail

/// Face fluxes G = grad f(p) + p grad beta on every axis (zero on boundary
/// faces). The drift term uses the central face average when the cell Peclet
/// number allows a monotone update and the upwind value otherwise.
template <int Dim>
std::array<std::vector<double>, Dim> face_fluxes(CellField<Dim> const &p, Nonlinearity const &nl,
                                                 PerturbationPotential<Dim> const *beta)
{
    auto const &grid = p.grid;
    std::vector<double> fp(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) fp[i] = nl.f(p.values[i]);
    std::array<std::vector<double>, Dim> fluxes;
    for (int a = 0; a < Dim; ++a) {
        fluxes[a] = face_gradients(fp, grid, a);
        if (beta == nullptr || beta->identically_zero) continue;
        auto const drift = detail::face_drift(grid, *beta, a);
        int const na = grid.n[a];
        std::size_t const lines = grid.size() / static_cast<std::size_t>(na);
        std::size_t const s = grid.stride(a);
        double const dx = grid.width(a);
        for (std::size_t line = 0; line < lines; ++line) {
            std::size_t const base = line_base(grid, a, line);
            for (int i = 1; i < na; ++i) {
                std::size_t const k = line * static_cast<std::size_t>(na + 1) + static_cast<std::size_t>(i);
                std::size_t const l = base + static_cast<std::size_t>(i - 1) * s;
                double const b = drift[k];
                double const pl = p.values[l], pr = p.values[l + s];
                double const diffusivity = std::min(nl.df(pl), nl.df(pr));
                double face_p;
                if (std::abs(b) * dx <= 2.0 * diffusivity) face_p = 0.5 * (pl + pr);
                else face_p = b < 0.0 ? pl : pr; // transport velocity is -grad beta
                fluxes[a][k] += b * face_p;
            }
        }
    }
    return fluxes;
}

/// Right-hand side div(grad f(p) + p grad beta) per cell.
template <int Dim>
std::vector<double> pde_rhs(CellField<Dim> const &p, Nonlinearity const &nl, PerturbationPotential<Dim> const *beta)
{
    return divergence_of_faces<Dim>(face_fluxes(p, nl, beta), p.grid);
}

namespace detail {

template <int Dim>
CellField<Dim> advance(CellField<Dim> const &p, Nonlinearity const &nl, PerturbationPotential<Dim> const *beta,
                       double dt)
{
    check_step_size(p, nl, dt);
    if (beta != nullptr && !beta->identically_zero && dt > drift_cfl_dt(p.grid, *beta) * (1.0 + 1e-12))
        throw StepSizeError("dt exceeds the drift limit dx / (2 max|grad beta|)");
    auto const rhs = pde_rhs(p, nl, beta);
    CellField<Dim> out(p.grid, 0.0, p.time + dt);
    for (std::size_t i = 0; i < p.size(); ++i) out.values[i] = p.values[i] + dt * rhs[i];
    check_positive<Dim>(out.values);
    return out;
}

} // namespace detail

template <int Dim>
CellField<Dim> step_diffusion(CellField<Dim> const &p, Nonlinearity const &nl, double dt)
{
    return detail::advance<Dim>(p, nl, nullptr, dt);
}

template <int Dim>
CellField<Dim> step_perturbed(CellField<Dim> const &p, Nonlinearity const &nl, PerturbationPotential<Dim> const &beta,
                              double dt)
{
    return detail::advance<Dim>(p, nl, &beta, dt);
}

// ---------------------------------------------------------------------------
// Runs

struct KappaReport {
    double min = 0.0;
    double max = 0.0;
};

template <int Dim>
struct PdeRun {
    Nonlinearity nl = Nonlinearity::linear();
    Grid<Dim> grid;
    double dt = 0.0;
    double t_start = 0.0;
    double t_end = 0.0;          ///< requested horizon
    double t_reached = 0.0;      ///< horizon actually reached (T_beta for perturbed runs)
    double snapshot_spacing = 0.0;
    std::size_t n_steps = 0;
    std::vector<DensityField<Dim>> snapshots;
    KappaReport kappa_report;
    double mass_drift = 0.0;     ///< max |mass - initial mass| over snapshots
    std::optional<PerturbationPotential<Dim>> beta;
    std::optional<std::string> halted; ///< set when a perturbed run left its admissible band

    bool perturbed() const { return beta.has_value(); }
    std::size_t size() const { return snapshots.size(); }
    double time(std::size_t k) const { return snapshots[k].time; }
};

struct SolveOptions {
    double t_end = 0.0;
    double dt = 0.0;             ///< 0 selects an aligned CFL step
    int snapshot_every = 1;      ///< steps between stored snapshots
    double snapshot_spacing = 0.0; ///< used with dt = 0: store every `spacing` time units
    double cfl_safety = 0.45;
};

/// Largest step <= the CFL recommendation that divides `spacing` exactly into
/// an integer number of steps. Accounts for the drift limit when beta is given.
template <int Dim>
std::pair<double, int> aligned_cfl_dt(CellField<Dim> const &p0, Nonlinearity const &nl,
                                      PerturbationPotential<Dim> const *beta, double spacing, double safety = 0.45)
{
    double limit = cfl_dt(p0, nl, safety);
    if (beta != nullptr) limit = std::min(limit, drift_cfl_dt(p0.grid, *beta));
    int const steps = std::max(1, static_cast<int>(std::ceil(spacing / limit - 1e-9)));
    return {spacing / steps, steps};
}

/// Advance p0 to options.t_end. Unperturbed runs assert the comparison
/// principle min p0 <= p <= max p0 (1e-10 slack) and throw BoundsError when it
/// fails. Perturbed runs stop early, recording `halted`, once p leaves
/// [1/(2k), k + 1/(2k)] with k = max(max p0, 1/min p0).
template <int Dim>
PdeRun<Dim> solve(DensityField<Dim> const &p0, Nonlinearity const &nl, PerturbationPotential<Dim> const *beta,
                  SolveOptions const &options)
{
    if (!(options.t_end >= p0.time)) throw std::invalid_argument("t_end precedes the initial time");
    for (double v : p0.values)
        if (!(v > 0.0)) throw std::domain_error("initial density must be strictly positive");

    PdeRun<Dim> run;
    run.nl = nl;
    run.grid = p0.grid;
    run.t_start = p0.time;
    run.t_end = options.t_end;
    if (beta != nullptr) run.beta = *beta;

    double dt = options.dt;
    int every = options.snapshot_every;
    if (dt <= 0.0) {
        double const spacing = options.snapshot_spacing > 0.0 ? options.snapshot_spacing : options.t_end - p0.time;
        auto const [aligned, steps] = aligned_cfl_dt(p0, nl, beta, spacing, options.cfl_safety);
        dt = aligned;
        every = steps;
    }
    if (every < 1) throw std::invalid_argument("snapshot_every must be >= 1");
    run.dt = dt;
    run.snapshot_spacing = dt * every;

    double const lo0 = p0.min(), hi0 = p0.max();
    double const kappa = std::max(hi0, 1.0 / lo0);
    double const band_lo = 1.0 / (2.0 * kappa), band_hi = kappa + 1.0 / (2.0 * kappa);
    double const mass0 = integrate(p0);

    run.kappa_report = {lo0, hi0};
    run.snapshots.push_back(p0);

    long const total = std::lround((options.t_end - p0.time) / dt);
    CellField<Dim> p = p0;
    for (long step = 1; step <= total; ++step) {
        p = detail::advance<Dim>(p, nl, beta, dt);
        p.time = p0.time + static_cast<double>(step) * dt;
        ++run.n_steps;
        double const lo = p.min(), hi = p.max();
        run.kappa_report.min = std::min(run.kappa_report.min, lo);
        run.kappa_report.max = std::max(run.kappa_report.max, hi);
        if (beta == nullptr) {
            if (lo < lo0 - 1e-10 || hi > hi0 + 1e-10)
                throw BoundsError("comparison principle violated at t=" + std::to_string(p.time));
        } else if (lo < band_lo || hi > band_hi) {
            run.halted = "density left [1/(2k), k+1/(2k)] at t=" + std::to_string(p.time);
            break;
        }
        if (step % every == 0) {
            run.mass_drift = std::max(run.mass_drift, std::abs(integrate(p) - mass0));
            run.snapshots.push_back(p);
        }
    }
    run.t_reached = run.snapshots.back().time;
    return run;
}

template <int Dim>
PdeRun<Dim> solve(DensityField<Dim> const &p0, Nonlinearity const &nl, SolveOptions const &options)
{
    return solve<Dim>(p0, nl, nullptr, options);
}

template <int Dim>
PdeRun<Dim> solve(DensityField<Dim> const &p0, Nonlinearity const &nl, PerturbationPotential<Dim> const &beta,
                  SolveOptions const &options)
{
    return solve<Dim>(p0, nl, &beta, options);
}

/// Snapshot index nearest to time t (snapshots are evenly spaced).
template <int Dim>
std::size_t snapshot_index(PdeRun<Dim> const &run, double t)
{
    if (run.snapshots.empty()) throw std::invalid_argument("run has no snapshots");
    double const s = (t - run.t_start) / run.snapshot_spacing;
    long const k = std::lround(s);
    if (k < 0 || static_cast<std::size_t>(k) >= run.snapshots.size() || std::abs(s - k) > 1e-6)
        throw std::invalid_argument("no snapshot at t=" + std::to_string(t));
    return static_cast<std::size_t>(k);
}

} // namespace trajent
