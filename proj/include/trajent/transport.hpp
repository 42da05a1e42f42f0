#pragma once

// Quadratic Wasserstein geometry of grid densities: W2 in 1-D through
// quantile functions, the monotone (Brenier) map, displacement interpolation,
// metric and entropy slopes along PDE runs, the HWI chain, and a
// Lagrangian check of the velocity field against the continuity equation.

#include "trajent/entropy.hpp"
#include "trajent/network_simplex.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace trajent {

/// Thrown when the perturbed steepest-descent direction has zero norm.
struct SingularDirectionError : std::domain_error {
    using std::domain_error::domain_error;
};

namespace detail {

template <int Dim>
void require_1d()
{
    if constexpr (Dim != 1) throw InputError("operation needs a 1-D density");
}

/// Piecewise-linear CDF of a piecewise-constant 1-D density and its inverse.
class QuantileFunction {
public:
    explicit QuantileFunction(DensityField<1> const &p)
        : lo_(p.grid.lo[0]), dx_(p.grid.width(0)), n_(p.grid.n[0])
    {
        cum_.resize(static_cast<std::size_t>(n_) + 1, 0.0);
        mass_.resize(static_cast<std::size_t>(n_));
        double const total = integrate(p);
        if (std::abs(total - 1.0) > 1e-6) throw InputError("density mass differs from 1");
        for (int i = 0; i < n_; ++i) {
            double const v = p.values[static_cast<std::size_t>(i)];
            if (!(v >= 0.0)) throw InputError("density has negative values");
            mass_[static_cast<std::size_t>(i)] = v * dx_ / total;
        }
        // cumulative masses by running sum; the last one is pinned to 1
        for (int i = 0; i < n_; ++i) cum_[static_cast<std::size_t>(i) + 1] = cum_[static_cast<std::size_t>(i)] + mass_[static_cast<std::size_t>(i)];
        cum_.back() = 1.0;
    }

    int size() const { return n_; }
    double face(int i) const { return lo_ + i * dx_; }
    double cum(int i) const { return cum_[static_cast<std::size_t>(i)]; }
    double mass(int i) const { return mass_[static_cast<std::size_t>(i)]; }

    double cdf(double x) const
    {
        if (x <= lo_) return 0.0;
        double const s = (x - lo_) / dx_;
        if (s >= n_) return 1.0;
        int const i = std::min(static_cast<int>(s), n_ - 1);
        return cum(i) + (s - i) * mass(i);
    }

    /// Left-continuous quantile; linear on each cell of positive mass.
    double quantile(double s) const
    {
        if (s <= 0.0) return first_support();
        if (s >= 1.0) return last_support();
        auto const it = std::lower_bound(cum_.begin() + 1, cum_.end(), s);
        int i = static_cast<int>(it - cum_.begin()) - 1;
        i = std::clamp(i, 0, n_ - 1);
        while (i > 0 && mass(i) == 0.0) --i;
        return linear_in_cell(i, s);
    }

    double linear_in_cell(int i, double s) const
    {
        double const m = mass(i);
        if (m <= 0.0) return face(i + 1);
        return face(i) + std::clamp((s - cum(i)) / m, 0.0, 1.0) * dx_;
    }

    double first_support() const
    {
        for (int i = 0; i < n_; ++i)
            if (mass(i) > 0.0) return face(i);
        return lo_;
    }
    double last_support() const
    {
        for (int i = n_ - 1; i >= 0; --i)
            if (mass(i) > 0.0) return face(i + 1);
        return lo_ + n_ * dx_;
    }

    /// Next cell with positive mass at or after i (n_ if none).
    int next_positive(int i) const
    {
        while (i < n_ && mass(i) <= 0.0) ++i;
        return i;
    }

private:
    double lo_, dx_;
    int n_;
    std::vector<double> cum_, mass_;
};

/// Walk the merged quantile breakpoints of two densities. `fn(s0, s1, a, b)`
/// receives each sub-interval together with the cells of both densities that
/// are linear on it.
template <class Fn>
void for_each_quantile_piece(QuantileFunction const &qa, QuantileFunction const &qb, Fn &&fn)
{
    int i = qa.next_positive(0), j = qb.next_positive(0);
    double s0 = 0.0;
    while (i < qa.size() && j < qb.size()) {
        double const ea = qa.cum(i + 1), eb = qb.cum(j + 1);
        double const s1 = std::min(ea, eb);
        if (s1 > s0) fn(s0, s1, i, j);
        s0 = s1;
        if (ea <= s1) i = qa.next_positive(i + 1);
        if (eb <= s1) j = qb.next_positive(j + 1);
    }
}

} // namespace detail

/// W2 between two 1-D grid densities through their quantile functions. Both
/// quantile functions are linear between merged breakpoints, so Simpson's rule
/// on each piece integrates |Q_mu - Q_nu|^2 exactly.
template <int Dim>
double w2_1d(DensityField<Dim> const &mu, DensityField<Dim> const &nu)
{
    detail::require_1d<Dim>();
    if constexpr (Dim == 1) {
        detail::QuantileFunction const qa(mu), qb(nu);
        std::vector<double> pieces;
        detail::for_each_quantile_piece(qa, qb, [&](double s0, double s1, int i, int j) {
            double const sm = 0.5 * (s0 + s1);
            double const d0 = qa.linear_in_cell(i, s0) - qb.linear_in_cell(j, s0);
            double const dm = qa.linear_in_cell(i, sm) - qb.linear_in_cell(j, sm);
            double const d1 = qa.linear_in_cell(i, s1) - qb.linear_in_cell(j, s1);
            pieces.push_back((s1 - s0) / 6.0 * (d0 * d0 + 4.0 * dm * dm + d1 * d1));
        });
        return std::sqrt(std::max(0.0, pairwise_sum(pieces)));
    } else {
        return 0.0;
    }
}

/// Discrete marginals of a grid density: cell masses at cell centres.
template <int Dim>
std::pair<std::vector<double>, std::vector<Point<Dim>>> cell_masses(DensityField<Dim> const &p)
{
    std::vector<double> w(p.size());
    std::vector<Point<Dim>> x(p.size());
    double const total = integrate(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
        w[i] = p.values[i] * p.grid.cell_volume() / total;
        x[i] = p.grid.center(i);
    }
    return {w, x};
}

/// Exact W2 between the cell-centre discretisations of two grid densities
/// (any dimension).
template <int Dim>
double w2_grid_discrete(DensityField<Dim> const &mu, DensityField<Dim> const &nu)
{
    auto const [wa, xa] = cell_masses(mu);
    auto const [wb, xb] = cell_masses(nu);
    return w2_discrete(wa, wb, squared_distance_costs<Dim>(xa, xb));
}

// ---------------------------------------------------------------------------

/// Monotone rearrangement of `source` onto `target` (1-D Brenier map).
struct TransportPlan1D {
    DensityField<1> source;
    DensityField<1> target;
    std::vector<double> map_values;   ///< map at source cell centres
    double w2 = 0.0;
    double pushforward_error = 0.0;   ///< max |C_target(T x) - C_source(x)| at the centres

    double map(double x) const
    {
        detail::QuantileFunction const qs(source), qt(target);
        return qt.quantile(qs.cdf(x));
    }
};

inline TransportPlan1D make_transport_plan(DensityField<1> const &source, DensityField<1> const &target)
{
    TransportPlan1D plan{source, target, {}, 0.0, 0.0};
    detail::QuantileFunction const qs(source), qt(target);
    auto const &g = source.grid;
    plan.map_values.resize(source.size());
    for (int i = 0; i < g.n[0]; ++i) {
        double const c = qs.cdf(g.center(0, i));
        double const y = qt.quantile(c);
        plan.map_values[static_cast<std::size_t>(i)] = y;
        plan.pushforward_error = std::max(plan.pushforward_error, std::abs(qt.cdf(y) - c));
    }
    for (std::size_t i = 1; i < plan.map_values.size(); ++i)
        if (plan.map_values[i] < plan.map_values[i - 1])
            throw ContractViolation("transport map is not monotone");
    if (plan.pushforward_error > 1e-6) throw ContractViolation("transport map does not push source onto target");
    plan.w2 = w2_1d(source, target);
    return plan;
}

/// Displacement interpolant at time t: the law with quantile function
/// (1-t) Q_source + t Q_target, as exact cell masses on `out_grid` (default:
/// the source grid moved linearly toward the target grid).
inline DensityField<1> displacement_interpolation(TransportPlan1D const &plan, double t,
                                                  std::optional<Grid<1>> out_grid = std::nullopt)
{
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("interpolation time must lie in [0, 1]");
    auto const &g0 = plan.source.grid, &g1 = plan.target.grid;
    Grid<1> const g = out_grid ? *out_grid
                               : Grid<1>::interval((1.0 - t) * g0.lo[0] + t * g1.lo[0],
                                                   (1.0 - t) * g0.hi[0] + t * g1.hi[0], g0.n[0]);
    detail::QuantileFunction const qa(plan.source), qb(plan.target);
    // knots of the interpolated quantile function: (s, Q_t(s)) with both
    // one-sided values at jumps
    std::vector<double> ks, kx;
    auto push = [&](double s, double x) {
        ks.push_back(s);
        kx.push_back(x);
    };
    detail::for_each_quantile_piece(qa, qb, [&](double s0, double s1, int i, int j) {
        push(s0, (1.0 - t) * qa.linear_in_cell(i, s0) + t * qb.linear_in_cell(j, s0));
        push(s1, (1.0 - t) * qa.linear_in_cell(i, s1) + t * qb.linear_in_cell(j, s1));
    });
    auto cdf = [&](double x) {
        if (x <= kx.front()) return 0.0;
        if (x >= kx.back()) return 1.0;
        auto const it = std::upper_bound(kx.begin(), kx.end(), x);
        std::size_t const k = static_cast<std::size_t>(it - kx.begin());
        double const xa = kx[k - 1], xb = kx[k];
        if (xb <= xa) return ks[k];
        return ks[k - 1] + (x - xa) / (xb - xa) * (ks[k] - ks[k - 1]);
    };
    DensityField<1> out(g, 0.0, t);
    double const dx = g.width(0);
    double prev = cdf(g.face(0, 0));
    for (int i = 0; i < g.n[0]; ++i) {
        double const next = i + 1 == g.n[0] ? cdf(g.hi[0]) : cdf(g.face(0, i + 1));
        double m = next - prev;
        if (i == 0) m += prev;                 // mass left of the output grid
        if (i + 1 == g.n[0]) m += 1.0 - next;  // mass right of it
        out.values[static_cast<std::size_t>(i)] = m / dx;
        prev = next;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Slopes

struct SlopeReport {
    double t0 = 0.0;
    double analytic_slope = 0.0;              ///< ||grad h(p) + grad beta||_{L2(p)}
    std::vector<double> spacings;             ///< t - t0
    std::vector<double> finite_difference_slopes;
    bool converging = true;                   ///< |fd - analytic| nonincreasing as spacing shrinks
    double entropy_slope_unperturbed = 0.0;   ///< -sqrt(I(p_t0))
    std::vector<std::string> perturbation_labels;
    std::vector<double> entropy_slope_perturbed;
    std::vector<double> entropy_ratio_spacings;
    std::vector<double> entropy_ratio_unperturbed; ///< dF / dW2 along the unperturbed run
};

/// L2(p) norm of grad h(p) + grad beta.
template <int Dim>
double velocity_norm(DensityField<Dim> const &p, Nonlinearity const &nl, PerturbationPotential<Dim> const *beta)
{
    auto const g = grad_h(p, nl);
    std::vector<double> integrand(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        Point<Dim> w = g.values[i];
        if (beta != nullptr && !beta->identically_zero) {
            auto const gb = beta->gradient(p.grid.center(i));
            for (int a = 0; a < Dim; ++a) w[a] += gb[a];
        }
        integrand[i] = dot<Dim>(w, w) * p.values[i];
    }
    return std::sqrt(integrate(p.grid, std::span<const double>(integrand)));
}

namespace detail {

template <int Dim>
std::size_t exact_snapshot(PdeRun<Dim> const &run, double t)
{
    for (std::size_t k = 0; k < run.snapshots.size(); ++k)
        if (std::abs(run.snapshots[k].time - t) <= 1e-9 * std::max(1.0, std::abs(t))) return k;
    throw InputError("run has no snapshot at t = " + std::to_string(t));
}

} // namespace detail

/// Metric slope of the curve t -> p_t in W2 at t0, analytic and by finite
/// differences W2(p_t, p_t0) / (t - t0) for the requested spacings. The run's
/// own perturbation, if any, enters the analytic slope.
template <int Dim>
SlopeReport curve_metric_slope(PdeRun<Dim> const &run, double t0, std::vector<double> spacings)
{
    detail::require_1d<Dim>();
    if (spacings.empty()) throw InputError("need at least one spacing");
    if (run.snapshots.size() < 2) throw InputError("too few snapshots for a slope");
    std::sort(spacings.begin(), spacings.end(), std::greater<>());
    SlopeReport rep;
    rep.t0 = t0;
    auto const &p0 = run.snapshots[detail::exact_snapshot(run, t0)];
    PerturbationPotential<Dim> const *beta = run.perturbed() ? &*run.beta : nullptr;
    rep.analytic_slope = velocity_norm(p0, run.nl, beta);
    double prev_err = std::numeric_limits<double>::infinity();
    for (double h : spacings) {
        if (!(h > 0.0)) throw InputError("spacings must be positive");
        auto const &p = run.snapshots[detail::exact_snapshot(run, t0 + h)];
        double const s = w2_1d(p, p0) / h;
        rep.spacings.push_back(h);
        rep.finite_difference_slopes.push_back(s);
        double const err = std::abs(s - rep.analytic_slope);
        if (err > prev_err + 1e-12) rep.converging = false;
        prev_err = err;
    }
    return rep;
}

/// Slope of the entropy along the direction grad h + grad beta:
/// -<grad h, (grad h + grad beta) / ||grad h + grad beta||>_{L2(p)}.
template <int Dim>
double perturbed_entropy_slope(DensityField<Dim> const &p, Nonlinearity const &nl,
                               PerturbationPotential<Dim> const &beta)
{
    auto const g = grad_h(p, nl);
    std::vector<double> num(p.size()), den(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        Point<Dim> w = g.values[i];
        auto const gb = beta.gradient(p.grid.center(i));
        for (int a = 0; a < Dim; ++a) w[a] += gb[a];
        num[i] = dot<Dim>(g.values[i], w) * p.values[i];
        den[i] = dot<Dim>(w, w) * p.values[i];
    }
    double const norm = std::sqrt(integrate(p.grid, std::span<const double>(den)));
    double const scale = std::sqrt(dissipation_functional(p, nl));
    if (!(norm > 1e-12 * std::max(1.0, scale)))
        throw SingularDirectionError("grad h + grad beta vanishes; the perturbed slope is undefined");
    return -integrate(p.grid, std::span<const double>(num)) / norm;
}

/// Entropy slopes at p_t0: -sqrt(I) for the unperturbed flow and the
/// directional slope for each perturbation. When `run` is given, also the
/// finite-difference ratio dF / dW2 along it at the requested spacings.
template <int Dim>
SlopeReport entropy_slope_comparison(DensityField<Dim> const &p_t0, Nonlinearity const &nl,
                                     std::vector<PerturbationPotential<Dim>> const &betas,
                                     PdeRun<Dim> const *run = nullptr, std::vector<double> spacings = {})
{
    SlopeReport rep;
    rep.t0 = p_t0.time;
    rep.entropy_slope_unperturbed = -std::sqrt(dissipation_functional(p_t0, nl));
    rep.analytic_slope = std::sqrt(dissipation_functional(p_t0, nl));
    for (auto const &b : betas) {
        rep.perturbation_labels.push_back(b.label);
        rep.entropy_slope_perturbed.push_back(perturbed_entropy_slope(p_t0, nl, b));
    }
    if (run != nullptr) {
        detail::require_1d<Dim>();
        auto const &p0 = run->snapshots[detail::exact_snapshot(*run, p_t0.time)];
        double const f0 = entropy_functional(p0, nl);
        for (double h : spacings) {
            auto const &p = run->snapshots[detail::exact_snapshot(*run, p_t0.time + h)];
            rep.entropy_ratio_spacings.push_back(h);
            rep.entropy_ratio_unperturbed.push_back((entropy_functional(p, nl) - f0) / w2_1d(p, p0));
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// HWI

struct HwiResult {
    double lhs = 0.0;   ///< F(rho0) - F(rho1)
    double mid = 0.0;   ///< -int <grad f(rho0), T(z) - z> dz
    double rhs = 0.0;   ///< sqrt(I(rho0)) W2(rho0, rho1)
    double tol = 0.0;
    bool holds = false;
    double boundary_mismatch = 0.0;
    std::vector<std::string> warnings;
};

inline HwiResult hwi_check(DensityField<1> const &rho0, DensityField<1> const &rho1, Nonlinearity const &nl)
{
    if (!(rho0.grid == rho1.grid)) throw InputError("HWI densities must share a grid");
    if (rho0.min() <= 0.0 || rho1.min() <= 0.0) throw InputError("HWI densities must be strictly positive");
    HwiResult r;
    auto const &g = rho0.grid;
    std::size_t const n = rho0.size();
    r.boundary_mismatch = std::max(std::abs(rho0.values.front() - rho1.values.front()),
                                   std::abs(rho0.values.back() - rho1.values.back()));
    if (r.boundary_mismatch > 1e-6)
        r.warnings.push_back("boundary values differ by " + std::to_string(r.boundary_mismatch) +
                             "; the equal-boundary assumption is violated");
    auto const plan = make_transport_plan(rho0, rho1);
    std::vector<double> fv(n);
    for (std::size_t i = 0; i < n; ++i) fv[i] = nl.f(rho0.values[i]);
    auto const gf = gradient_neumann(fv, g);
    std::vector<double> integrand(n);
    for (std::size_t i = 0; i < n; ++i)
        integrand[i] = gf.values[i][0] * (plan.map_values[i] - g.center(0, static_cast<int>(i)));
    r.lhs = entropy_functional(rho0, nl) - entropy_functional(rho1, nl);
    r.mid = -integrate(g, std::span<const double>(integrand));
    r.rhs = std::sqrt(dissipation_functional(rho0, nl)) * plan.w2;
    r.tol = 1e-3 * (1.0 + std::abs(r.rhs));
    r.holds = r.lhs <= r.mid + r.tol && r.mid <= r.rhs + r.tol;
    return r;
}

namespace detail {

/// Average of cos(k pi (x - lo)/L) over cell i.
inline double cosine_cell_average(Grid<1> const &grid, int i, int k)
{
    double const w = k * std::numbers::pi / grid.length(0);
    double const a = grid.face(0, i) - grid.lo[0], b = a + grid.width(0);
    return (std::sin(w * b) - std::sin(w * a)) / (w * grid.width(0));
}

} // namespace detail

/// Smooth positive density (1 + sum_k a_k cos(k pi (x - lo)/L)) / L on
/// `grid`, stored as exact cell averages so the mass is 1 to rounding.
inline DensityField<1> cosine_series_density(Grid<1> const &grid, std::vector<double> const &coeffs)
{
    DensityField<1> p(grid, 0.0, 0.0);
    for (int i = 0; i < grid.n[0]; ++i) {
        double v = 1.0;
        for (std::size_t k = 0; k < coeffs.size(); ++k)
            v += coeffs[k] * detail::cosine_cell_average(grid, i, static_cast<int>(k) + 1);
        p.values[static_cast<std::size_t>(i)] = v / grid.length(0);
    }
    return p;
}

/// Seeded pair of cosine-series densities with equal values in both boundary
/// cells; the first two coefficients of the second density are solved for.
inline std::pair<DensityField<1>, DensityField<1>> random_matched_pair(Grid<1> const &grid, std::uint64_t seed,
                                                                       int n_modes = 4)
{
    if (n_modes < 2) throw InputError("need at least two modes");
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> coef(-0.25, 0.25);
    int const last = grid.n[0] - 1;
    auto edge = [&](int i, int k) { return detail::cosine_cell_average(grid, i, k); };
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<double> a(static_cast<std::size_t>(n_modes)), b(static_cast<std::size_t>(n_modes));
        for (auto &x : a) x = coef(gen);
        for (auto &x : b) x = coef(gen);
        double rl = 0.0, rr = 0.0;
        for (int k = 1; k <= n_modes; ++k) {
            double const ak = a[static_cast<std::size_t>(k) - 1];
            rl += ak * edge(0, k);
            rr += ak * edge(last, k);
            if (k > 2) {
                double const bk = b[static_cast<std::size_t>(k) - 1];
                rl -= bk * edge(0, k);
                rr -= bk * edge(last, k);
            }
        }
        // [L1 L2; R1 R2] (b1, b2) = (rl, rr)
        double const l1 = edge(0, 1), l2 = edge(0, 2), r1 = edge(last, 1), r2 = edge(last, 2);
        double const det = l1 * r2 - l2 * r1;
        b[0] = (rl * r2 - l2 * rr) / det;
        b[1] = (l1 * rr - rl * r1) / det;
        auto p0 = cosine_series_density(grid, a), p1 = cosine_series_density(grid, b);
        if (p0.min() > 0.2 / grid.length(0) && p1.min() > 0.2 / grid.length(0)) return {p0, p1};
    }
    throw std::runtime_error("could not draw a positive density pair");
}

// ---------------------------------------------------------------------------
// Velocity field and flow map

struct FlowCheck {
    double t0 = 0.0, t1 = 0.0;
    double l1_error = 0.0;
    std::size_t substeps = 0;
    std::size_t clamped = 0;        ///< seeds pushed back inside the domain
    std::vector<std::string> warnings;
};

/// Velocity u = -grad(beta + h(p)) of a snapshot, per cell.
template <int Dim>
VectorField<Dim> velocity_field(DensityField<Dim> const &p, Nonlinearity const &nl,
                                PerturbationPotential<Dim> const *beta)
{
    auto u = grad_h(p, nl);
    for (std::size_t i = 0; i < p.size(); ++i) {
        Point<Dim> gb{};
        if (beta != nullptr && !beta->identically_zero) gb = beta->gradient(p.grid.center(i));
        for (int a = 0; a < Dim; ++a) u.values[i][a] = -(u.values[i][a] + gb[a]);
    }
    return u;
}

/// Transport cell-centre seeds of p_t0 along the velocity field (explicit
/// Euler, one step per snapshot interval), deposit their masses by
/// cloud-in-cell and compare with p_t1 in L1.
template <int Dim>
FlowCheck velocity_and_flow_check(PdeRun<Dim> const &run, double t0, double t1)
{
    if (!(t1 > t0)) throw InputError("flow check needs t0 < t1");
    std::size_t const k0 = detail::exact_snapshot(run, t0), k1 = detail::exact_snapshot(run, t1);
    auto const &grid = run.grid;
    PerturbationPotential<Dim> const *beta = run.perturbed() ? &*run.beta : nullptr;
    FlowCheck out;
    out.t0 = t0;
    out.t1 = t1;
    std::size_t const n = grid.size();
    std::vector<Point<Dim>> x(n);
    std::vector<double> m(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = grid.center(i);
        m[i] = run.snapshots[k0].values[i] * grid.cell_volume();
    }
    for (std::size_t k = k0; k < k1; ++k) {
        auto const u = velocity_field(run.snapshots[k], run.nl, beta);
        double const h = run.snapshots[k + 1].time - run.snapshots[k].time;
        for (std::size_t i = 0; i < n; ++i) {
            auto const v = interpolate_unchecked(u, x[i]);
            for (int a = 0; a < Dim; ++a) {
                x[i][a] += h * v[a];
                if (x[i][a] < grid.lo[a] || x[i][a] > grid.hi[a]) {
                    x[i][a] = std::clamp(x[i][a], grid.lo[a], grid.hi[a]);
                    ++out.clamped;
                }
            }
        }
        ++out.substeps;
    }
    if (out.clamped > 0) out.warnings.push_back("flow left the domain; " + std::to_string(out.clamped) + " positions clamped");

    // cloud-in-cell deposit with mirrored weights at the walls
    CellField<Dim> rho(grid, 0.0, t1);
    for (std::size_t i = 0; i < n; ++i) {
        std::array<std::array<int, 2>, Dim> idx;
        std::array<std::array<double, 2>, Dim> w;
        for (int a = 0; a < Dim; ++a) {
            double const s = (x[i][a] - grid.lo[a]) / grid.width(a) - 0.5;
            int const j = static_cast<int>(std::floor(s));
            double const f = s - j;
            idx[a] = {std::clamp(j, 0, grid.n[a] - 1), std::clamp(j + 1, 0, grid.n[a] - 1)};
            w[a] = {1.0 - f, f};
        }
        if constexpr (Dim == 1) {
            for (int p = 0; p < 2; ++p) rho.values[static_cast<std::size_t>(idx[0][p])] += m[i] * w[0][p];
        } else {
            for (int q = 0; q < 2; ++q)
                for (int p = 0; p < 2; ++p) rho.values[grid.flatten({idx[0][p], idx[1][q]})] += m[i] * w[0][p] * w[1][q];
        }
    }
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i)
        diff[i] = std::abs(rho.values[i] / grid.cell_volume() - run.snapshots[k1].values[i]);
    out.l1_error = integrate(grid, std::span<const double>(diff));
    return out;
}

} // namespace trajent
