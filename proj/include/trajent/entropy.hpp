#pragma once

// Entropy functional, dissipation functional and the pointwise dissipation
// functions D and D^beta, all evaluated with the same Neumann operators the
// solver uses.

#include "trajent/pde.hpp"

#include <optional>
#include <ostream>
#include <vector>

namespace trajent {

template <int Dim>
double entropy_functional(CellField<Dim> const &p, Nonlinearity const &nl)
{
    std::vector<double> phi(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) phi[i] = nl.Phi(p.values[i]);
    return integrate(p.grid, std::span<const double>(phi));
}

/// grad h(p) = Phi''(p) grad p per cell (chain rule on the Neumann gradient).
template <int Dim>
VectorField<Dim> grad_h(CellField<Dim> const &p, Nonlinearity const &nl)
{
    auto g = gradient_neumann(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
        double const c = nl.Phi_curvature(p.values[i]);
        for (int a = 0; a < Dim; ++a) g.values[i][a] *= c;
    }
    return g;
}

/// I(p) = int |Phi''(p) grad p|^2 p dx.
template <int Dim>
double dissipation_functional(CellField<Dim> const &p, Nonlinearity const &nl)
{
    auto const g = grad_h(p, nl);
    std::vector<double> integrand(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) integrand[i] = dot<Dim>(g.values[i], g.values[i]) * p.values[i];
    return integrate(p.grid, std::span<const double>(integrand));
}

/// int <grad h(p), grad beta> p dx, the cross term of the perturbed identity.
template <int Dim>
double cross_term(CellField<Dim> const &p, Nonlinearity const &nl, PerturbationPotential<Dim> const &beta)
{
    if (beta.identically_zero) return 0.0;
    auto const g = grad_h(p, nl);
    std::vector<double> integrand(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        integrand[i] = dot<Dim>(g.values[i], beta.gradient(p.grid.center(i))) * p.values[i];
    return integrate(p.grid, std::span<const double>(integrand));
}

/// Pressure field v = phi(p).
template <int Dim>
CellField<Dim> pressure_field(CellField<Dim> const &p, Nonlinearity const &nl)
{
    CellField<Dim> v(p.grid, 0.0, p.time);
    for (std::size_t i = 0; i < p.size(); ++i) v.values[i] = nl.pressure(p.values[i]);
    return v;
}

namespace detail {

template <int Dim>
CellField<Dim> dissipation_field_impl(CellField<Dim> const &p, Nonlinearity const &nl,
                                      PerturbationPotential<Dim> const *beta)
{
    auto const transport = pde_rhs(p, nl, beta); // div(grad f(p) + p grad beta)
    auto const v = pressure_field(p, nl);
    auto const lap_v = laplacian_neumann(v.values, p.grid);
    CellField<Dim> d(p.grid, 0.0, p.time);
    for (std::size_t i = 0; i < p.size(); ++i) {
        double const u = p.values[i];
        d.values[i] = nl.pressure_slope(u) * transport[i] + nl.f(u) / u * lap_v[i];
    }
    if (beta != nullptr && !beta->identically_zero) {
        auto const gv = gradient_neumann(v);
        for (std::size_t i = 0; i < p.size(); ++i)
            d.values[i] -= dot<Dim>(gv.values[i], beta->gradient(p.grid.center(i)));
    }
    return d;
}

} // namespace detail

/// D = phi'(p) Laplace f(p) + (f(p)/p) Laplace v.
template <int Dim>
CellField<Dim> dissipation_field(CellField<Dim> const &p, Nonlinearity const &nl)
{
    return detail::dissipation_field_impl<Dim>(p, nl, nullptr);
}

/// D^beta = phi'(p) div(grad f(p) + p grad beta) + (f(p)/p) Laplace v - <grad v, grad beta>.
template <int Dim>
CellField<Dim> perturbed_dissipation_field(CellField<Dim> const &p, Nonlinearity const &nl,
                                           PerturbationPotential<Dim> const &beta)
{
    return detail::dissipation_field_impl<Dim>(p, nl, &beta);
}

// ---------------------------------------------------------------------------

struct IdentityReport {
    std::vector<double> times;
    std::vector<double> lhs;          ///< F(p_t) - F(p_t0)
    std::vector<double> rhs;          ///< -int I - int cross
    std::vector<double> abs_residual;
    std::vector<double> rel_residual;
    std::vector<double> dissipation;  ///< I(p_t)
    std::vector<double> cross_term_series; ///< empty for unperturbed runs
    bool monotone = true;             ///< F nonincreasing (unperturbed runs)
    bool perturbed = false;

    double max_rel_residual() const
    {
        double m = 0.0;
        for (double r : rel_residual) m = std::max(m, r);
        return m;
    }
    double final_rel_residual() const { return rel_residual.empty() ? 0.0 : rel_residual.back(); }
};

/// Compare both sides of the (perturbed) entropy dissipation identity along a
/// run. Time integrals use the trapezoidal rule over the snapshots.
template <int Dim>
IdentityReport verify_identity(PdeRun<Dim> const &run)
{
    if (run.snapshots.size() < 3) throw std::invalid_argument("identity check needs at least 3 snapshots");
    auto const &nl = run.nl;
    IdentityReport rep;
    rep.perturbed = run.perturbed() && !run.beta->identically_zero;
    double const f0 = entropy_functional(run.snapshots.front(), nl);
    double integral = 0.0;
    double prev_rate = 0.0;
    double prev_f = f0;
    for (std::size_t k = 0; k < run.snapshots.size(); ++k) {
        auto const &p = run.snapshots[k];
        double const fk = entropy_functional(p, nl);
        double const ik = dissipation_functional(p, nl);
        double const ck = rep.perturbed ? cross_term(p, nl, *run.beta) : 0.0;
        double const rate = ik + ck;
        if (k > 0) integral += 0.5 * (p.time - run.snapshots[k - 1].time) * (rate + prev_rate);
        prev_rate = rate;
        rep.times.push_back(p.time);
        rep.lhs.push_back(fk - f0);
        rep.rhs.push_back(-integral);
        rep.dissipation.push_back(ik);
        if (rep.perturbed) rep.cross_term_series.push_back(ck);
        double const res = std::abs(rep.lhs.back() - rep.rhs.back());
        rep.abs_residual.push_back(res);
        double const scale = std::abs(rep.rhs.back());
        rep.rel_residual.push_back(scale > 0.0 ? res / scale : (res == 0.0 ? 0.0 : res));
        if (!rep.perturbed && k > 0 && fk > prev_f + 1e-10) rep.monotone = false;
        prev_f = fk;
    }
    return rep;
}

inline void write_csv(std::ostream &os, IdentityReport const &rep)
{
    os << std::setprecision(17) << "t,lhs,rhs,residual\n";
    for (std::size_t k = 0; k < rep.times.size(); ++k)
        os << rep.times[k] << ',' << rep.lhs[k] << ',' << rep.rhs[k] << ',' << rep.abs_residual[k] << '\n';
}

} // namespace trajent
