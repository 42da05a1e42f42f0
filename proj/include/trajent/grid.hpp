#pragma once

// Uniform cell-centred grids on an interval (Dim = 1) or an axis-aligned
// rectangle (Dim = 2), fields on them, and the Neumann (no-flux) operators.
//
// Storage is flat with axis 0 fastest. Boundary conditions are imposed through
// mirrored ghost cells: the ghost value equals the adjacent interior value, so
// every boundary face carries a zero normal gradient and zero flux.

#include "trajent/common.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace trajent {

template <int Dim>
struct Grid {
    static_assert(Dim == 1 || Dim == 2, "grids are 1-D or 2-D");

    Point<Dim> lo{};
    Point<Dim> hi{};
    std::array<int, Dim> n{};

    Grid() = default;
    Grid(Point<Dim> lo_, Point<Dim> hi_, std::array<int, Dim> n_) : lo(lo_), hi(hi_), n(n_) { validate(); }

    static Grid interval(double lo, double hi, int n)
        requires(Dim == 1)
    {
        return Grid({lo}, {hi}, {n});
    }
    static Grid rectangle(Point<2> lo, Point<2> hi, std::array<int, 2> n)
        requires(Dim == 2)
    {
        return Grid(lo, hi, n);
    }

    void validate() const
    {
        for (int a = 0; a < Dim; ++a) {
            if (!(hi[a] > lo[a])) throw std::invalid_argument("grid extent must satisfy hi > lo");
            if (n[a] < 4) throw std::invalid_argument("grid needs at least 4 cells per axis");
        }
    }

    double width(int axis) const { return (hi[axis] - lo[axis]) / n[axis]; }
    double length(int axis) const { return hi[axis] - lo[axis]; }
    double min_width() const
    {
        double w = width(0);
        for (int a = 1; a < Dim; ++a) w = std::min(w, width(a));
        return w;
    }
    double cell_volume() const
    {
        double v = 1.0;
        for (int a = 0; a < Dim; ++a) v *= width(a);
        return v;
    }
    double volume() const
    {
        double v = 1.0;
        for (int a = 0; a < Dim; ++a) v *= length(a);
        return v;
    }
    std::size_t size() const
    {
        std::size_t s = 1;
        for (int a = 0; a < Dim; ++a) s *= static_cast<std::size_t>(n[a]);
        return s;
    }
    /// Flat-index stride of an axis.
    std::size_t stride(int axis) const { return axis == 0 ? 1 : static_cast<std::size_t>(n[0]); }

    std::array<int, Dim> unflatten(std::size_t idx) const
    {
        std::array<int, Dim> ij{};
        if constexpr (Dim == 1) {
            ij[0] = static_cast<int>(idx);
        } else {
            ij[0] = static_cast<int>(idx % static_cast<std::size_t>(n[0]));
            ij[1] = static_cast<int>(idx / static_cast<std::size_t>(n[0]));
        }
        return ij;
    }
    std::size_t flatten(std::array<int, Dim> const &ij) const
    {
        if constexpr (Dim == 1) return static_cast<std::size_t>(ij[0]);
        else return static_cast<std::size_t>(ij[0]) + static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(ij[1]);
    }
    double center(int axis, int i) const { return lo[axis] + (i + 0.5) * width(axis); }
    Point<Dim> center(std::size_t idx) const
    {
        auto const ij = unflatten(idx);
        Point<Dim> x{};
        for (int a = 0; a < Dim; ++a) x[a] = center(a, ij[a]);
        return x;
    }
    /// Position of face i (0..n) along an axis.
    double face(int axis, int i) const { return lo[axis] + i * width(axis); }

    bool contains(Point<Dim> const &x) const
    {
        for (int a = 0; a < Dim; ++a)
            if (!(x[a] >= lo[a] && x[a] <= hi[a])) return false;
        return true;
    }

    bool operator==(Grid const &) const = default;
};

template <int Dim>
struct CellField {
    Grid<Dim> grid;
    std::vector<double> values;
    double time = 0.0;

    CellField() = default;
    CellField(Grid<Dim> g, double fill = 0.0, double t = 0.0) : grid(g), values(g.size(), fill), time(t) {}
    CellField(Grid<Dim> g, std::vector<double> v, double t = 0.0) : grid(g), values(std::move(v)), time(t)
    {
        if (values.size() != grid.size()) throw std::invalid_argument("field size does not match grid");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double &operator[](std::size_t i) { return values[i]; }
    double min() const { return *std::min_element(values.begin(), values.end()); }
    double max() const { return *std::max_element(values.begin(), values.end()); }
};

/// A probability density sampled at cell centres (cell averages).
template <int Dim>
using DensityField = CellField<Dim>;

template <int Dim>
struct VectorField {
    Grid<Dim> grid;
    std::vector<Point<Dim>> values;

    VectorField() = default;
    explicit VectorField(Grid<Dim> g) : grid(g), values(g.size(), Point<Dim>{}) {}
};

/// Fill a field by sampling a function at cell centres.
template <int Dim, class F>
CellField<Dim> sample(Grid<Dim> const &grid, F &&fn, double time = 0.0)
{
    CellField<Dim> out(grid, 0.0, time);
    for (std::size_t i = 0; i < grid.size(); ++i) out.values[i] = fn(grid.center(i));
    return out;
}

// ---------------------------------------------------------------------------
// Quadrature

template <int Dim>
double integrate(Grid<Dim> const &grid, std::span<const double> samples)
{
    if (samples.size() != grid.size()) throw std::invalid_argument("sample count does not match grid");
    return pairwise_sum(samples) * grid.cell_volume();
}

template <int Dim>
double integrate(CellField<Dim> const &field)
{
    return integrate(field.grid, std::span<const double>(field.values.data(), field.values.size()));
}

template <int Dim>
double mass(CellField<Dim> const &field)
{
    return integrate(field);
}

/// Rescale a nonnegative field to unit mass.
template <int Dim>
CellField<Dim> normalized(CellField<Dim> field)
{
    double const m = integrate(field);
    if (!(m > 0.0)) throw std::invalid_argument("cannot normalise a field with nonpositive mass");
    for (double &v : field.values) v /= m;
    return field;
}

/// Invariant check for densities: nonnegative and unit mass within tol.
template <int Dim>
void check_density(CellField<Dim> const &field, double mass_tol = 1e-8)
{
    for (double v : field.values)
        if (!(v >= 0.0)) throw std::domain_error("density has negative or NaN values");
    double const m = integrate(field);
    if (std::abs(m - 1.0) > mass_tol) throw std::domain_error("density mass differs from 1 by " + std::to_string(m - 1.0));
}

// ---------------------------------------------------------------------------
// Neumann difference operators

/// Normal gradients on the faces orthogonal to `axis`, ordered face-major
/// along the axis: for every line of cells there are n[axis]+1 faces, and the
/// first and last (boundary) faces are exactly zero.
template <int Dim>
std::vector<double> face_gradients(std::vector<double> const &values, Grid<Dim> const &grid, int axis)
{
    int const na = grid.n[axis];
    std::size_t const lines = grid.size() / static_cast<std::size_t>(na);
    std::size_t const s = grid.stride(axis);
    double const inv_dx = 1.0 / grid.width(axis);
    std::vector<double> out(lines * static_cast<std::size_t>(na + 1), 0.0);
    for (std::size_t line = 0; line < lines; ++line) {
        std::size_t const base = Dim == 1 || axis == 1 ? line : line * static_cast<std::size_t>(grid.n[0]);
        for (int i = 1; i < na; ++i) {
            std::size_t const l = base + static_cast<std::size_t>(i - 1) * s;
            out[line * static_cast<std::size_t>(na + 1) + static_cast<std::size_t>(i)] =
                (values[l + s] - values[l]) * inv_dx;
        }
    }
    return out;
}

/// Base flat index of a line of cells along `axis`.
template <int Dim>
std::size_t line_base(Grid<Dim> const &grid, int axis, std::size_t line)
{
    if constexpr (Dim == 1) return line;
    else return axis == 1 ? line : line * static_cast<std::size_t>(grid.n[0]);
}

/// Cell-centred gradient: average of the two adjacent face gradients, with the
/// boundary face gradient zero (mirrored ghost cell).
template <int Dim>
VectorField<Dim> gradient_neumann(std::vector<double> const &values, Grid<Dim> const &grid)
{
    VectorField<Dim> g(grid);
    for (int a = 0; a < Dim; ++a) {
        auto const fg = face_gradients(values, grid, a);
        int const na = grid.n[a];
        std::size_t const lines = grid.size() / static_cast<std::size_t>(na);
        std::size_t const s = grid.stride(a);
        for (std::size_t line = 0; line < lines; ++line) {
            std::size_t const base = line_base(grid, a, line);
            double const *f = fg.data() + line * static_cast<std::size_t>(na + 1);
            for (int i = 0; i < na; ++i) g.values[base + static_cast<std::size_t>(i) * s][a] = 0.5 * (f[i] + f[i + 1]);
        }
    }
    return g;
}

template <int Dim>
VectorField<Dim> gradient_neumann(CellField<Dim> const &field)
{
    return gradient_neumann(field.values, field.grid);
}

/// Conservative divergence of face fluxes: (F_{i+1/2} - F_{i-1/2}) / dx summed
/// over axes. `fluxes[a]` has the layout produced by face_gradients.
template <int Dim>
std::vector<double> divergence_of_faces(std::array<std::vector<double>, Dim> const &fluxes, Grid<Dim> const &grid)
{
    std::vector<double> out(grid.size(), 0.0);
    for (int a = 0; a < Dim; ++a) {
        int const na = grid.n[a];
        std::size_t const lines = grid.size() / static_cast<std::size_t>(na);
        std::size_t const s = grid.stride(a);
        double const inv_dx = 1.0 / grid.width(a);
        for (std::size_t line = 0; line < lines; ++line) {
            std::size_t const base = line_base(grid, a, line);
            double const *f = fluxes[a].data() + line * static_cast<std::size_t>(na + 1);
            for (int i = 0; i < na; ++i) out[base + static_cast<std::size_t>(i) * s] += (f[i + 1] - f[i]) * inv_dx;
        }
    }
    return out;
}

/// Flux-difference Laplacian with mirrored ghost cells.
template <int Dim>
std::vector<double> laplacian_neumann(std::vector<double> const &values, Grid<Dim> const &grid)
{
    std::array<std::vector<double>, Dim> fluxes;
    for (int a = 0; a < Dim; ++a) fluxes[a] = face_gradients(values, grid, a);
    return divergence_of_faces<Dim>(fluxes, grid);
}

template <int Dim>
CellField<Dim> laplacian_neumann(CellField<Dim> const &field)
{
    return CellField<Dim>(field.grid, laplacian_neumann(field.values, field.grid), field.time);
}

/// div(a grad b) with face coefficients taken as arithmetic means of a.
template <int Dim>
std::vector<double> weighted_laplacian_neumann(std::vector<double> const &a, std::vector<double> const &b,
                                               Grid<Dim> const &grid)
{
    std::array<std::vector<double>, Dim> fluxes;
    for (int ax = 0; ax < Dim; ++ax) {
        fluxes[ax] = face_gradients(b, grid, ax);
        int const na = grid.n[ax];
        std::size_t const lines = grid.size() / static_cast<std::size_t>(na);
        std::size_t const s = grid.stride(ax);
        for (std::size_t line = 0; line < lines; ++line) {
            std::size_t const base = line_base(grid, ax, line);
            for (int i = 1; i < na; ++i) {
                std::size_t const l = base + static_cast<std::size_t>(i - 1) * s;
                fluxes[ax][line * static_cast<std::size_t>(na + 1) + static_cast<std::size_t>(i)] *= 0.5 * (a[l] + a[l + s]);
            }
        }
    }
    return divergence_of_faces<Dim>(fluxes, grid);
}

// ---------------------------------------------------------------------------
// Interpolation

namespace detail {

/// Lower cell index and weight of the upper neighbour for multilinear
/// interpolation between cell centres; constant in the half-cell boundary band.
template <int Dim>
inline std::pair<int, double> bracket(Grid<Dim> const &grid, int axis, double x)
{
    double const s = (x - grid.lo[axis]) / grid.width(axis) - 0.5;
    int const n = grid.n[axis];
    if (s <= 0.0) return {0, 0.0};
    if (s >= n - 1) return {n - 2, 1.0};
    int const i = static_cast<int>(s);
    return {i, s - i};
}

template <int Dim>
inline void require_inside(Grid<Dim> const &grid, PointArg<Dim> const &x)
{
    if (!grid.contains(x)) throw std::domain_error("interpolation point outside the closed domain");
}

} // namespace detail

/// Multilinear interpolation of cell-centred samples. Unchecked variant for hot
/// loops whose callers guarantee x lies in the closed domain.
template <int Dim>
double interpolate_unchecked(Grid<Dim> const &grid, double const *values, PointArg<Dim> const &x)
{
    if constexpr (Dim == 1) {
        auto const [i, w] = detail::bracket(grid, 0, x[0]);
        return (1.0 - w) * values[i] + w * values[i + 1];
    } else {
        auto const [i, wx] = detail::bracket(grid, 0, x[0]);
        auto const [j, wy] = detail::bracket(grid, 1, x[1]);
        std::size_t const n0 = static_cast<std::size_t>(grid.n[0]);
        std::size_t const k = static_cast<std::size_t>(i) + n0 * static_cast<std::size_t>(j);
        double const lower = (1.0 - wx) * values[k] + wx * values[k + 1];
        double const upper = (1.0 - wx) * values[k + n0] + wx * values[k + n0 + 1];
        return (1.0 - wy) * lower + wy * upper;
    }
}

template <int Dim>
double interpolate(CellField<Dim> const &field, PointArg<Dim> const &x)
{
    detail::require_inside(field.grid, x);
    return interpolate_unchecked(field.grid, field.values.data(), x);
}

template <int Dim>
Point<Dim> interpolate_unchecked(VectorField<Dim> const &field, PointArg<Dim> const &x)
{
    auto const &grid = field.grid;
    Point<Dim> out{};
    if constexpr (Dim == 1) {
        auto const [i, w] = detail::bracket(grid, 0, x[0]);
        out[0] = (1.0 - w) * field.values[i][0] + w * field.values[i + 1][0];
    } else {
        auto const [i, wx] = detail::bracket(grid, 0, x[0]);
        auto const [j, wy] = detail::bracket(grid, 1, x[1]);
        std::size_t const n0 = static_cast<std::size_t>(grid.n[0]);
        std::size_t const k = static_cast<std::size_t>(i) + n0 * static_cast<std::size_t>(j);
        for (int a = 0; a < 2; ++a) {
            double const lower = (1.0 - wx) * field.values[k][a] + wx * field.values[k + 1][a];
            double const upper = (1.0 - wx) * field.values[k + n0][a] + wx * field.values[k + n0 + 1][a];
            out[a] = (1.0 - wy) * lower + wy * upper;
        }
    }
    return out;
}

template <int Dim>
Point<Dim> interpolate(VectorField<Dim> const &field, PointArg<Dim> const &x)
{
    detail::require_inside(field.grid, x);
    return interpolate_unchecked(field, x);
}

// ---------------------------------------------------------------------------
// Serialization: CSV rows "x[,y],value" and a JSON document with the grid
// metadata and a flat value array. JSON is written by hand so the core headers
// stay free of third-party dependencies.

template <int Dim>
void write_csv(std::ostream &os, CellField<Dim> const &field)
{
    os << (Dim == 1 ? "x,value\n" : "x,y,value\n");
    os << std::setprecision(17);
    for (std::size_t i = 0; i < field.size(); ++i) {
        auto const c = field.grid.center(i);
        for (int a = 0; a < Dim; ++a) os << c[a] << ',';
        os << field.values[i] << '\n';
    }
}

/// Read values written by write_csv for a known grid. Rows must appear in the
/// flat order of the grid and carry matching coordinates.
template <int Dim>
CellField<Dim> read_csv(std::istream &is, Grid<Dim> const &grid, double time = 0.0)
{
    std::string line;
    if (!std::getline(is, line)) throw InputError("empty CSV");
    std::vector<double> values;
    values.reserve(grid.size());
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> cols;
        while (std::getline(ss, cell, ',')) cols.push_back(std::stod(cell));
        if (cols.size() != static_cast<std::size_t>(Dim + 1)) throw InputError("CSV row has wrong column count");
        auto const c = grid.center(values.size());
        for (int a = 0; a < Dim; ++a)
            if (std::abs(cols[a] - c[a]) > 1e-9 * (1.0 + std::abs(c[a])))
                throw InputError("CSV coordinates do not match the grid");
        values.push_back(cols[Dim]);
        if (values.size() > grid.size()) throw InputError("CSV has more rows than grid cells");
    }
    if (values.size() != grid.size()) throw InputError("CSV has fewer rows than grid cells");
    return CellField<Dim>(grid, std::move(values), time);
}

template <int Dim>
void write_json(std::ostream &os, CellField<Dim> const &field)
{
    auto const &g = field.grid;
    os << std::setprecision(17) << "{\"dim\":" << Dim << ",\"extent\":[";
    for (int a = 0; a < Dim; ++a) os << (a ? "," : "") << '[' << g.lo[a] << ',' << g.hi[a] << ']';
    os << "],\"n_cells\":[";
    for (int a = 0; a < Dim; ++a) os << (a ? "," : "") << g.n[a];
    os << "],\"time\":" << field.time << ",\"values\":[";
    for (std::size_t i = 0; i < field.size(); ++i) os << (i ? "," : "") << field.values[i];
    os << "]}\n";
}

} // namespace trajent
