#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace trajent {

template <int Dim>
using Point = std::array<double, Dim>;

/// Non-deduced spelling for parameters whose Dim comes from another argument.
template <int Dim>
using PointArg = std::type_identity_t<Point<Dim>>;

// Error taxonomy. Domain errors (bad argument ranges) reuse std::domain_error.
struct IntegrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StepSizeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BoundsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

/// Pairwise (cascade) summation. The result depends only on the order of the
/// input, never on how callers partition work.
inline double pairwise_sum(std::span<const double> xs)
{
    constexpr std::size_t leaf = 32;
    if (xs.size() <= leaf) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    std::size_t const half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double pairwise_sum(std::vector<double> const &xs)
{
    return pairwise_sum(std::span<const double>(xs.data(), xs.size()));
}

inline double mean(std::vector<double> const &xs)
{
    if (xs.empty()) return 0.0;
    return pairwise_sum(xs) / static_cast<double>(xs.size());
}

/// Standard error of the mean (unbiased sample variance).
inline double standard_error(std::vector<double> const &xs)
{
    std::size_t const n = xs.size();
    if (n < 2) return 0.0;
    double const mu = mean(xs);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (xs[i] - mu) * (xs[i] - mu);
    return std::sqrt(pairwise_sum(sq) / static_cast<double>(n - 1) / static_cast<double>(n));
}

template <int Dim>
double dot(Point<Dim> const &a, Point<Dim> const &b)
{
    double s = 0.0;
    for (int k = 0; k < Dim; ++k) s += a[k] * b[k];
    return s;
}

} // namespace trajent
