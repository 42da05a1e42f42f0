#pragma once

// The nonlinearity f of the diffusion  d/dt p = Laplace f(p)  and every scalar
// function derived from it:
//
//   h(u)   = int_1^u f'(s)/s ds        Phi(u) = int_0^u h(s) ds
//   phi(u) = Phi(u)/u  (pressure)      sigma(u) = sqrt(2 f(u)/u)
//
// Porous-medium and linear kinds use closed forms; custom kinds integrate
// h and Phi numerically.

#include "trajent/common.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <variant>

namespace trajent {

class Nonlinearity {
public:
    struct PorousMedium {
        double m;
    };
    struct Linear {};
    struct Custom {
        std::function<double(double)> f;
        std::function<double(double)> df;
    };
    using Kind = std::variant<PorousMedium, Linear, Custom>;

    static Nonlinearity porous_medium(double m)
    {
        if (!(m > 1.0)) throw std::domain_error("porous medium exponent must exceed 1");
        return Nonlinearity(PorousMedium{m}, 0.0);
    }
    static Nonlinearity linear() { return Nonlinearity(Linear{}, 0.0); }
    static Nonlinearity custom(std::function<double(double)> f, std::function<double(double)> df,
                               double quadrature_tol = 1e-10)
    {
        if (!f || !df) throw std::invalid_argument("custom nonlinearity needs f and f'");
        return Nonlinearity(Custom{std::move(f), std::move(df)}, quadrature_tol);
    }

    Kind const &kind() const noexcept { return kind_; }
    double quadrature_tol() const noexcept { return quadrature_tol_; }
    bool has_closed_form() const noexcept { return !std::holds_alternative<Custom>(kind_); }

    std::string describe() const
    {
        std::ostringstream os;
        std::visit(
            [&](auto const &k) {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, PorousMedium>) os << "porous_medium(m=" << k.m << ")";
                else if constexpr (std::is_same_v<K, Linear>) os << "linear";
                else os << "custom";
            },
            kind_);
        return os.str();
    }

    double f(double u) const
    {
        return std::visit(
            [u](auto const &k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, PorousMedium>) return std::pow(u, k.m);
                else if constexpr (std::is_same_v<K, Linear>) return u;
                else return k.f(u);
            },
            kind_);
    }

    double df(double u) const
    {
        return std::visit(
            [u](auto const &k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, PorousMedium>) return k.m * std::pow(u, k.m - 1.0);
                else if constexpr (std::is_same_v<K, Linear>) return 1.0;
                else return k.df(u);
            },
            kind_);
    }

    double h(double u) const
    {
        require_positive(u, "h");
        return std::visit(
            [&](auto const &k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, PorousMedium>)
                    return k.m / (k.m - 1.0) * (std::pow(u, k.m - 1.0) - 1.0);
                else if constexpr (std::is_same_v<K, Linear>) return std::log(u);
                else { // s = e^{t log u} removes the 1/s factor
                    double const lu = std::log(u);
                    return integrate([&k, lu](double t) { return lu * k.df(std::exp(lu * t)); }, 0.0, 1.0, "h");
                }
            },
            kind_);
    }

    double Phi(double u) const
    {
        if (u < 0.0 || std::isnan(u)) throw std::domain_error("Phi requires u >= 0");
        if (u == 0.0) return 0.0;
        return std::visit(
            [&](auto const &k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, PorousMedium>)
                    return std::pow(u, k.m) / (k.m - 1.0) - k.m * u / (k.m - 1.0);
                else if constexpr (std::is_same_v<K, Linear>) return u * std::log(u) - u;
                else return integrate_endpoint_singular([this](double s) { return h(s); }, u, "Phi");
            },
            kind_);
    }

    /// phi(u) = Phi(u)/u, the pressure.
    double pressure(double u) const
    {
        require_positive(u, "pressure");
        return std::visit(
            [&](auto const &k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, PorousMedium>)
                    return (std::pow(u, k.m - 1.0) - k.m) / (k.m - 1.0);
                else if constexpr (std::is_same_v<K, Linear>) return std::log(u) - 1.0;
                else return h(u) - k.f(u) / u;
            },
            kind_);
    }

    /// phi'(u) = f(u)/u^2.
    double pressure_slope(double u) const
    {
        require_positive(u, "pressure_slope");
        return f(u) / (u * u);
    }

    /// phi''(u) = f'(u)/u^2 - 2 f(u)/u^3.
    double pressure_curvature(double u) const
    {
        require_positive(u, "pressure_curvature");
        return df(u) / (u * u) - 2.0 * f(u) / (u * u * u);
    }

    /// Phi''(u) = h'(u) = f'(u)/u.
    double Phi_curvature(double u) const
    {
        require_positive(u, "Phi_curvature");
        return df(u) / u;
    }

    double diffusion_coeff(double u) const
    {
        require_positive(u, "diffusion_coeff");
        return std::visit(
            [&](auto const &k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, PorousMedium>)
                    return std::sqrt(2.0 * std::pow(u, k.m - 1.0));
                else if constexpr (std::is_same_v<K, Linear>) return std::sqrt(2.0);
                else return std::sqrt(2.0 * k.f(u) / u);
            },
            kind_);
    }

    /// Sampled check of the structural assumptions on [lo, hi]: f strictly
    /// increasing with f' > 0, f' nondecreasing. Throws std::domain_error on the
    /// first violation found.
    void check_assumptions(double lo, double hi, int samples = 1000) const
    {
        if (!(hi > lo) || lo < 0.0 || samples < 2) throw std::invalid_argument("bad sampling range");
        double prev_f = f(lo), prev_df = df(lo);
        for (int i = 1; i < samples; ++i) {
            double const u = lo + (hi - lo) * i / (samples - 1);
            double const fu = f(u), dfu = df(u);
            if (!(fu > prev_f)) throw std::domain_error("f is not strictly increasing at u=" + std::to_string(u));
            if (!(dfu > 0.0)) throw std::domain_error("f' is not positive at u=" + std::to_string(u));
            if (dfu < prev_df - 1e-12 * std::abs(prev_df))
                throw std::domain_error("f' is decreasing at u=" + std::to_string(u));
            prev_f = fu;
            prev_df = dfu;
        }
    }

private:
    Nonlinearity(Kind kind, double tol) : kind_(std::move(kind)), quadrature_tol_(tol) {}

    static void require_positive(double u, char const *what)
    {
        if (!(u > 0.0)) throw std::domain_error(std::string(what) + " requires u > 0");
    }

    template <class F>
    double integrate(F &&g, double a, double b, char const *what) const
    {
        if (a == b) return 0.0;
        double err = 0.0;
        double const value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
            g, a, b, 25, quadrature_tol_ * 1e-2, &err);
        if (!std::isfinite(value) || err > quadrature_tol_ * std::max(1.0, std::abs(value)))
            throw IntegrationError(std::string("quadrature for ") + what + " did not converge");
        return value;
    }

    /// int_0^b g for g with an integrable singularity at 0 (h ~ log s when
    /// f'(0) > 0), through s = b e^{-z} on [0, inf).
    template <class F>
    double integrate_endpoint_singular(F &&g, double b, char const *what) const
    {
        auto const integrand = [&](double z) {
            double const s = b * std::exp(-z);
            return s == 0.0 ? 0.0 : g(s) * s;
        };
        double err = 0.0, value = 0.0;
        try {
            value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                integrand, 0.0, std::numeric_limits<double>::infinity(), 15, quadrature_tol_ * 1e-2, &err);
        } catch (std::exception const &) {
            throw IntegrationError(std::string("quadrature for ") + what + " did not converge");
        }
        if (!std::isfinite(value) || err > quadrature_tol_ * std::max(1.0, std::abs(value)))
            throw IntegrationError(std::string("quadrature for ") + what + " did not converge");
        return value;
    }

    Kind kind_;
    double quadrature_tol_;
};

} // namespace trajent
