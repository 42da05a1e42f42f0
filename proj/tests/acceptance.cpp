// Acceptance run on the benchmark: cosine initial density on [0, 1], m = 2,
// 200 cells, t_end = 0.1, 10^4 particles at dt = 1e-4, beta = 0.1 cos(pi x),
// seed 42. Prints one PASS/FAIL line per criterion; exit status 1 on any FAIL.

#include "trajent/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <numbers>
#include <string>

using namespace trajent;
using namespace trajent::harness;

namespace {

char const *const kBenchmark = R"({
  "nonlinearity": {"kind": "porous_medium", "m": 2.0},
  "grid": {"dim": 1, "extent": [[0.0, 1.0]], "n_cells": [200]},
  "initial": {"kind": "cosine", "amplitude": 0.5},
  "t_end": 0.1,
  "dt": "cfl",
  "snapshot_spacing": 1e-4,
  "particles": {"count": 10000, "dt": 1e-4, "seed": 42, "refinement_paths": 1000},
  "perturbation": {"kind": "cosine", "k": 1, "amplitude": 0.1},
  "slopes": {"t0": 0.0, "spacing": 1e-4},
  "hwi": {"random_pairs": 20, "seed": 7}
})";

int failures = 0;

void report(int id, char const *what, bool ok, std::string const &detail)
{
    std::printf("%s criterion %2d %-34s %s\n", ok ? "PASS" : "FAIL", id, what, detail.c_str());
    if (!ok) ++failures;
}

/// Criterion passes when every named check is present and passed.
void from_checks(Verdict const &v, int id, char const *what, std::initializer_list<char const *> names,
                 bool prefix = false)
{
    bool ok = true;
    std::string detail;
    for (char const *n : names) {
        std::string const name(n);
        bool found = false;
        for (auto const &c : v.checks) {
            bool const match = prefix ? c.name.rfind(name, 0) == 0 : c.name == name;
            if (!match) continue;
            found = true;
            ok = ok && c.status == "pass";
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s=%.3g(tol %.3g)%s ", c.name.c_str(), c.metric, c.tolerance,
                          c.status == "pass" ? "" : c.status == "fail" ? "!" : "?");
            detail += buf;
        }
        if (!found) {
            ok = false;
            detail += name + "=missing ";
        }
    }
    report(id, what, ok, detail);
}

} // namespace

int main()
{
    try {
        auto const cfg = parse_config(kBenchmark);
        auto const out = std::filesystem::temp_directory_path() / "trajent_acceptance";
        auto const v = run_experiment(cfg, Stage::all, out);

        from_checks(v, 1, "mass conservation", {"mass_conservation", "mass_conservation_perturbed"});
        from_checks(v, 2, "entropy identity", {"entropy_identity"});

        {
            auto const g = Grid<1>::interval(0.0, 1.0, 200);
            auto const p0 = sample(g, [](Point<1> const &x) { return 1.0 + 0.5 * std::cos(std::numbers::pi * x[0]); });
            auto const nl = Nonlinearity::porous_medium(2.0);
            double const f = entropy_functional(p0, nl), i = dissipation_functional(p0, nl);
            double const i_ref = std::numbers::pi * std::numbers::pi / 2.0;
            bool const ok = std::abs(f + 0.875) <= 1e-3 && std::abs(i / i_ref - 1.0) <= 0.01;
            char buf[160];
            std::snprintf(buf, sizeof buf, "F=%.6f(-0.875 +- 1e-3) I=%.6f(%.6f +- 1%%)", f, i, i_ref);
            report(3, "functionals of the initial density", ok, buf);
        }

        from_checks(v, 4, "trajectory decomposition",
                    {"martingale_mean_zero", "finite_variation_mean", "decomposition_refinement"});
        from_checks(v, 5, "marginal law", {"marginal_law"});
        from_checks(v, 6, "conditional rate", {"conditional_rate_slope_", "conditional_rate_intercept_"}, true);
        from_checks(v, 7, "perturbed entropy identity", {"perturbed_entropy_identity", "zero_perturbation_bit_identity"});
        from_checks(v, 8, "metric slopes", {"metric_slope", "perturbed_metric_slope", "w2_exact_oracle"});
        from_checks(v, 9, "gradient flow slopes",
                    {"entropy_slope_identity", "slope_inequality", "slope_equality_collinear"});
        from_checks(v, 10, "HWI chain and geodesic", {"hwi_chain", "displacement_geodesic"});
    } catch (std::exception const &e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 1;
    }
    return failures == 0 ? 0 : 1;
}
