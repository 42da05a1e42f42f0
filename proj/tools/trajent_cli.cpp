// Command-line driver: trajent <solve|simulate|verify|slopes|hwi|all> --config PATH [--out DIR] [--seed N]

#include "trajent/harness.hpp"

#include "CLI11.hpp"

#include <iomanip>
#include <iostream>

namespace {

void print_table(trajent::harness::Verdict const &v)
{
    for (auto const &c : v.checks) {
        std::string status = c.status == "pass" ? "PASS" : c.status == "fail" ? "FAIL" : "SKIP";
        std::cout << std::left << std::setw(5) << status << ' ' << std::setw(18) << c.label << ' ' << std::setw(40)
                  << c.name << " metric=" << std::setprecision(6) << c.metric << " tol=" << c.tolerance;
        if (!c.note.empty()) std::cout << "  (" << c.note << ')';
        std::cout << '\n';
    }
    for (auto const &w : v.warnings) std::cerr << "warning: " << w << '\n';
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Entropy dissipation laboratory: PDE runs, particle ensembles and transport checks"};
    app.require_subcommand(1, 1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    for (char const *name : {"solve", "simulate", "verify", "slopes", "hwi", "all"}) {
        auto *sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (overrides the config)");
        sub->add_option("--seed", seed, "particle seed (overrides the config)");
    }
    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const &e) {
        int const code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    std::string const stage_name = app.get_subcommands().front()->get_name();

    try {
        auto cfg = trajent::harness::load_config(config_path);
        if (seed) cfg.seed = *seed;
        std::filesystem::path out = out_dir.empty() ? std::filesystem::path(cfg.output) : std::filesystem::path(out_dir);
        auto const verdict = trajent::harness::run_experiment(cfg, trajent::harness::parse_stage(stage_name), out);
        print_table(verdict);
        std::cout << (verdict.passed() ? "all checks passed" : "some checks FAILED") << " (" << (out / "verdict.json").string()
                  << ")\n";
        return verdict.exit_code();
    } catch (trajent::harness::ConfigError const &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (trajent::InputError const &e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (std::exception const &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
