// stclab: batch front end for the stochastic transport controllability lab.
//
// Subcommands: geometry, simulate, backward, duality-check, carleman-check,
// observability, hum, negative {mean|peng|localized}. Each writes
// summary.json and CSV detail files into the output directory.
//
// Exit codes: 0 ok, 2 precondition violation, 3 numerical breakdown,
// 64 usage error, 65 malformed configuration.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "stclab/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPrecondition = 2;
constexpr int kExitBreakdown = 3;
constexpr int kExitUsage = 64;
constexpr int kExitConfig = 65;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string seed;
    std::string depths;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "configuration file ([section] key = value)");
    cmd->add_option("--out", args.out_dir, "output directory (overrides [output] dir)");
    cmd->add_option("--seed", args.seed, "seed (overrides [run] seed)");
}

stclab::RunConfig resolve(const CommonArgs& args) {
    stclab::RunConfig cfg;
    if (!args.config_path.empty()) cfg = stclab::load_config(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (!args.seed.empty())
        cfg.seed = static_cast<std::uint64_t>(
            stclab::detail::parse_int(args.seed, "run.seed"));
    if (!args.depths.empty()) cfg.depths = stclab::parse_depth_list(args.depths);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stclab: stochastic transport controllability laboratory"};
    app.require_subcommand(1);

    CommonArgs geometry_args, simulate_args, backward_args, duality_args, carleman_args,
        observability_args, hum_args, negative_args;
    std::string negative_mode;
    std::string localized_mode;

    add_common(app.add_subcommand("geometry", "build and export the spatial geometry"),
               geometry_args);
    add_common(app.add_subcommand("simulate", "forward solve with the configured data"),
               simulate_args);
    add_common(app.add_subcommand("backward", "backward solve from a terminal datum"),
               backward_args);
    add_common(app.add_subcommand("duality-check", "exact discrete duality on random instances"),
               duality_args);
    add_common(app.add_subcommand("carleman-check", "Carleman estimate defect on random data"),
               carleman_args);
    add_common(app.add_subcommand("observability", "smallest Gramian eigenvalue"),
               observability_args);
    add_common(app.add_subcommand("hum", "synthesize exact controls by duality"), hum_args);
    CLI::App* neg = app.add_subcommand("negative", "non-controllability demonstrations");
    neg->add_option("mode", negative_mode, "mean | peng | localized")->required();
    add_common(neg, negative_args);
    neg->add_option("--depths", negative_args.depths, "comma-separated tree depths");
    neg->add_option("--mode-localized", localized_mode, "v_off_g0 | drift_only | both");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        using namespace stclab::experiments;
        if (app.got_subcommand("geometry")) return run_geometry(resolve(geometry_args));
        if (app.got_subcommand("simulate")) return run_simulate(resolve(simulate_args));
        if (app.got_subcommand("backward")) return run_backward(resolve(backward_args));
        if (app.got_subcommand("duality-check")) return run_duality_check(resolve(duality_args));
        if (app.got_subcommand("carleman-check")) return run_carleman_check(resolve(carleman_args));
        if (app.got_subcommand("observability"))
            return run_observability(resolve(observability_args));
        if (app.got_subcommand("hum")) return run_hum(resolve(hum_args));
        if (app.got_subcommand("negative")) {
            stclab::RunConfig cfg = resolve(negative_args);
            if (!localized_mode.empty()) cfg.localized_mode = localized_mode;
            return run_negative(cfg, negative_mode);
        }
        std::fprintf(stderr, "stclab: no command selected\n");
        return kExitUsage;
    } catch (const stclab::ConfigParseError& e) {
        std::fprintf(stderr, "stclab: %s\n", e.what());
        return kExitConfig;
    } catch (const stclab::NumericalBreakdown& e) {
        std::fprintf(stderr, "stclab: numerical breakdown: %s\n", e.what());
        return kExitBreakdown;
    } catch (const stclab::ConfigError& e) {
        std::fprintf(stderr, "stclab: %s\n", e.what());
        return kExitPrecondition;
    } catch (const stclab::ShapeError& e) {
        std::fprintf(stderr, "stclab: %s\n", e.what());
        return kExitPrecondition;
    } catch (const stclab::ResourceLimitError& e) {
        std::fprintf(stderr, "stclab: %s\n", e.what());
        return kExitPrecondition;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stclab: unexpected error: %s\n", e.what());
        return kExitBreakdown;
    }
}
