// Batch experiment runners behind the CLI subcommands. Each runner builds
// its objects from the resolved RunConfig, writes summary.json plus CSV
// detail files into the output directory, and returns the exit code.
// Outputs carry the resolved configuration and never a timestamp, so
// identical config + seed reproduces identical bytes.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stclab/carleman.hpp"
#include "stclab/config.hpp"
#include "stclab/csv.hpp"
#include "stclab/hum.hpp"
#include "stclab/negative.hpp"

namespace stclab {

namespace experiments {

using json = nlohmann::ordered_json;

inline LevelOperatorOptions operator_options(const RunConfig& c) {
    LevelOperatorOptions opt;
    opt.forced_substeps = c.substeps;
    opt.uniform_dissipation = c.dissipation;
    return opt;
}

inline Geometry geometry_from(const RunConfig& c) {
    GeometrySpec spec;
    spec.dim = c.dim;
    spec.x_lo = c.x_lo;
    spec.x_hi = c.x_hi;
    spec.radius = c.radius;
    spec.n_cells = c.n_cells;
    spec.n_vel = c.n_vel;
    return build_geometry(spec);
}

inline CoefficientSet coefficients_from(const RunConfig& c, const Geometry& g,
                                        const ScenarioTree& tree) {
    if (c.coeff_kind == "zero") return zero_coefficients();
    if (c.coeff_kind == "constant") {
        CoefficientSet s;
        s.a1 = constant_scalar(g, tree, c.a1);
        s.a2 = constant_kernel(g, tree, c.a2);
        s.a3 = constant_scalar(g, tree, c.a3);
        return s;
    }
    if (c.coeff_kind == "random")
        return random_coefficients(g, tree, CounterRng(c.seed, "coefficients"), c.a1_bound,
                                   c.a2_bound, c.a3_bound, c.adapted);
    throw ConfigError("coefficients.kind must be zero, constant, or random");
}

inline std::vector<double> initial_from(const RunConfig& c, const Geometry& g) {
    std::vector<double> y0(static_cast<std::size_t>(g.field_dim()), 0.0);
    if (c.y0_kind == "zero") return y0;
    if (c.y0_kind == "constant") {
        std::fill(y0.begin(), y0.end(), c.y0_value);
        return y0;
    }
    if (c.y0_kind == "bump") {
        const double lo = g.dim == 1 ? g.x_lo : -g.radius;
        const double hi = g.dim == 1 ? g.x_hi : g.radius;
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        for (int cell = 0; cell < g.n_cells(); ++cell) {
            const double s = (g.cell_centers[static_cast<std::size_t>(cell)].x - mid) / half;
            const double v = std::abs(s) < 1.0 ? std::pow(1.0 - s * s, 3) * c.y0_value : 0.0;
            for (int j = 0; j < g.n_vel(); ++j)
                y0[static_cast<std::size_t>(g.field_index(cell, j))] = v;
        }
        return y0;
    }
    throw ConfigError("initial.kind must be zero, constant, or bump");
}

inline TerminalField random_terminal(const Geometry& g, const ScenarioTree& tree, CounterRng rng,
                                     bool normalize, const LevelOperators& ops) {
    TerminalField zT(tree.n_leaves() * static_cast<std::size_t>(g.field_dim()));
    for (double& v : zT) v = rng.symmetric();
    if (normalize) {
        const double n = std::sqrt(terminal_field_dot(zT, zT, ops));
        if (n > 0.0)
            for (double& v : zT) v /= n;
    }
    return zT;
}

struct ResolvedWeight {
    double lambda = 1.0;
    double c = 0.5;
    double lambda1 = 0.0;
};

inline ResolvedWeight resolve_weight(const RunConfig& cfg, const Geometry& g, double horizon,
                                     const BackwardCoefficientSet& b) {
    ResolvedWeight w;
    w.c = cfg.c_spec == "auto" ? midpoint_c(g, horizon)
                               : detail::parse_double(cfg.c_spec, "weight.c");
    w.lambda1 = lambda_one(b, w.c);
    w.lambda = cfg.lambda_spec == "auto"
                   ? std::max(w.lambda1, 1.0)
                   : detail::parse_double(cfg.lambda_spec, "weight.lambda");
    return w;
}

inline void write_summary(const std::filesystem::path& out_dir, const std::string& command,
                          const RunConfig& cfg, json body) {
    json j;
    j["command"] = command;
    for (auto& [k, v] : body.items()) j[k] = v;
    j["config"] = config_to_json(cfg);
    std::ofstream f(out_dir / "summary.json");
    if (!f) throw ConfigError("cannot write " + (out_dir / "summary.json").string());
    f << j.dump(2) << "\n";
}

inline std::filesystem::path prepare_out(const RunConfig& cfg) {
    std::filesystem::path p(cfg.out_dir);
    std::filesystem::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------

inline int run_geometry(const RunConfig& cfg) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    CsvWriter csv((out / "boundary_faces.csv").string(),
                  {"face_id", "cell", "pos_x", "pos_y", "normal_x", "normal_y", "vel_index",
                   "sign", "inflow", "face_measure"});
    for (const BoundaryFace& b : g.boundary)
        csv.row({static_cast<double>(b.id), static_cast<double>(b.cell), b.pos.x, b.pos.y,
                 b.normal.x, b.normal.y, static_cast<double>(b.vel), b.sign,
                 b.inflow ? 1.0 : 0.0, b.face_measure});
    json body;
    body["geometry"] = geometry_to_json(g);
    body["min_control_time"] = min_control_time(g);
    body["velocity_weight_sum"] = velocity_weight_sum(g);
    write_summary(out, "geometry", cfg, body);
    return 0;
}

inline int run_simulate(const RunConfig& cfg) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    ScenarioTree tree = build_tree(cfg.horizon, cfg.n_steps);
    LevelOperators ops(g, tree, coefficients_from(cfg, g, tree),
                       operator_options(cfg));
    std::vector<double> y0 = initial_from(cfg, g);
    StatePath path = forward_solve(y0, ops);
    EnergyReport energy = energy_report(path, ops);
    auto m2 = second_moment_per_level(path.y, ops);
    auto mean = expectation_field(path, tree);

    CsvWriter csv((out / "levels.csv").string(),
                  {"level", "time", "second_moment", "mean_norm_sq", "energy_residual"});
    for (int k = 0; k <= tree.n_steps; ++k) {
        double mn = 0.0;
        const auto& m = mean[static_cast<std::size_t>(k)];
        mn = ops.grid_dot(m.data(), m.data());
        csv.row({static_cast<double>(k), tree.time_at(k), m2[static_cast<std::size_t>(k)], mn,
                 k < tree.n_steps ? energy.level_residual[static_cast<std::size_t>(k)] : 0.0});
    }

    // terminal slice as a test fixture
    {
        json t;
        t["n_leaves"] = tree.n_leaves();
        t["field_dim"] = g.field_dim();
        t["values"] = path.y.levels.back();
        std::ofstream f(out / "terminal.json");
        f << t.dump() << "\n";
    }

    json body;
    body["substeps"] = ops.plan().substeps;
    body["cfl_sub"] = ops.plan().cfl_sub;
    body["max_energy_residual"] = energy.max_abs_residual;
    body["sup_second_moment"] = energy.sup_second_moment;
    body["gronwall_constant"] = energy.gronwall_constant;
    body["r1"] = energy.r1;
    write_summary(out, "simulate", cfg, body);
    return 0;
}

inline int run_backward(const RunConfig& cfg) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    ScenarioTree tree = build_tree(cfg.horizon, cfg.n_steps);
    LevelOperators ops(g, tree, coefficients_from(cfg, g, tree),
                       operator_options(cfg));
    TerminalField zT;
    if (cfg.zt_kind == "random") {
        zT = random_terminal(g, tree, CounterRng(cfg.seed, "zT"), false, ops);
    } else if (cfg.zt_kind == "ones") {
        zT.assign(tree.n_leaves() * static_cast<std::size_t>(g.field_dim()), 1.0);
    } else {
        throw ConfigError("terminal.kind must be random or ones");
    }
    BackwardPath bp = backward_solve(zT, ops);
    HiddenRegularityResult hr = hidden_regularity_trace(bp, ops);

    auto zm2 = second_moment_per_level(bp.z, ops);
    CsvWriter csv((out / "levels.csv").string(), {"level", "time", "z_m2", "Z_m2"});
    for (int k = 0; k <= tree.n_steps; ++k) {
        double Zm2 = 0.0;
        if (k < tree.n_steps) {
            const double p = tree.prob(k);
            for (std::size_t n = 0; n < tree.nodes_at(k); ++n)
                Zm2 += p * ops.grid_dot(bp.Z.slice(k, n), bp.Z.slice(k, n));
        }
        csv.row({static_cast<double>(k), tree.time_at(k), zm2[static_cast<std::size_t>(k)], Zm2});
    }

    json body;
    body["terminal_norm_sq"] = hr.terminal_norm_sq;
    body["trace_norm_sq"] = hr.trace_norm_sq;
    if (hr.ratio) body["hidden_regularity_ratio"] = *hr.ratio;
    else body["hidden_regularity_ratio"] = nullptr;
    body["r2"] = adjoint_from_forward(ops.coefficients(), g).r2();
    write_summary(out, "backward", cfg, body);
    return 0;
}

inline int run_duality_check(const RunConfig& cfg) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    ScenarioTree tree = build_tree(cfg.horizon, cfg.n_steps);
    CounterRng root(cfg.seed, "duality");
    CsvWriter csv((out / "residuals.csv").string(),
                  {"sample", "lhs", "rhs", "abs_residual", "rel_residual"});
    double max_rel = 0.0;
    for (int s = 0; s < cfg.samples; ++s) {
        CounterRng rng = root.stream("sample" + std::to_string(s));
        CoefficientSet coeffs = random_coefficients(g, tree, rng.stream("coeffs"), cfg.a1_bound,
                                                    cfg.a2_bound, cfg.a3_bound, true);
        coeffs.f = random_scalar(g, tree, rng.stream("f"), 1.0, true);
        LevelOperators ops(g, tree, std::move(coeffs), operator_options(cfg));

        std::vector<double> y0(static_cast<std::size_t>(g.field_dim()));
        CounterRng ry = rng.stream("y0");
        for (double& v : y0) v = ry.symmetric();
        ControlPair ctl;
        ctl.u = make_boundary_trace(g, ops.plan().dt_sub, tree.n_steps, ops.plan().substeps);
        CounterRng ru = rng.stream("u");
        for (auto& lv : ctl.u.levels)
            for (double& v : lv) v = ru.symmetric();
        ctl.v = make_adapted_field(tree.n_steps, g.field_dim());
        CounterRng rv = rng.stream("v");
        for (auto& lv : ctl.v.levels)
            for (double& v : lv) v = rv.symmetric();
        TerminalField zT = random_terminal(g, tree, rng.stream("zT"), false, ops);

        StatePath fwd = forward_solve(y0, ops, &ctl);
        BackwardPath bwd = backward_solve(zT, ops);
        DualityReport rep = duality_pairing_check(ops, y0, &ctl, fwd, bwd);
        csv.row({static_cast<double>(s), rep.lhs, rep.rhs, rep.abs_residual, rep.rel_residual});
        max_rel = std::max(max_rel, rep.rel_residual);
    }
    json body;
    body["samples"] = cfg.samples;
    body["max_rel_residual"] = max_rel;
    body["pass"] = max_rel <= 1e-10;
    write_summary(out, "duality-check", cfg, body);
    return 0;
}

inline int run_carleman_check(const RunConfig& cfg) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    ScenarioTree tree = build_tree(cfg.horizon, cfg.n_steps);
    LevelOperators ops(g, tree, coefficients_from(cfg, g, tree),
                       operator_options(cfg));
    BackwardCoefficientSet b = adjoint_from_forward(ops.coefficients(), g);
    ResolvedWeight rw = resolve_weight(cfg, g, tree.horizon, b);
    CarlemanWeight w(rw.lambda, rw.c, tree.horizon, g);

    CounterRng root(cfg.seed, "carleman");
    CsvWriter csv((out / "defects.csv").string(),
                  {"sample", "terminal_term", "z_term_dimensional", "z_term_printed",
                   "boundary_derived", "boundary_printed", "rhs", "defect", "defect_over_rhs",
                   "defect_printed"});
    double min_ratio = std::numeric_limits<double>::infinity();
    double min_defect = std::numeric_limits<double>::infinity();
    int below = 0;
    for (int s = 0; s < cfg.samples; ++s) {
        TerminalField zT = random_terminal(g, tree, root.stream("zT" + std::to_string(s)), true, ops);
        BackwardPath bp = backward_solve(zT, ops);
        CarlemanSides sides = carleman_sides(bp, w, ops, &b);
        const double ratio = sides.rhs != 0.0 ? sides.defect / std::abs(sides.rhs) : 0.0;
        csv.row({static_cast<double>(s), sides.terminal_term, sides.z_term_dimensional,
                 sides.z_term_printed, sides.boundary_term_derived, sides.boundary_term_printed,
                 sides.rhs, sides.defect, ratio, sides.defect_printed});
        min_ratio = std::min(min_ratio, ratio);
        min_defect = std::min(min_defect, sides.defect);
        if (sides.defect < -sides.epsilon_report) ++below;
    }
    json body;
    body["lambda"] = w.lambda;
    body["c"] = w.c;
    body["lambda1"] = rw.lambda1;
    body["samples"] = cfg.samples;
    body["min_defect"] = min_defect;
    body["min_defect_over_rhs"] = min_ratio;
    body["samples_below_tolerance"] = below;
    body["pass"] = below == 0;
    write_summary(out, "carleman-check", cfg, body);
    return 0;
}

inline int run_observability(const RunConfig& cfg) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    ScenarioTree tree = build_tree(cfg.horizon, cfg.n_steps);
    LevelOperators ops(g, tree, coefficients_from(cfg, g, tree),
                       operator_options(cfg));
    GramianOperator gram(ops);
    CgOptions inner;
    inner.tol = cfg.tol;
    inner.max_iter = cfg.max_iter;
    MinEigReport rep = min_gramian_eig(gram, ops, cfg.eig_iterations, inner,
                                       CounterRng(cfg.seed, "eig"));
    json body;
    body["lambda_min"] = rep.lambda_min;
    body["observability_constant"] = rep.observability_constant;
    body["iterations"] = rep.iterations;
    body["cg_breakdown"] = rep.cg_breakdown;
    body["horizon"] = tree.horizon;
    body["min_control_time"] = min_control_time(g);
    write_summary(out, "observability", cfg, body);
    return 0;
}

inline int run_hum(const RunConfig& cfg) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    ScenarioTree tree = build_tree(cfg.horizon, cfg.n_steps);
    LevelOperators ops(g, tree, coefficients_from(cfg, g, tree),
                       operator_options(cfg));
    std::vector<double> y0 = initial_from(cfg, g);

    TerminalField y1;
    if (cfg.target_kind == "random") {
        y1 = random_terminal(g, tree, CounterRng(cfg.seed, "target"), true, ops);
    } else if (cfg.target_kind == "ones") {
        y1.assign(tree.n_leaves() * static_cast<std::size_t>(g.field_dim()), 1.0);
    } else if (cfg.target_kind == "manufactured") {
        GramianOperator gram(ops);
        TerminalField probe =
            random_terminal(g, tree, CounterRng(cfg.seed, "manufactured"), true, ops);
        y1 = gram.apply(probe);
    } else {
        throw ConfigError("target.kind must be random, ones, or manufactured");
    }

    HumSolution sol = hum_solve(y0, y1, ops, cfg.tol, cfg.max_iter);

    {
        CsvWriter cu((out / "control_u.csv").string(),
                     {"level", "node", "sample", "inflow_slot", "cell", "vel", "value"});
        for (int k = 0; k < tree.n_steps; ++k)
            for (std::size_t n = 0; n < tree.nodes_at(k); ++n) {
                const double* s = sol.controls.u.slice(k, n);
                for (int e = 0; e < sol.controls.u.samples_per_node; ++e)
                    for (int slot = 0; slot < g.n_inflow(); ++slot) {
                        const BoundaryFace& b = g.boundary[static_cast<std::size_t>(
                            g.inflow_faces[static_cast<std::size_t>(slot)])];
                        cu.row({static_cast<double>(k), static_cast<double>(n),
                                static_cast<double>(e), static_cast<double>(slot),
                                static_cast<double>(b.cell), static_cast<double>(b.vel),
                                s[e * g.n_inflow() + slot]});
                    }
            }
        CsvWriter cv((out / "control_v.csv").string(), {"level", "node", "cell", "vel", "value"});
        for (int k = 0; k < tree.n_steps; ++k)
            for (std::size_t n = 0; n < tree.nodes_at(k); ++n) {
                const double* s = sol.controls.v.slice(k, n);
                for (int c = 0; c < g.n_cells(); ++c)
                    for (int j = 0; j < g.n_vel(); ++j)
                        cv.row({static_cast<double>(k), static_cast<double>(n),
                                static_cast<double>(c), static_cast<double>(j),
                                s[c * g.n_vel() + j]});
            }
    }

    json body;
    body["terminal_error"] = sol.terminal_error;
    body["terminal_error_rel"] = sol.terminal_error_rel;
    body["iterations"] = sol.cg_iterations;
    body["control_energy"] = sol.control_energy;
    body["converged"] = sol.converged;
    body["warned_short_horizon"] = sol.warned_short_horizon;
    if (cfg.eig_iterations > 0) {
        GramianOperator gram(ops);
        CgOptions inner;
        inner.tol = cfg.tol;
        inner.max_iter = cfg.max_iter;
        MinEigReport eig = min_gramian_eig(gram, ops, cfg.eig_iterations, inner,
                                           CounterRng(cfg.seed, "eig"));
        body["lambda_min"] = eig.lambda_min;
    } else {
        body["lambda_min"] = nullptr;
    }
    write_summary(out, "hum", cfg, body);
    return 0;
}

inline int run_negative(const RunConfig& cfg, const std::string& mode) {
    const auto out = prepare_out(cfg);
    Geometry g = geometry_from(cfg);
    json body;
    if (mode == "mean") {
        CsvWriter csv((out / "depths.csv").string(),
                      {"depth", "max_mean_abs", "min_residual_sq", "jensen_bound_sq",
                       "control_energy", "cg_iterations"});
        json arr = json::array();
        for (int d : cfg.depths) {
            ScenarioTree tree = build_tree(cfg.horizon, d);
            TerminalField y1;
            if (cfg.target_kind == "oscillating") {
                y1 = localized_target(g, tree, bump_psi(g, g.x_lo, g.x_hi));
            } else {
                y1.assign(tree.n_leaves() * static_cast<std::size_t>(g.field_dim()), 1.0);
            }
            MeanObstructionConfig mc;
            mc.a3 = cfg.coeff_kind == "constant" ? cfg.a3 : 1.0;
            mc.cg_budget = cfg.max_iter;
            mc.n_random_v = cfg.samples;
            ObstructionReport rep =
                mean_obstruction_demo(g, tree, y1, mc, CounterRng(cfg.seed, "mean"));
            csv.row({static_cast<double>(d), rep.max_mean_abs, rep.min_residual_sq[0],
                     rep.jensen_bound_sq, rep.control_energy[0],
                     static_cast<double>(rep.cg_iterations[0])});
            json e;
            e["depth"] = d;
            e["max_mean_abs"] = rep.max_mean_abs;
            e["min_residual_sq"] = rep.min_residual_sq[0];
            e["jensen_bound_sq"] = rep.jensen_bound_sq;
            e["jensen_vacuous"] = rep.jensen_vacuous;
            e["control_energy"] = rep.control_energy[0];
            arr.push_back(e);
        }
        body["depths"] = arr;
    } else if (mode == "peng") {
        ObstructionReport rep = oscillation_report(cfg.depths, cfg.horizon);
        CsvWriter csv((out / "depths.csv").string(),
                      {"depth", "sign_changes", "closed_form_count", "max_integrand_deviation"});
        for (std::size_t i = 0; i < rep.depths.size(); ++i)
            csv.row({static_cast<double>(rep.depths[i]), static_cast<double>(rep.sign_changes[i]),
                     static_cast<double>(rep.closed_form_counts[i]),
                     rep.max_integrand_deviation});
        body["depths"] = rep.depths;
        body["sign_changes"] = rep.sign_changes;
        body["closed_form_counts"] = rep.closed_form_counts;
        body["max_integrand_deviation"] = rep.max_integrand_deviation;
        body["counts_match"] = rep.sign_changes == rep.closed_form_counts;
    } else if (mode == "localized") {
        std::vector<std::string> modes;
        if (cfg.localized_mode == "both") modes = {"v_off_g0", "drift_only"};
        else modes = {cfg.localized_mode};
        CsvWriter csv((out / "depths.csv").string(),
                      {"mode", "depth", "min_residual_sq", "control_energy", "cg_iterations"});
        for (const std::string& m : modes) {
            ConstrainedMode cm;
            if (m == "v_off_g0") cm = ConstrainedMode::v_off_g0;
            else if (m == "drift_only") cm = ConstrainedMode::drift_only;
            else throw ConfigError("negative.mode must be v_off_g0, drift_only, or both");
            LocalizedConfig lc;
            lc.g0_lo = cfg.g0_lo;
            lc.g0_hi = cfg.g0_hi;
            lc.cg_budget = cfg.max_iter;
            ObstructionReport rep =
                localized_target_energy_growth(g, cfg.horizon, cm, cfg.depths, lc);
            json e;
            e["depths"] = rep.depths;
            e["min_residual_sq"] = rep.min_residual_sq;
            e["control_energy"] = rep.control_energy;
            bool nondecreasing = true;
            for (std::size_t i = 1; i < rep.control_energy.size(); ++i)
                if (rep.control_energy[i] < rep.control_energy[i - 1]) nondecreasing = false;
            e["energy_nondecreasing"] = nondecreasing;
            body[m] = e;
            for (std::size_t i = 0; i < rep.depths.size(); ++i)
                csv.row({m, std::to_string(rep.depths[i]), format_double(rep.min_residual_sq[i]),
                         format_double(rep.control_energy[i]),
                         std::to_string(rep.cg_iterations[i])});
        }
    } else {
        throw ConfigError("negative mode must be mean, peng, or localized");
    }
    write_summary(out, "negative " + mode, cfg, body);
    return 0;
}

} // namespace experiments

} // namespace stclab
