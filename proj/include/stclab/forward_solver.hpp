// Forward controlled stochastic transport on Geometry x ScenarioTree.
//
// The map (y0, u, v, f) -> y is linear; with zero coefficients, a single
// active velocity, and substep CFL exactly 1 the scheme advects indicator
// data along characteristics without error.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "stclab/geometry.hpp"
#include "stclab/parallel.hpp"
#include "stclab/scenario_tree.hpp"
#include "stclab/step_operator.hpp"

namespace stclab {

struct ControlPair {
    BoundaryTrace u; // empty = no boundary control
    AdaptedField v;  // empty = no diffusion control
};

struct StatePath {
    AdaptedField y; // levels 0..n_steps
    int substeps = 1;
    double cfl_sub = 0.0;
    double dx = 0.0;
};

inline StatePath forward_solve(const std::vector<double>& y0, const LevelOperators& ops,
                               const ControlPair* controls = nullptr,
                               const AdaptedField* extra_drift = nullptr) {
    const Geometry& g = ops.geometry();
    const ScenarioTree& tree = ops.tree();
    const int F = ops.field_dim();
    if (static_cast<int>(y0.size()) != F)
        throw ShapeError("forward_solve: initial datum has wrong field dimension");
    const BoundaryTrace* u = nullptr;
    const AdaptedField* v = nullptr;
    if (controls) {
        if (!controls->u.empty()) {
            if (controls->u.n_inflow != g.n_inflow() ||
                controls->u.samples_per_node != ops.plan().substeps ||
                static_cast<int>(controls->u.levels.size()) < tree.n_steps)
                throw ShapeError("forward_solve: boundary trace shape mismatch");
            u = &controls->u;
        }
        if (!controls->v.levels.empty()) {
            if (controls->v.dim != F || controls->v.top_level() + 1 < tree.n_steps)
                throw ShapeError("forward_solve: diffusion control shape mismatch");
            v = &controls->v;
        }
    }
    if (extra_drift && (extra_drift->dim != F || extra_drift->top_level() + 1 < tree.n_steps))
        throw ShapeError("forward_solve: drift control shape mismatch");

    StatePath path;
    path.y = make_adapted_field(tree.n_levels(), F);
    path.substeps = ops.plan().substeps;
    path.cfl_sub = ops.plan().cfl_sub;
    path.dx = g.dx;
    std::copy(y0.begin(), y0.end(), path.y.slice(0, 0));

    for (int k = 0; k < tree.n_steps; ++k) {
        const std::size_t nodes = tree.nodes_at(k);
        AdaptedField& y = path.y;
        parallel_for(nodes, [&](std::size_t n) {
            thread_local std::vector<double> det, noise;
            det.resize(static_cast<std::size_t>(F));
            noise.resize(static_cast<std::size_t>(F));
            const double* yk = y.slice(k, n);
            ops.apply_deterministic(k, n, yk, det.data(), u ? u->slice(k, n) : nullptr,
                                    extra_drift ? extra_drift->slice(k, n) : nullptr);
            ops.noise_part(k, n, yk, v ? v->slice(k, n) : nullptr, noise.data());
            double* down = y.slice(k + 1, tree.child(k, n, false));
            double* up = y.slice(k + 1, tree.child(k, n, true));
            for (int i = 0; i < F; ++i) {
                const double w = tree.sqrt_dt * noise[static_cast<std::size_t>(i)];
                down[i] = det[static_cast<std::size_t>(i)] - w;
                up[i] = det[static_cast<std::size_t>(i)] + w;
            }
        });
    }
    return path;
}

/// Probability-weighted mean of the field at every level.
inline std::vector<std::vector<double>> expectation_field(const StatePath& path,
                                                          const ScenarioTree& tree) {
    std::vector<std::vector<double>> out;
    const int F = path.y.dim;
    out.reserve(path.y.levels.size());
    for (int k = 0; k <= path.y.top_level(); ++k) {
        const std::size_t nodes = tree.nodes_at(k);
        const double p = tree.prob(k);
        std::vector<double> mean(static_cast<std::size_t>(F), 0.0);
        for (std::size_t n = 0; n < nodes; ++n) {
            const double* s = path.y.slice(k, n);
            for (int i = 0; i < F; ++i) mean[static_cast<std::size_t>(i)] += p * s[i];
        }
        out.push_back(std::move(mean));
    }
    return out;
}

/// E |y(k)|^2 with the grid inner product, per level.
inline std::vector<double> second_moment_per_level(const AdaptedField& field,
                                                   const LevelOperators& ops) {
    std::vector<double> out;
    for (int k = 0; k <= field.top_level(); ++k) {
        const std::size_t nodes = std::size_t{1} << k;
        const double p = 1.0 / static_cast<double>(nodes);
        double s = 0.0;
        for (std::size_t n = 0; n < nodes; ++n) {
            const double* y = field.slice(k, n);
            s += p * ops.grid_dot(y, y);
        }
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Discrete Ito energy identity and the Gronwall-style bound.

struct EnergyReport {
    std::vector<double> level_residual; // identity residual per level
    double max_abs_residual = 0.0;
    double sup_second_moment = 0.0; // E sup_k |y(k)|^2
    double rhs_base = 0.0;          // (|y0| + |f| + |u|_w + |v|)^2
    double r1 = 0.0;
    double gronwall_constant = 0.0; // smallest C with lhs <= e^{C r1} * base
};

inline EnergyReport energy_report(const StatePath& path, const LevelOperators& ops,
                                  const ControlPair* controls = nullptr) {
    const Geometry& g = ops.geometry();
    const ScenarioTree& tree = ops.tree();
    const int F = ops.field_dim();
    const int nv = g.n_vel();
    const BoundaryTrace* u = controls && !controls->u.empty() ? &controls->u : nullptr;
    const AdaptedField* v = controls && !controls->v.levels.empty() ? &controls->v : nullptr;

    EnergyReport rep;
    std::vector<double> m2 = second_moment_per_level(path.y, ops);

    for (int k = 0; k < tree.n_steps; ++k) {
        const std::size_t nodes = tree.nodes_at(k);
        const double p = tree.prob(k);
        double rhs = 0.0;
        for (std::size_t n = 0; n < nodes; ++n) {
            const double* y = path.y.slice(k, n);
            const double* a1 = ops.coefficients().a1.slice(k, n);
            const double* a2 = ops.coefficients().a2.slice(k, n);
            const double* f = ops.coefficients().f.slice(k, n);
            double acc = 0.0;
            for (int c = 0; c < g.n_cells(); ++c)
                for (int j = 0; j < nv; ++j) {
                    const double w = g.cell_measure * g.vel_weights[static_cast<std::size_t>(j)];
                    const double yc = y[c * nv + j];
                    if (a1) acc += w * 2.0 * a1[c * nv + j] * yc * yc;
                    if (a2) {
                        const double* row = a2 + (static_cast<std::size_t>(c) * nv + j) * nv;
                        double q = 0.0;
                        for (int l = 0; l < nv; ++l)
                            q += g.vel_weights[static_cast<std::size_t>(l)] * row[l] * y[c * nv + l];
                        acc += w * 2.0 * q * yc;
                    }
                    if (f) acc += w * 2.0 * f[c * nv + j] * yc;
                }
            // quadratic variation
            thread_local std::vector<double> noise;
            noise.resize(static_cast<std::size_t>(F));
            ops.noise_part(k, n, y, v ? v->slice(k, n) : nullptr, noise.data());
            acc += ops.grid_dot(noise.data(), noise.data());
            // boundary flux: inflow gain (substep mean of u^2), outflow loss
            if (ops.transport_enabled()) {
                for (const BoundaryFace& b : g.boundary) {
                    const double w = b.face_measure * g.vel_weights[static_cast<std::size_t>(b.vel)];
                    if (b.inflow) {
                        if (u) {
                            const int slot = g.inflow_slot[static_cast<std::size_t>(b.id)];
                            const double* uu = u->slice(k, n);
                            double mean_sq = 0.0;
                            for (int e = 0; e < u->samples_per_node; ++e) {
                                const double val = uu[e * u->n_inflow + slot];
                                mean_sq += val * val;
                            }
                            mean_sq /= u->samples_per_node;
                            acc += (-b.sign) * w * mean_sq;
                        }
                    } else {
                        const double yb = y[b.cell * nv + b.vel];
                        acc -= b.sign * w * yb * yb;
                    }
                }
            }
            rhs += p * acc;
        }
        const double res = m2[static_cast<std::size_t>(k + 1)] - m2[static_cast<std::size_t>(k)] -
                           tree.dt * rhs;
        rep.level_residual.push_back(res);
        rep.max_abs_residual = std::max(rep.max_abs_residual, std::abs(res));
    }

    // E sup_k |y(k)|^2: propagate the running pathwise max down the tree.
    {
        std::vector<double> run(1, ops.grid_dot(path.y.slice(0, 0), path.y.slice(0, 0)));
        for (int k = 1; k <= tree.n_steps; ++k) {
            const std::size_t nodes = tree.nodes_at(k);
            const std::size_t parents = nodes / 2;
            std::vector<double> next(nodes);
            for (std::size_t n = 0; n < nodes; ++n) {
                const double* y = path.y.slice(k, n);
                next[n] = std::max(run[n & (parents - 1)], ops.grid_dot(y, y));
            }
            run.swap(next);
        }
        double s = 0.0;
        for (double x : run) s += x;
        rep.sup_second_moment = s / static_cast<double>(run.size());
    }

    double y0n = std::sqrt(ops.grid_dot(path.y.slice(0, 0), path.y.slice(0, 0)));
    double fn = 0.0;
    {
        const SampledProcess& f = ops.coefficients().f;
        if (!f.zero) {
            double s = 0.0;
            for (int k = 0; k < tree.n_steps; ++k) {
                const std::size_t nodes = f.adapted ? tree.nodes_at(k) : 1;
                const double p = 1.0 / static_cast<double>(nodes);
                for (std::size_t n = 0; n < nodes; ++n) {
                    const double* s_ = f.slice(k, n);
                    s += p * tree.dt * ops.grid_dot(s_, s_);
                }
            }
            fn = std::sqrt(s);
        }
    }
    double un = u ? weighted_inflow_norm(*u, g) : 0.0;
    double vn = 0.0;
    if (v) {
        double s = 0.0;
        for (int k = 0; k < tree.n_steps; ++k) {
            const std::size_t nodes = tree.nodes_at(k);
            const double p = tree.prob(k);
            for (std::size_t n = 0; n < nodes; ++n) {
                const double* s_ = v->slice(k, n);
                s += p * tree.dt * ops.grid_dot(s_, s_);
            }
        }
        vn = std::sqrt(s);
    }
    const double base = y0n + fn + un + vn;
    rep.rhs_base = base * base;
    rep.r1 = ops.coefficients().r1();
    rep.gronwall_constant =
        rep.rhs_base > 0.0 && rep.sup_second_moment > rep.rhs_base
            ? std::log(rep.sup_second_moment / rep.rhs_base) / rep.r1
            : 0.0;
    return rep;
}

} // namespace stclab
