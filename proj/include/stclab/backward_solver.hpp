// Backward stochastic transport as the exact discrete adjoint of the
// forward scheme.
//
// Descending from the terminal datum, each level computes
//   Ehat_k = E_k[z_{k+1}],  Z_k = E_k[z_{k+1} dB]/dt,
//   z_k = M_k^T Ehat_k + dt a3 Z_k,
// plus the inflow observation B_k^T Ehat_k in the weighted boundary inner
// product. On the two-point tree z_{k+1} = Ehat_k + Z_k dB exactly, so (z, Z)
// is an exact solution pair, and the duality identity
//   E<y(T), z_T> - <y0, z(0)> =
//       sum_k dt ( E<u_k, B_k^T Ehat_k>_w + E<v_k, Z_k> + E<f_k, Ehat_k> )
// holds to rounding error by construction.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "stclab/forward_solver.hpp"
#include "stclab/geometry.hpp"
#include "stclab/parallel.hpp"
#include "stclab/scenario_tree.hpp"
#include "stclab/step_operator.hpp"

namespace stclab {

/// Field over terminal leaves, layout [leaf][cell][velocity].
using TerminalField = std::vector<double>;

struct BackwardPath {
    AdaptedField z;           // levels 0..n_steps
    AdaptedField Z;           // levels 0..n_steps-1
    AdaptedField Ehat;        // levels 0..n_steps-1
    BoundaryTrace inflow_obs; // levels 0..n_steps-1
};

/// zT: terminal grid field per leaf, layout [leaf][cell][velocity].
inline BackwardPath backward_solve(const std::vector<double>& zT, const LevelOperators& ops) {
    const Geometry& g = ops.geometry();
    const ScenarioTree& tree = ops.tree();
    const int F = ops.field_dim();
    if (zT.size() != tree.n_leaves() * static_cast<std::size_t>(F))
        throw ShapeError("backward_solve: terminal datum has wrong size");

    BackwardPath path;
    path.z = make_adapted_field(tree.n_levels(), F);
    path.Z = make_adapted_field(tree.n_steps, F);
    path.Ehat = make_adapted_field(tree.n_steps, F);
    path.inflow_obs =
        make_boundary_trace(g, ops.plan().dt_sub, tree.n_steps, ops.plan().substeps);
    std::copy(zT.begin(), zT.end(), path.z.slice(tree.n_steps, 0));

    for (int k = tree.n_steps - 1; k >= 0; --k) {
        const std::size_t nodes = tree.nodes_at(k);
        parallel_for(nodes, [&](std::size_t n) {
            const double* down = path.z.slice(k + 1, tree.child(k, n, false));
            const double* up = path.z.slice(k + 1, tree.child(k, n, true));
            double* eh = path.Ehat.slice(k, n);
            double* zc = path.Z.slice(k, n);
            for (int i = 0; i < F; ++i) {
                eh[i] = 0.5 * (down[i] + up[i]);
                zc[i] = (up[i] - down[i]) / (2.0 * tree.sqrt_dt);
            }
            double* z = path.z.slice(k, n);
            ops.apply_transpose_chain(k, n, eh, z, path.inflow_obs.slice(k, n));
            const double* a3 = ops.coefficients().a3.slice(k, n);
            if (a3)
                for (int i = 0; i < F; ++i) z[i] += tree.dt * a3[i] * zc[i];
        });
    }
    return path;
}

// ---------------------------------------------------------------------------

/// E<a(T), b(T)> over leaves with the grid inner product.
inline double terminal_dot(const std::vector<double>& a, const std::vector<double>& b,
                           const ScenarioTree& tree, const LevelOperators& ops) {
    const std::size_t F = static_cast<std::size_t>(ops.field_dim());
    if (a.size() != b.size() || a.size() != tree.n_leaves() * F)
        throw ShapeError("terminal_dot: size mismatch");
    const double p = tree.prob(tree.n_steps);
    double s = 0.0;
    for (std::size_t leaf = 0; leaf < tree.n_leaves(); ++leaf)
        s += p * ops.grid_dot(a.data() + leaf * F, b.data() + leaf * F);
    return s;
}

struct DualityReport {
    double lhs = 0.0;          // E<y(T), z_T> - <y0, z(0)>
    double rhs = 0.0;          // control/source pairings
    double terminal_term = 0.0;
    double initial_term = 0.0;
    double boundary_term = 0.0;
    double diffusion_term = 0.0;
    double source_term = 0.0;
    double abs_residual = 0.0;
    double rel_residual = 0.0; // residual over the largest constituent term
};

/// Evaluates both sides of the discrete duality identity. Forward and
/// backward paths must come from the same LevelOperators instance.
inline DualityReport duality_pairing_check(const LevelOperators& ops,
                                           const std::vector<double>& y0,
                                           const ControlPair* controls, const StatePath& fwd,
                                           const BackwardPath& bwd,
                                           const AdaptedField* extra_drift = nullptr) {
    const Geometry& g = ops.geometry();
    const ScenarioTree& tree = ops.tree();
    const int F = ops.field_dim();
    if (fwd.y.dim != F || bwd.z.dim != F || fwd.y.top_level() != tree.n_steps ||
        bwd.z.top_level() != tree.n_steps)
        throw ConfigError("duality_pairing_check: paths do not match the step data");

    DualityReport rep;
    {
        const double p = tree.prob(tree.n_steps);
        double s = 0.0;
        for (std::size_t leaf = 0; leaf < tree.n_leaves(); ++leaf)
            s += p * ops.grid_dot(fwd.y.slice(tree.n_steps, leaf), bwd.z.slice(tree.n_steps, leaf));
        rep.terminal_term = s;
        rep.initial_term = ops.grid_dot(y0.data(), bwd.z.slice(0, 0));
        rep.lhs = rep.terminal_term - rep.initial_term;
    }

    const BoundaryTrace* u = controls && !controls->u.empty() ? &controls->u : nullptr;
    const AdaptedField* v = controls && !controls->v.levels.empty() ? &controls->v : nullptr;
    const SampledProcess& f = ops.coefficients().f;

    if (u && (u->samples_per_node != bwd.inflow_obs.samples_per_node ||
              u->n_inflow != bwd.inflow_obs.n_inflow))
        throw ConfigError("duality_pairing_check: boundary trace resolution mismatch");
    for (int k = 0; k < tree.n_steps; ++k) {
        const std::size_t nodes = tree.nodes_at(k);
        const double p = tree.prob(k);
        double bt = 0.0, dt_ = 0.0, st = 0.0;
        for (std::size_t n = 0; n < nodes; ++n) {
            if (u) {
                const double* uu = u->slice(k, n);
                const double* gg = bwd.inflow_obs.slice(k, n);
                for (int e = 0; e < u->samples_per_node; ++e)
                    for (int s = 0; s < g.n_inflow(); ++s)
                        bt += p * inflow_weight(g, s) * uu[e * g.n_inflow() + s] *
                              gg[e * g.n_inflow() + s];
            }
            if (v) dt_ += p * ops.grid_dot(v->slice(k, n), bwd.Z.slice(k, n));
            const double* fs = f.slice(k, n);
            if (fs) st += p * ops.grid_dot(fs, bwd.Ehat.slice(k, n));
            if (extra_drift)
                st += p * ops.grid_dot(extra_drift->slice(k, n), bwd.Ehat.slice(k, n));
        }
        rep.boundary_term += ops.plan().dt_sub * bt;
        rep.diffusion_term += tree.dt * dt_;
        rep.source_term += tree.dt * st;
    }
    rep.rhs = rep.boundary_term + rep.diffusion_term + rep.source_term;
    rep.abs_residual = std::abs(rep.lhs - rep.rhs);
    const double scale =
        std::max({std::abs(rep.terminal_term), std::abs(rep.initial_term),
                  std::abs(rep.boundary_term), std::abs(rep.diffusion_term),
                  std::abs(rep.source_term), 1.0e-30});
    rep.rel_residual = rep.abs_residual / scale;
    return rep;
}

// ---------------------------------------------------------------------------

struct HiddenRegularityResult {
    BoundaryTrace trace;         // literal z at inflow faces, levels 0..n-1
    std::optional<double> ratio; // |z|_w^2 / E|z_T|^2; empty when E|z_T|^2 = 0
    double trace_norm_sq = 0.0;
    double terminal_norm_sq = 0.0;
};

inline HiddenRegularityResult hidden_regularity_trace(const BackwardPath& path,
                                                      const LevelOperators& ops) {
    const Geometry& g = ops.geometry();
    const ScenarioTree& tree = ops.tree();
    HiddenRegularityResult res;
    res.trace = make_boundary_trace(g, tree.dt, tree.n_steps);
    const int nv = g.n_vel();
    for (int k = 0; k < tree.n_steps; ++k) {
        for (std::size_t n = 0; n < tree.nodes_at(k); ++n) {
            const double* z = path.z.slice(k, n);
            double* t = res.trace.slice(k, n);
            for (int s = 0; s < g.n_inflow(); ++s) {
                const BoundaryFace& b =
                    g.boundary[static_cast<std::size_t>(g.inflow_faces[static_cast<std::size_t>(s)])];
                t[s] = z[b.cell * nv + b.vel];
            }
        }
    }
    res.trace_norm_sq = trace_dot(res.trace, res.trace, g);
    const double p = tree.prob(tree.n_steps);
    for (std::size_t leaf = 0; leaf < tree.n_leaves(); ++leaf)
        res.terminal_norm_sq +=
            p * ops.grid_dot(path.z.slice(tree.n_steps, leaf), path.z.slice(tree.n_steps, leaf));
    if (res.terminal_norm_sq > 0.0) res.ratio = res.trace_norm_sq / res.terminal_norm_sq;
    return res;
}

} // namespace stclab
