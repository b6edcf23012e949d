// Control synthesis by duality: the controllability Gramian maps a dual
// terminal datum z_T through one backward solve (observation extraction)
// and one forward solve (control application) back to a terminal state.
//
//   apply(z_T) = y(T) where (z, Z) solves the dual system,
//                u := B^T Ehat (inflow observation), v := Z,
//                y solves the forward system with y0 = 0, f = 0.
//
// Exact discrete duality gives <apply(a), b> = sum_k dt ( <obs_a, obs_b>_w
// + <Z_a, Z_b> ), so the Gramian is symmetric positive semidefinite to
// rounding error. Controls come from a conjugate-gradient solve of
// Lambda z_T = y1 - y_free(T); the sign convention u := +observation makes
// the bilinear form PSD with the (-U.nu) >= 0 boundary weight (the source
// construction carries the sign in the pairing instead).
//
// Channel selection supports the constrained studies: boundary-only,
// diffusion control masked off a subdomain, or drift-side internal control
// (which pairs with Ehat instead of Z).
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "stclab/backward_solver.hpp"
#include "stclab/errors.hpp"
#include "stclab/forward_solver.hpp"
#include "stclab/rng.hpp"
#include "stclab/step_operator.hpp"

namespace stclab {

struct GramianOptions {
    bool boundary_channel = true;
    bool diffusion_channel = true;
    bool drift_channel = false;
    std::vector<std::uint8_t> v_cell_mask; // empty = all cells; 1 = v active
};

struct ExtractedControls {
    BoundaryTrace u;
    AdaptedField v;
    AdaptedField drift;
    double energy = 0.0; // |u|_w^2 + |v|^2 (+ |drift|^2)
};

class GramianOperator {
  public:
    explicit GramianOperator(const LevelOperators& ops, GramianOptions opt = {})
        : ops_(&ops), opt_(std::move(opt)) {
        if (!opt_.v_cell_mask.empty() &&
            static_cast<int>(opt_.v_cell_mask.size()) != ops.geometry().n_cells())
            throw ShapeError("GramianOperator: v mask size must equal the cell count");
    }

    const LevelOperators& ops() const { return *ops_; }
    long apply_count() const { return apply_count_; }

    ExtractedControls controls_for(const TerminalField& zT) const {
        BackwardPath bp = backward_solve(zT, *ops_);
        return extract(bp);
    }

    ExtractedControls extract(const BackwardPath& bp) const {
        const Geometry& g = ops_->geometry();
        const ScenarioTree& tree = ops_->tree();
        ExtractedControls ec;
        double energy = 0.0;
        if (opt_.boundary_channel) {
            ec.u = bp.inflow_obs;
            energy += trace_dot(ec.u, ec.u, g);
        }
        if (opt_.diffusion_channel) {
            ec.v = bp.Z;
            if (!opt_.v_cell_mask.empty()) {
                const int nv = g.n_vel();
                for (int k = 0; k < tree.n_steps; ++k)
                    for (std::size_t n = 0; n < tree.nodes_at(k); ++n) {
                        double* s = ec.v.slice(k, n);
                        for (int c = 0; c < g.n_cells(); ++c)
                            if (!opt_.v_cell_mask[static_cast<std::size_t>(c)])
                                for (int j = 0; j < nv; ++j) s[c * nv + j] = 0.0;
                    }
            }
            energy += field_l2f_sq(ec.v);
        }
        if (opt_.drift_channel) {
            ec.drift = bp.Ehat;
            energy += field_l2f_sq(ec.drift);
        }
        ec.energy = energy;
        return ec;
    }

    TerminalField apply(const TerminalField& zT) const {
        ++apply_count_;
        ExtractedControls ec = controls_for(zT);
        ControlPair ctl;
        if (opt_.boundary_channel) ctl.u = std::move(ec.u);
        if (opt_.diffusion_channel) ctl.v = std::move(ec.v);
        std::vector<double> y0(static_cast<std::size_t>(ops_->field_dim()), 0.0);
        // suppress the coefficient source: the Gramian is the control map only
        StatePath path = forward_solve_no_source(y0, ctl, opt_.drift_channel ? &ec.drift : nullptr);
        TerminalField out(ops_->tree().n_leaves() * static_cast<std::size_t>(ops_->field_dim()));
        std::copy(path.y.levels.back().begin(), path.y.levels.back().end(), out.begin());
        return out;
    }

    double field_l2f_sq(const AdaptedField& x) const {
        const ScenarioTree& tree = ops_->tree();
        double s = 0.0;
        for (int k = 0; k < tree.n_steps; ++k) {
            const double p = tree.prob(k);
            for (std::size_t n = 0; n < tree.nodes_at(k); ++n) {
                const double* v = x.slice(k, n);
                s += p * tree.dt * ops_->grid_dot(v, v);
            }
        }
        return s;
    }

  private:
    StatePath forward_solve_no_source(const std::vector<double>& y0, const ControlPair& ctl,
                                      const AdaptedField* drift) const {
        if (ops_->coefficients().f.zero) return forward_solve(y0, *ops_, &ctl, drift);
        // Rare path: operators carry a source; rebuild without it.
        CoefficientSet c = ops_->coefficients();
        c.f = zero_process();
        LevelOperators clean(ops_->geometry(), ops_->tree(), std::move(c));
        return forward_solve(y0, clean, &ctl, drift);
    }

    const LevelOperators* ops_;
    GramianOptions opt_;
    mutable long apply_count_ = 0;
};

/// E<a, b> over terminal fields (leaf probability x grid inner product).
inline double terminal_field_dot(const TerminalField& a, const TerminalField& b,
                                 const LevelOperators& ops) {
    return terminal_dot(a, b, ops.tree(), ops);
}

// ---------------------------------------------------------------------------
// Conjugate gradient on terminal fields.

struct CgOptions {
    double tol = 1e-10; // relative residual
    int max_iter = 200;
    bool track_energy = false;
};

struct CgResult {
    TerminalField x;
    int iterations = 0;
    double rel_residual = 1.0;
    bool converged = false;
    bool breakdown = false;
    TerminalField best_x;        // iterate with the smallest residual
    double best_rel_residual = 1.0;
    std::vector<double> residual_history;
    std::vector<double> energy_history; // <Lambda x_k, x_k> (track_energy)
};

inline CgResult cg_solve(const std::function<TerminalField(const TerminalField&)>& apply,
                         const TerminalField& b, const LevelOperators& ops, CgOptions opt = {}) {
    CgResult res;
    const std::size_t N = b.size();
    res.x.assign(N, 0.0);
    const double bnorm = std::sqrt(terminal_field_dot(b, b, ops));
    if (bnorm == 0.0) {
        res.converged = true;
        res.rel_residual = 0.0;
        res.best_x = res.x;
        res.best_rel_residual = 0.0;
        return res;
    }
    TerminalField r = b;
    TerminalField p = b;
    TerminalField Ax;
    if (opt.track_energy) Ax.assign(N, 0.0);
    double rr = terminal_field_dot(r, r, ops);
    res.best_x = res.x;
    res.best_rel_residual = 1.0;
    res.residual_history.push_back(1.0);
    if (opt.track_energy) res.energy_history.push_back(0.0);
    for (int it = 0; it < opt.max_iter; ++it) {
        TerminalField Ap = apply(p);
        const double pAp = terminal_field_dot(p, Ap, ops);
        if (!(pAp > 0.0) || !std::isfinite(pAp)) {
            res.breakdown = true;
            break;
        }
        const double alpha = rr / pAp;
        for (std::size_t i = 0; i < N; ++i) {
            res.x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        if (opt.track_energy) {
            for (std::size_t i = 0; i < N; ++i) Ax[i] += alpha * Ap[i];
            res.energy_history.push_back(terminal_field_dot(Ax, res.x, ops));
        }
        const double rr_new = terminal_field_dot(r, r, ops);
        if (!std::isfinite(rr_new)) {
            res.breakdown = true;
            break;
        }
        res.iterations = it + 1;
        res.rel_residual = std::sqrt(rr_new) / bnorm;
        res.residual_history.push_back(res.rel_residual);
        if (res.rel_residual < res.best_rel_residual) {
            res.best_rel_residual = res.rel_residual;
            res.best_x = res.x;
        }
        if (res.rel_residual <= opt.tol) {
            res.converged = true;
            break;
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < N; ++i) p[i] = r[i] + beta * p[i];
    }
    return res;
}

// ---------------------------------------------------------------------------

struct HumSolution {
    TerminalField zT_star;
    ControlPair controls;
    AdaptedField drift_control; // only with the drift channel
    double terminal_error = 0.0;     // |y(T) - y1| recomputed by a fresh solve
    double terminal_error_rel = 0.0; // relative to |y1| (or absolute if y1 = 0)
    double cg_residual = 0.0;
    int cg_iterations = 0;
    double control_energy = 0.0;
    bool converged = false;
    bool warned_short_horizon = false;
    long gramian_applies = 0;
};

/// Steer y from y0 to y1 at time T. Builds the right-hand side from the
/// free solution (y0, f, no controls), solves Lambda z_T = y1 - y_free(T)
/// by CG, extracts the controls, and verifies the terminal state with an
/// independent forward solve.
inline HumSolution hum_solve(const std::vector<double>& y0, const TerminalField& y1,
                             const LevelOperators& ops, double tol, int max_iter,
                             GramianOptions gopt = {}) {
    if (!(tol > 0.0)) throw ConfigError("hum_solve: tol must be positive");
    const ScenarioTree& tree = ops.tree();
    const std::size_t N = tree.n_leaves() * static_cast<std::size_t>(ops.field_dim());
    if (y1.size() != N) throw ShapeError("hum_solve: target terminal field has wrong size");

    HumSolution sol;
    sol.warned_short_horizon = tree.horizon <= min_control_time(ops.geometry());

    StatePath free_path = forward_solve(y0, ops, nullptr, nullptr);
    TerminalField b(N);
    for (std::size_t i = 0; i < N; ++i) b[i] = y1[i] - free_path.y.levels.back()[i];

    GramianOperator gram(ops, gopt);
    CgOptions copt;
    copt.tol = tol;
    copt.max_iter = max_iter;
    CgResult cg = cg_solve([&gram](const TerminalField& x) { return gram.apply(x); }, b, ops, copt);

    sol.zT_star = cg.breakdown ? cg.best_x : cg.x;
    sol.cg_iterations = cg.iterations;
    sol.cg_residual = cg.breakdown ? cg.best_rel_residual : cg.rel_residual;
    sol.converged = cg.converged;

    ExtractedControls ec = gram.controls_for(sol.zT_star);
    sol.control_energy = ec.energy;
    sol.controls.u = std::move(ec.u);
    sol.controls.v = std::move(ec.v);
    sol.drift_control = std::move(ec.drift);

    StatePath verify = forward_solve(y0, ops, &sol.controls,
                                     gopt.drift_channel ? &sol.drift_control : nullptr);
    double err = 0.0;
    {
        TerminalField diff(N);
        for (std::size_t i = 0; i < N; ++i) diff[i] = verify.y.levels.back()[i] - y1[i];
        err = std::sqrt(terminal_field_dot(diff, diff, ops));
    }
    if (!std::isfinite(err)) throw NumericalBreakdown("hum_solve: non-finite terminal error");
    sol.terminal_error = err;
    const double y1n = std::sqrt(terminal_field_dot(y1, y1, ops));
    sol.terminal_error_rel = y1n > 0.0 ? err / y1n : err;
    sol.gramian_applies = gram.apply_count();
    return sol;
}

// ---------------------------------------------------------------------------
// Smallest Gramian eigenvalue by inverse power iteration (one CG solve per
// step). The observability constant is lambda_min^{-1/2}.

struct MinEigReport {
    double lambda_min = 0.0;
    double observability_constant = 0.0;
    int iterations = 0;
    bool cg_breakdown = false; // near-singular Gramian (expected for T < 2R)
    double last_cg_residual = 0.0;
    double probe_min = 0.0; // best deterministic probe quotient
};

/// Smallest-eigenvalue estimate: Rayleigh quotients of deterministic
/// single-cell probes (exact upper bounds; for short horizons these hit the
/// weakly observed interior directly, far below what inverse iteration can
/// resolve through an inner CG budget), refined by inverse power iteration
/// started from the best probe.
inline MinEigReport min_gramian_eig(const GramianOperator& gram, const LevelOperators& ops,
                                    int iterations, CgOptions inner, CounterRng rng) {
    if (iterations < 1) throw ConfigError("min_gramian_eig: need at least one iteration");
    const Geometry& g = ops.geometry();
    const ScenarioTree& tree = ops.tree();
    const std::size_t F = static_cast<std::size_t>(ops.field_dim());
    const std::size_t N = tree.n_leaves() * F;

    MinEigReport rep;
    double best = std::numeric_limits<double>::infinity();
    TerminalField x(N, 0.0);
    {
        const int stride = std::max(1, ops.field_dim() / 128);
        TerminalField probe(N);
        double probe_best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < ops.field_dim(); i += stride) {
            std::fill(probe.begin(), probe.end(), 0.0);
            for (std::size_t leaf = 0; leaf < tree.n_leaves(); ++leaf)
                probe[leaf * F + static_cast<std::size_t>(i)] = 1.0;
            TerminalField Ap = gram.apply(probe);
            const double q = terminal_field_dot(Ap, probe, ops) /
                             terminal_field_dot(probe, probe, ops);
            if (std::isfinite(q) && q < probe_best) {
                probe_best = q;
                x = probe;
            }
        }
        rep.probe_min = std::isfinite(probe_best) ? probe_best : 0.0;
        best = std::min(best, std::max(probe_best, 0.0));
        // random component keeps the start from being Lambda-orthogonal
        // to the minimal eigenspace
        CounterRng r = rng;
        for (std::size_t i = 0; i < N; ++i) x[i] += 1e-3 * r.symmetric();
        double xn = std::sqrt(terminal_field_dot(x, x, ops));
        for (std::size_t i = 0; i < N; ++i) x[i] /= xn;
    }

    for (int it = 0; it < iterations; ++it) {
        CgResult cg =
            cg_solve([&gram](const TerminalField& v) { return gram.apply(v); }, x, ops, inner);
        rep.cg_breakdown = rep.cg_breakdown || cg.breakdown;
        rep.last_cg_residual = cg.breakdown ? cg.best_rel_residual : cg.rel_residual;
        TerminalField& y = cg.breakdown ? cg.best_x : cg.x;
        const double yn = std::sqrt(terminal_field_dot(y, y, ops));
        if (!(yn > 0.0) || !std::isfinite(yn)) break;
        for (std::size_t i = 0; i < N; ++i) x[i] = y[i] / yn;
        TerminalField Ax = gram.apply(x);
        const double rayleigh = terminal_field_dot(x, Ax, ops);
        rep.iterations = it + 1;
        if (std::isfinite(rayleigh) && rayleigh > 0.0) best = std::min(best, rayleigh);
    }
    rep.lambda_min = std::isfinite(best) ? best : 0.0;
    rep.observability_constant = rep.lambda_min > 0.0 ? 1.0 / std::sqrt(rep.lambda_min) : 0.0;
    return rep;
}

} // namespace stclab
