// Per-level step maps of the explicit upwind / Euler-Maruyama scheme and
// their exact transposes.
//
// One noise level (tree step of length dt) is integrated by m transport
// substeps of length dt/m chosen so that the substep CFL number is <= 1.
// With A the substep matrix
//
//     A = I - dt_sub * D_h + dt_sub * (diag(a1) + Q(a2)),
//
// the level map is M = A^m; boundary data enters every substep through the
// upwind inflow flux (ghost value u, flux weight |U.nu|/dx), sources at
// level granularity, and noise at the parent node (Ito convention):
//
//     y(child +/-) = M y + dt (B u + f) +/- sqrt(dt) (a3 y + v).
//
// Boundary data is resolved per substep (the trace carries m samples per
// noise level): a control held constant over a whole noise level would be
// blind to features the transport sweeps past within that level, which
// leaves deterministic terminal states unreachable no matter the depth.
//
// The backward recursion is defined as the exact discrete adjoint:
//
//     Z_k = E_k[z_{k+1} dB]/dt,   z_k = M^T E_k[z_{k+1}] + dt a3 Z_k,
//
// which makes discrete integration by parts an identity, not an
// approximation. The inflow observation returned alongside z is B^T applied
// to E_k[z_{k+1}], expressed in the weighted boundary inner product: one
// value per substep and inflow face, the transposed chain evaluated at the
// ghost cells, first-order consistent with the boundary value of z.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "stclab/coefficients.hpp"
#include "stclab/errors.hpp"
#include "stclab/geometry.hpp"
#include "stclab/scenario_tree.hpp"

namespace stclab {

struct SubstepPlan {
    int substeps = 1;
    double dt_sub = 0.0;
    double cfl_level = 0.0; // dt * max transport rate
    double cfl_sub = 0.0;   // dt_sub * max transport rate
    double max_rate = 0.0;  // max over velocities of sum_axes |U_ax| / dx_ax
};

/// Choose the substep count. forced = 0 picks the smallest m with
/// dt/m * max_rate <= 1; a forced count that violates the CFL condition is a
/// configuration error reporting the admissible dt.
inline SubstepPlan plan_substeps(const Geometry& g, const ScenarioTree& tree, int forced = 0) {
    SubstepPlan p;
    for (int j = 0; j < g.n_vel(); ++j) {
        const Vec2 u = g.velocities[static_cast<std::size_t>(j)];
        double rate = std::abs(u.x) / g.dx;
        if (g.dim == 2) rate += std::abs(u.y) / g.dy;
        p.max_rate = std::max(p.max_rate, rate);
    }
    p.cfl_level = tree.dt * p.max_rate;
    if (forced > 0) {
        p.substeps = forced;
        if (p.cfl_level / forced > 1.0 + 1e-12)
            throw ConfigError("plan_substeps: CFL violation with " + std::to_string(forced) +
                              " substep(s); admissible dt <= " +
                              std::to_string(forced / p.max_rate) + " at this resolution");
    } else {
        p.substeps = std::max(1, static_cast<int>(std::ceil(p.cfl_level - 1e-12)));
    }
    p.dt_sub = tree.dt / p.substeps;
    p.cfl_sub = p.dt_sub * p.max_rate;
    return p;
}

struct LevelOperatorOptions {
    int forced_substeps = 0;        // 0 = auto
    bool disable_transport = false; // reduced configurations for tests
    // Uniform-dissipation budget kappa (dimensionless, 0 = off). Adds
    // vanishing viscosity per axis topping the upwind dissipation up to a
    // fixed damping spectrum kappa (1 - cos xi) per horizon, so the damping
    // of every Fourier mode is the same at every resolution. First-order
    // upwind alone damps high-frequency dual modes by a CFL-dependent
    // amount, which makes the smallest Gramian eigenvalue collapse or jump
    // between refinement levels; with the budget fixed, observability
    // constants of resolvable modes become refinement-stable. O(dx^2)
    // consistent, off by default.
    double uniform_dissipation = 0.0;
};

class LevelOperators {
  public:
    LevelOperators(const Geometry& g, const ScenarioTree& tree, CoefficientSet coeffs,
                   LevelOperatorOptions opt = {})
        : g_(&g), tree_(tree), coeffs_(std::move(coeffs)), opt_(opt) {
        coeffs_.validate();
        plan_ = opt.disable_transport ? SubstepPlan{1, tree.dt, 0.0, 0.0, 0.0}
                                      : plan_substeps(g, tree, opt.forced_substeps);
        build_stencils();
    }

    const Geometry& geometry() const { return *g_; }
    const ScenarioTree& tree() const { return tree_; }
    const CoefficientSet& coefficients() const { return coeffs_; }
    const SubstepPlan& plan() const { return plan_; }
    int field_dim() const { return g_->field_dim(); }
    bool transport_enabled() const { return !opt_.disable_transport; }

    /// out = V (A y + (u ? substep boundary injection : 0)): one transport
    /// substep followed by the uniform-dissipation smoothing V.
    void apply_substep(int level, std::size_t node, const double* y, double* out,
                       const double* u_slots) const {
        const int nc = g_->n_cells();
        const int nv = g_->n_vel();
        const double h = plan_.dt_sub;
        const double* a1 = coeffs_.a1.slice(level, node);
        const double* a2 = coeffs_.a2.slice(level, node);

        thread_local std::vector<double> stage;
        double* mid = out;
        if (has_dissipation_) {
            stage.resize(static_cast<std::size_t>(nc) * nv);
            mid = stage.data();
        }

        for (int c = 0; c < nc; ++c) {
            const double* yc = y + static_cast<std::size_t>(c) * nv;
            double* oc = mid + static_cast<std::size_t>(c) * nv;
            for (int j = 0; j < nv; ++j) {
                double v = yc[j];
                if (!opt_.disable_transport) {
                    const VelStencil& st = stencils_[static_cast<std::size_t>(j)];
                    for (int ax = 0; ax < st.n_axes; ++ax) {
                        const AxisStencil& a = st.axis[ax];
                        const int up = a.upwind[static_cast<std::size_t>(c)];
                        double upval = 0.0;
                        if (up >= 0)
                            upval = y[static_cast<std::size_t>(up) * nv + j];
                        else if (u_slots)
                            upval = u_slots[a.ghost_slot[static_cast<std::size_t>(c)]];
                        v -= h * a.rate * (yc[j] - upval);
                    }
                }
                if (a1) v += h * a1[c * nv + j] * yc[j];
                if (a2) {
                    const double* row = a2 + (static_cast<std::size_t>(c) * nv + j) * nv;
                    double q = 0.0;
                    for (int l = 0; l < nv; ++l)
                        q += g_->vel_weights[static_cast<std::size_t>(l)] * row[l] * yc[l];
                    v += h * q;
                }
                oc[j] = v;
            }
        }
        if (has_dissipation_) apply_smoothing(mid, out);
    }

    /// out = A^T V z (transpose in the cell-measure x velocity-weight inner
    /// product); values beyond the outflow boundary are zero. V is
    /// self-adjoint, so the transposed substep smooths first.
    void apply_substep_transpose(int level, std::size_t node, const double* z, double* out) const {
        const int nc = g_->n_cells();
        const int nv = g_->n_vel();
        const double h = plan_.dt_sub;
        const double* a1 = coeffs_.a1.slice(level, node);
        const double* a2 = coeffs_.a2.slice(level, node);

        thread_local std::vector<double> stage;
        const double* src = z;
        if (has_dissipation_) {
            stage.resize(static_cast<std::size_t>(nc) * nv);
            apply_smoothing(z, stage.data());
            src = stage.data();
        }

        for (int c = 0; c < nc; ++c) {
            const double* zc = src + static_cast<std::size_t>(c) * nv;
            double* oc = out + static_cast<std::size_t>(c) * nv;
            for (int j = 0; j < nv; ++j) {
                double v = zc[j];
                if (!opt_.disable_transport) {
                    const VelStencil& st = stencils_[static_cast<std::size_t>(j)];
                    for (int ax = 0; ax < st.n_axes; ++ax) {
                        const AxisStencil& a = st.axis[ax];
                        const int dn = a.downwind[static_cast<std::size_t>(c)];
                        const double dnval = dn >= 0 ? src[static_cast<std::size_t>(dn) * nv + j] : 0.0;
                        v -= h * a.rate * (zc[j] - dnval);
                    }
                }
                if (a1) v += h * a1[c * nv + j] * zc[j];
                if (a2) {
                    double q = 0.0;
                    for (int l = 0; l < nv; ++l)
                        q += g_->vel_weights[static_cast<std::size_t>(l)] *
                             a2[(static_cast<std::size_t>(c) * nv + l) * nv + j] * zc[l];
                    v += h * q;
                }
                oc[j] = v;
            }
        }
    }

    /// Neumann-boundary smoothing V = I + sum_ax D_ax Lap_ax per velocity
    /// row; D tops the per-axis upwind dissipation c(1-c) up to the uniform
    /// budget kappa dt_sub / T.
    void apply_smoothing(const double* in, double* out) const {
        const int nc = g_->n_cells();
        const int nv = g_->n_vel();
        for (int c = 0; c < nc; ++c)
            for (int j = 0; j < nv; ++j) {
                const VelStencil& st = stencils_[static_cast<std::size_t>(j)];
                const double vc = in[static_cast<std::size_t>(c) * nv + j];
                double v = vc;
                for (int ax = 0; ax < st.n_axes; ++ax) {
                    const AxisStencil& a = st.axis[ax];
                    if (a.dcoef == 0.0) continue;
                    const int up = a.upwind[static_cast<std::size_t>(c)];
                    const int dn = a.downwind[static_cast<std::size_t>(c)];
                    if (up >= 0) v += a.dcoef * (in[static_cast<std::size_t>(up) * nv + j] - vc);
                    if (dn >= 0) v += a.dcoef * (in[static_cast<std::size_t>(dn) * nv + j] - vc);
                }
                out[static_cast<std::size_t>(c) * nv + j] = v;
            }
    }

    /// Deterministic part of the level map: chain of substeps (boundary
    /// data per substep: u_slots holds substeps x n_inflow values) plus
    /// level-granularity sources. y and out may not alias.
    void apply_deterministic(int level, std::size_t node, const double* y, double* out,
                             const double* u_slots, const double* extra_drift) const {
        const std::size_t F = static_cast<std::size_t>(field_dim());
        thread_local std::vector<double> buf;
        buf.resize(F);
        const double* src = y;
        double* dst = out;
        for (int s = 0; s < plan_.substeps; ++s) {
            apply_substep(level, node, src, dst,
                          u_slots ? u_slots + static_cast<std::size_t>(s) * g_->n_inflow()
                                  : nullptr);
            if (s + 1 < plan_.substeps) {
                std::memcpy(buf.data(), dst, F * sizeof(double));
                src = buf.data();
                dst = out;
            }
        }
        const double* f = coeffs_.f.slice(level, node);
        if (f)
            for (std::size_t i = 0; i < F; ++i) out[i] += tree_.dt * f[i];
        if (extra_drift)
            for (std::size_t i = 0; i < F; ++i) out[i] += tree_.dt * extra_drift[i];
    }

    /// Diffusion amplitude at the parent node: a3 y + v.
    void noise_part(int level, std::size_t node, const double* y, const double* v,
                    double* out) const {
        const std::size_t F = static_cast<std::size_t>(field_dim());
        const double* a3 = coeffs_.a3.slice(level, node);
        for (std::size_t i = 0; i < F; ++i) {
            double n = v ? v[i] : 0.0;
            if (a3) n += a3[i] * y[i];
            out[i] = n;
        }
    }

    /// Transposed level chain: out_z = (A^T)^m ehat, and the inflow
    /// observation per substep and face (obs_slots holds substeps x
    /// n_inflow values, layout [substep][slot]). The value injected at
    /// substep s sees m-1-s further transport applications, so substep s
    /// pairs with (A^T)^{m-1-s} ehat evaluated at the ghost cells.
    void apply_transpose_chain(int level, std::size_t node, const double* ehat, double* out_z,
                               double* obs_slots) const {
        const std::size_t F = static_cast<std::size_t>(field_dim());
        thread_local std::vector<double> buf;
        buf.resize(F);
        std::memcpy(out_z, ehat, F * sizeof(double));
        if (obs_slots)
            std::fill(obs_slots,
                      obs_slots + static_cast<std::size_t>(plan_.substeps) * g_->n_inflow(), 0.0);
        for (int j = 0; j < plan_.substeps; ++j) {
            if (obs_slots) {
                double* row = obs_slots +
                              static_cast<std::size_t>(plan_.substeps - 1 - j) * g_->n_inflow();
                for (const auto& inj : injections_) row[inj.slot] = out_z[inj.field_index];
            }
            apply_substep_transpose(level, node, out_z, buf.data());
            std::memcpy(out_z, buf.data(), F * sizeof(double));
        }
    }

    /// Weighted inner product on grid fields: sum cell_measure * w_j * a * b.
    double grid_dot(const double* a, const double* b) const {
        const int nc = g_->n_cells();
        const int nv = g_->n_vel();
        double s = 0.0;
        for (int c = 0; c < nc; ++c)
            for (int j = 0; j < nv; ++j)
                s += a[c * nv + j] * b[c * nv + j] * g_->vel_weights[static_cast<std::size_t>(j)];
        return s * g_->cell_measure;
    }

  private:
    struct AxisStencil {
        double rate = 0.0;
        double dcoef = 0.0;              // uniform-dissipation top-up
        std::vector<int32_t> upwind;     // -1: ghost (inflow face)
        std::vector<int32_t> downwind;   // -1: outside (outflow)
        std::vector<int32_t> ghost_slot; // inflow slot for ghost cells, else -1
    };
    struct VelStencil {
        int n_axes = 0;
        AxisStencil axis[2];
    };
    struct Injection {
        int32_t slot;
        int32_t field_index; // cell * n_vel + vel
    };

    void build_stencils() {
        const int nc = g_->n_cells();
        const int nv = g_->n_vel();
        stencils_.resize(static_cast<std::size_t>(nv));
        if (opt_.disable_transport) return;
        for (int j = 0; j < nv; ++j) {
            const Vec2 u = g_->velocities[static_cast<std::size_t>(j)];
            VelStencil& st = stencils_[static_cast<std::size_t>(j)];
            for (int a = 0; a < g_->dim; ++a) {
                const double comp = a == 0 ? u.x : u.y;
                if (comp == 0.0) continue;
                AxisStencil ax;
                ax.rate = std::abs(comp) / (a == 0 ? g_->dx : g_->dy);
                if (opt_.uniform_dissipation > 0.0) {
                    const double cfl_ax = ax.rate * plan_.dt_sub;
                    const double budget =
                        opt_.uniform_dissipation * plan_.dt_sub / tree_.horizon;
                    ax.dcoef = std::max(0.0, 0.5 * (budget - cfl_ax * (1.0 - cfl_ax)));
                    has_dissipation_ = has_dissipation_ || ax.dcoef > 0.0;
                }
                ax.upwind.resize(static_cast<std::size_t>(nc));
                ax.downwind.resize(static_cast<std::size_t>(nc));
                ax.ghost_slot.assign(static_cast<std::size_t>(nc), -1);
                const int updir = comp > 0 ? -1 : 1;
                for (int c = 0; c < nc; ++c) {
                    ax.upwind[static_cast<std::size_t>(c)] =
                        static_cast<int32_t>(g_->neighbor(c, a, updir));
                    ax.downwind[static_cast<std::size_t>(c)] =
                        static_cast<int32_t>(g_->neighbor(c, a, -updir));
                    if (ax.upwind[static_cast<std::size_t>(c)] < 0) {
                        const int slot = find_inflow_slot(c, a, updir, j);
                        ax.ghost_slot[static_cast<std::size_t>(c)] = static_cast<int32_t>(slot);
                        injections_.push_back(
                            {static_cast<int32_t>(slot), static_cast<int32_t>(c * nv + j)});
                    }
                }
                st.axis[st.n_axes++] = std::move(ax);
            }
        }
        std::sort(injections_.begin(), injections_.end(),
                  [](const Injection& a, const Injection& b) { return a.slot < b.slot; });
    }

    int find_inflow_slot(int cell, int axis, int dir, int vel) const {
        for (std::size_t fi = 0; fi < g_->faces.size(); ++fi) {
            const GeomFace& f = g_->faces[fi];
            const double nd = axis == 0 ? f.normal.x : f.normal.y;
            if (f.cell == cell && f.axis == axis && nd == static_cast<double>(dir)) {
                const int bid = static_cast<int>(fi) * g_->n_vel() + vel;
                const int slot = g_->inflow_slot[static_cast<std::size_t>(bid)];
                if (slot < 0)
                    throw ShapeError("step operator: upwind ghost face is not inflow");
                return slot;
            }
        }
        throw ShapeError("step operator: missing boundary face for ghost cell");
    }

    const Geometry* g_;
    ScenarioTree tree_;
    CoefficientSet coeffs_;
    LevelOperatorOptions opt_;
    SubstepPlan plan_;
    std::vector<VelStencil> stencils_;
    std::vector<Injection> injections_;
    bool has_dissipation_ = false;
};

// ---------------------------------------------------------------------------
// Dense materialization (small problems: oracles, toy Gramians, reports).

struct DenseStepMatrices {
    std::vector<std::vector<double>> M; // field_dim x field_dim
    std::vector<std::vector<double>> B; // field_dim x (substeps * n_inflow) boundary response
    std::vector<double> N_diag;         // a3 slice
    std::vector<double> F_dt;           // dt * f slice
};

inline DenseStepMatrices dense_step_matrices(const LevelOperators& ops, int level,
                                             std::size_t node) {
    const Geometry& g = ops.geometry();
    const int F = ops.field_dim();
    if (F > 4096) throw ResourceLimitError("dense_step_matrices: field dimension too large");
    const int nb = ops.plan().substeps * g.n_inflow();
    DenseStepMatrices out;
    out.M.assign(static_cast<std::size_t>(F), std::vector<double>(static_cast<std::size_t>(F), 0.0));
    out.B.assign(static_cast<std::size_t>(F), std::vector<double>(static_cast<std::size_t>(nb), 0.0));
    std::vector<double> e(static_cast<std::size_t>(F), 0.0), col(static_cast<std::size_t>(F));
    for (int i = 0; i < F; ++i) {
        e[static_cast<std::size_t>(i)] = 1.0;
        ops.apply_deterministic(level, node, e.data(), col.data(), nullptr, nullptr);
        for (int r = 0; r < F; ++r) out.M[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] = col[static_cast<std::size_t>(r)];
        e[static_cast<std::size_t>(i)] = 0.0;
    }
    std::vector<double> zero(static_cast<std::size_t>(F), 0.0);
    std::vector<double> base(static_cast<std::size_t>(F));
    ops.apply_deterministic(level, node, zero.data(), base.data(), nullptr, nullptr);
    for (int i = 0; i < F; ++i)
        for (int r = 0; r < F; ++r)
            out.M[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] -= base[static_cast<std::size_t>(r)];
    out.F_dt = base;

    std::vector<double> u(static_cast<std::size_t>(nb), 0.0);
    for (int s = 0; s < nb; ++s) {
        u[static_cast<std::size_t>(s)] = 1.0;
        ops.apply_deterministic(level, node, zero.data(), col.data(), u.data(), nullptr);
        for (int r = 0; r < F; ++r)
            out.B[static_cast<std::size_t>(r)][static_cast<std::size_t>(s)] =
                col[static_cast<std::size_t>(r)] - base[static_cast<std::size_t>(r)];
        u[static_cast<std::size_t>(s)] = 0.0;
    }

    out.N_diag.assign(static_cast<std::size_t>(F), 0.0);
    const double* a3 = ops.coefficients().a3.slice(level, node);
    if (a3) out.N_diag.assign(a3, a3 + F);
    return out;
}

} // namespace stclab
