// Independent reference implementations used to pin expected values.
// Everything here is written directly from the defining formulas (dense
// loops, explicit enumerations) and stays independent of the library's
// solver code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stclab/coefficients.hpp"
#include "stclab/geometry.hpp"
#include "stclab/scenario_tree.hpp"

namespace oracles {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(int n, int m) { return Mat(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(m), 0.0)); }

inline Mat identity(int n) {
    Mat I = zeros(n, n);
    for (int i = 0; i < n; ++i) I[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    return I;
}

inline Mat matmul(const Mat& A, const Mat& B) {
    const int n = static_cast<int>(A.size());
    const int k = static_cast<int>(B.size());
    const int m = static_cast<int>(B[0].size());
    Mat C = zeros(n, m);
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < k; ++l) {
            const double a = A[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)];
            if (a == 0.0) continue;
            for (int j = 0; j < m; ++j)
                C[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
                    a * B[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
        }
    return C;
}

inline std::vector<double> matvec(const Mat& A, const std::vector<double>& x) {
    std::vector<double> y(A.size(), 0.0);
    for (std::size_t i = 0; i < A.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) y[i] += A[i][j] * x[j];
    return y;
}

/// Dense assembly of one explicit upwind substep matrix, entry by entry
/// from the scheme definition (not by probing the library operator).
/// Boundary ghosts are zero; the kernel term applies the velocity
/// quadrature row by row.
inline Mat dense_substep_matrix(const stclab::Geometry& g, double dt_sub, const double* a1_slice,
                                const double* a2_slice) {
    const int nc = g.n_cells();
    const int nv = g.n_vel();
    const int F = nc * nv;
    Mat A = identity(F);
    for (int c = 0; c < nc; ++c) {
        for (int j = 0; j < nv; ++j) {
            const int row = c * nv + j;
            const stclab::Vec2 u = g.velocities[static_cast<std::size_t>(j)];
            for (int axis = 0; axis < g.dim; ++axis) {
                const double comp = axis == 0 ? u.x : u.y;
                if (comp == 0.0) continue;
                const double rate = std::abs(comp) / (axis == 0 ? g.dx : g.dy);
                const int updir = comp > 0 ? -1 : 1;
                const int up = g.neighbor(c, axis, updir);
                A[static_cast<std::size_t>(row)][static_cast<std::size_t>(row)] -= dt_sub * rate;
                if (up >= 0)
                    A[static_cast<std::size_t>(row)][static_cast<std::size_t>(up * nv + j)] +=
                        dt_sub * rate;
            }
            if (a1_slice)
                A[static_cast<std::size_t>(row)][static_cast<std::size_t>(row)] +=
                    dt_sub * a1_slice[row];
            if (a2_slice)
                for (int l = 0; l < nv; ++l)
                    A[static_cast<std::size_t>(row)][static_cast<std::size_t>(c * nv + l)] +=
                        dt_sub * g.vel_weights[static_cast<std::size_t>(l)] *
                        a2_slice[(c * nv + j) * nv + l];
        }
    }
    return A;
}

/// Dense level map M = A^m.
inline Mat dense_level_matrix(const stclab::Geometry& g, double dt, int substeps,
                              const double* a1_slice, const double* a2_slice) {
    Mat A = dense_substep_matrix(g, dt / substeps, a1_slice, a2_slice);
    Mat M = identity(g.field_dim());
    for (int s = 0; s < substeps; ++s) M = matmul(A, M);
    return M;
}

/// Transpose with respect to the weighted inner product
/// <a,b> = sum cell_measure w_j a b:  A^T_w = W^{-1} A^t W.
inline Mat weighted_transpose(const Mat& A, const stclab::Geometry& g) {
    const int nc = g.n_cells();
    const int nv = g.n_vel();
    const int F = nc * nv;
    Mat T = zeros(F, F);
    for (int r = 0; r < F; ++r)
        for (int c = 0; c < F; ++c) {
            const double wr = g.vel_weights[static_cast<std::size_t>(r % nv)];
            const double wc = g.vel_weights[static_cast<std::size_t>(c % nv)];
            T[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] =
                A[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] * wr / wc;
        }
    return T;
}

/// Probability-weighted mean at a level by explicit leaf enumeration.
inline std::vector<double> leaf_mean_at_level(const stclab::AdaptedField& field,
                                              const stclab::ScenarioTree& tree, int level) {
    const std::size_t F = static_cast<std::size_t>(field.dim);
    std::vector<double> mean(F, 0.0);
    const double p = 1.0 / static_cast<double>(tree.n_leaves());
    for (std::size_t leaf = 0; leaf < tree.n_leaves(); ++leaf) {
        const std::size_t anc = stclab::ScenarioTree::ancestor(leaf, level);
        const double* s = field.slice(level, anc);
        for (std::size_t i = 0; i < F; ++i) mean[i] += p * s[i];
    }
    return mean;
}

/// Brute-force weighted inflow norm: explicit loop over every level, node,
/// and inflow face straight from the definition.
inline double naive_inflow_norm(const stclab::BoundaryTrace& trace, const stclab::Geometry& g) {
    double total = 0.0;
    for (std::size_t k = 0; k < trace.levels.size(); ++k) {
        const std::size_t nodes = std::size_t{1} << k;
        for (std::size_t n = 0; n < nodes; ++n) {
            for (int s = 0; s < trace.n_inflow; ++s) {
                const stclab::BoundaryFace& b = g.boundary[static_cast<std::size_t>(
                    g.inflow_faces[static_cast<std::size_t>(s)])];
                const double h = trace.levels[k][n * static_cast<std::size_t>(trace.n_inflow) +
                                                static_cast<std::size_t>(s)];
                total += (1.0 / static_cast<double>(nodes)) * trace.dt * (-b.sign) * h * h *
                         b.face_measure * g.vel_weights[static_cast<std::size_t>(b.vel)];
            }
        }
    }
    return std::sqrt(total);
}

/// Jacobi eigenvalue iteration for small symmetric matrices.
inline std::vector<double> symmetric_eigenvalues(Mat A) {
    const int n = static_cast<int>(A.size());
    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (off < 1e-30) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = A[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
                if (std::abs(apq) < 1e-300) continue;
                const double app = A[static_cast<std::size_t>(p)][static_cast<std::size_t>(p)];
                const double aqq = A[static_cast<std::size_t>(q)][static_cast<std::size_t>(q)];
                const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int k = 0; k < n; ++k) {
                    const double akp = A[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];
                    const double akq = A[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)];
                    A[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] = c * akp - s * akq;
                    A[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = A[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)];
                    const double aqk = A[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)];
                    A[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)] = c * apk - s * aqk;
                    A[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)] = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = A[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    std::sort(ev.begin(), ev.end());
    return ev;
}

} // namespace oracles
