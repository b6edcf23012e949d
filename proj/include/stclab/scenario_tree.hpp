// Binomial discretization of one-dimensional Brownian motion.
//
// Level k holds 2^k nodes; bit i of a node id records the sign of increment
// i+1, so the two children of node n at level k are n (down) and n + 2^k
// (up), each with probability 1/2 and increment -/+ sqrt(dt). Conditional
// expectations, the stochastic integral, and martingale representation are
// exact finite sums on this tree, which is what makes the duality tests
// machine-precision instead of Monte-Carlo-noisy.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stclab/errors.hpp"

namespace stclab {

struct ScenarioTree {
    double horizon = 1.0;
    int n_steps = 1;
    double dt = 1.0;
    double sqrt_dt = 1.0;

    int n_levels() const { return n_steps + 1; }
    std::size_t nodes_at(int level) const { return std::size_t{1} << level; }
    std::size_t n_leaves() const { return nodes_at(n_steps); }
    double prob(int level) const { return std::ldexp(1.0, -level); }
    double time_at(int level) const { return dt * level; }

    /// Child of `node` (level k) with increment sign `up`.
    std::size_t child(int level, std::size_t node, bool up) const {
        return up ? node + (std::size_t{1} << level) : node;
    }
    /// Increment recorded on the step from `level` to `level`+1 into a
    /// level+1 node id.
    double increment(int level, std::size_t child_id) const {
        return ((child_id >> level) & 1u) ? sqrt_dt : -sqrt_dt;
    }
    /// Ancestor of a node id at a shallower level (low bits).
    static std::size_t ancestor(std::size_t node, int level) {
        return node & ((std::size_t{1} << level) - 1);
    }
};

inline constexpr int kMaxTreeSteps = 24; // 2^24 leaves

inline ScenarioTree build_tree(double horizon, int n_steps) {
    if (!(horizon > 0.0)) throw ConfigError("build_tree: horizon must be positive");
    if (n_steps < 1 || n_steps > kMaxTreeSteps)
        throw ResourceLimitError("build_tree: n_steps must lie in [1, " +
                                 std::to_string(kMaxTreeSteps) + "], got " +
                                 std::to_string(n_steps));
    ScenarioTree t;
    t.horizon = horizon;
    t.n_steps = n_steps;
    t.dt = horizon / n_steps;
    t.sqrt_dt = std::sqrt(t.dt);
    return t;
}

// ---------------------------------------------------------------------------
// Adapted processes

/// Scalar adapted process: one value per node, levels 0..top.
struct AdaptedScalar {
    std::vector<std::vector<double>> levels;

    int top_level() const { return static_cast<int>(levels.size()) - 1; }
    double& at(int level, std::size_t node) { return levels[static_cast<std::size_t>(level)][node]; }
    double at(int level, std::size_t node) const { return levels[static_cast<std::size_t>(level)][node]; }
};

inline AdaptedScalar make_adapted_scalar(int n_levels, double value = 0.0) {
    AdaptedScalar a;
    a.levels.resize(static_cast<std::size_t>(n_levels));
    for (int k = 0; k < n_levels; ++k)
        a.levels[static_cast<std::size_t>(k)].assign(std::size_t{1} << k, value);
    return a;
}

/// Field-valued adapted process: per level, values laid out [node][component]
/// with a fixed component stride (grid cells x velocities).
struct AdaptedField {
    std::vector<std::vector<double>> levels;
    int dim = 0; // components per node

    int top_level() const { return static_cast<int>(levels.size()) - 1; }
    double* slice(int level, std::size_t node) {
        return levels[static_cast<std::size_t>(level)].data() + node * static_cast<std::size_t>(dim);
    }
    const double* slice(int level, std::size_t node) const {
        return levels[static_cast<std::size_t>(level)].data() + node * static_cast<std::size_t>(dim);
    }
};

inline AdaptedField make_adapted_field(int n_levels, int dim) {
    constexpr std::size_t kMaxFieldBytes = std::size_t{6} * 1024 * 1024 * 1024;
    std::size_t total = 0;
    for (int k = 0; k < n_levels; ++k) total += (std::size_t{1} << k) * static_cast<std::size_t>(dim);
    if (total * sizeof(double) > kMaxFieldBytes)
        throw ResourceLimitError("make_adapted_field: requested field exceeds the memory guard");
    AdaptedField f;
    f.dim = dim;
    f.levels.resize(static_cast<std::size_t>(n_levels));
    for (int k = 0; k < n_levels; ++k)
        f.levels[static_cast<std::size_t>(k)].assign((std::size_t{1} << k) * static_cast<std::size_t>(dim), 0.0);
    return f;
}

// ---------------------------------------------------------------------------
// Conditional expectation, stochastic integral, martingale representation

/// One-level conditional expectation: average of the two children.
inline std::vector<double> conditional_expectation(const std::vector<double>& child_level,
                                                   int child_level_index) {
    if (child_level_index < 1) throw ShapeError("conditional_expectation: need level >= 1");
    const std::size_t parents = std::size_t{1} << (child_level_index - 1);
    if (child_level.size() != 2 * parents)
        throw ShapeError("conditional_expectation: level size mismatch");
    std::vector<double> out(parents);
    for (std::size_t n = 0; n < parents; ++n)
        out[n] = 0.5 * (child_level[n] + child_level[n + parents]);
    return out;
}

/// Probability-weighted mean of a level.
inline double level_mean(const std::vector<double>& level) {
    double s = 0.0;
    for (double v : level) s += v;
    return s / static_cast<double>(level.size());
}

/// Discrete stochastic integral sum_k rho_k dB_{k+1}; integrand on levels
/// 0..n_steps-1, result on the terminal level.
inline std::vector<double> ito_integral(const AdaptedScalar& rho, const ScenarioTree& tree) {
    if (rho.top_level() + 1 < tree.n_steps)
        throw ShapeError("ito_integral: integrand must cover levels 0..n_steps-1");
    std::vector<double> cur(1, 0.0);
    for (int k = 0; k < tree.n_steps; ++k) {
        const std::size_t nodes = tree.nodes_at(k);
        std::vector<double> next(2 * nodes);
        for (std::size_t n = 0; n < nodes; ++n) {
            const double r = rho.at(k, n);
            next[n] = cur[n] - r * tree.sqrt_dt;
            next[n + nodes] = cur[n] + r * tree.sqrt_dt;
        }
        cur.swap(next);
    }
    return cur;
}

struct MartingaleRepresentation {
    double x0 = 0.0;     // deterministic part
    AdaptedScalar rho;   // integrand on levels 0..n_steps-1
};

/// Exact representation xi = x0 + sum_k rho_k dB_{k+1} of a terminal
/// scalar variable; rho_k(n) = E_k[xi dB_{k+1}] / dt after projecting xi
/// down level by level.
inline MartingaleRepresentation martingale_representation(const std::vector<double>& xi,
                                                          const ScenarioTree& tree) {
    if (xi.size() != tree.n_leaves())
        throw ShapeError("martingale_representation: terminal size mismatch");
    MartingaleRepresentation rep;
    rep.rho = make_adapted_scalar(tree.n_steps);
    std::vector<double> cur = xi;
    for (int k = tree.n_steps - 1; k >= 0; --k) {
        const std::size_t nodes = tree.nodes_at(k);
        std::vector<double> parent(nodes);
        for (std::size_t n = 0; n < nodes; ++n) {
            const double down = cur[n];
            const double up = cur[n + nodes];
            parent[n] = 0.5 * (down + up);
            rep.rho.at(k, n) = (up - down) / (2.0 * tree.sqrt_dt);
        }
        cur.swap(parent);
    }
    rep.x0 = cur[0];
    return rep;
}

// ---------------------------------------------------------------------------
// The dyadic oscillating integrand and its stochastic integral

/// +1 on [(1-2^{-2i})T, (1-2^{-2i-1})T) for i = 0, 1, ..., otherwise -1.
/// The switch points (1-2^{-m})T accumulate at T, so any finite resolution
/// misses all but finitely many of them.
inline double dyadic_oscillation_eta(double t, double horizon) {
    if (!(t >= 0.0 && t < horizon))
        throw ConfigError("dyadic_oscillation_eta: t must lie in [0, T)");
    double s = (horizon - t) / horizon; // in (0, 1]
    double a = 1.0;
    int m = 0;
    while (s <= 0.5 * a) {
        a *= 0.5;
        ++m;
    }
    return (m % 2 == 0) ? 1.0 : -1.0;
}

/// Exact-integer version of the schedule at grid index k of n (t = kT/n);
/// immune to rounding of T/n at the dyadic switch points.
inline double dyadic_oscillation_eta_at(int k, int n) {
    if (k < 0 || k >= n) throw ConfigError("dyadic_oscillation_eta_at: index out of range");
    const std::uint64_t rem = static_cast<std::uint64_t>(n - k); // s = rem / n in (0, 1]
    int m = 0;
    while ((rem << (m + 1)) <= static_cast<std::uint64_t>(n)) ++m;
    return (m % 2 == 0) ? 1.0 : -1.0;
}

/// Terminal variable xi = int eta dB with eta sampled at the left endpoint
/// of each time cell.
inline std::vector<double> dyadic_oscillation_xi(const ScenarioTree& tree) {
    AdaptedScalar rho = make_adapted_scalar(tree.n_steps);
    for (int k = 0; k < tree.n_steps; ++k) {
        const double v = dyadic_oscillation_eta_at(k, tree.n_steps);
        for (std::size_t n = 0; n < tree.nodes_at(k); ++n) rho.at(k, n) = v;
    }
    return ito_integral(rho, tree);
}

/// Number of sign changes of eta sampled on the left-endpoint grid; the
/// closed-form count of switch points resolvable at resolution dt.
inline int dyadic_sign_change_count(const ScenarioTree& tree) {
    int count = 0;
    double prev = dyadic_oscillation_eta_at(0, tree.n_steps);
    for (int k = 1; k < tree.n_steps; ++k) {
        const double cur = dyadic_oscillation_eta_at(k, tree.n_steps);
        if (cur != prev) ++count;
        prev = cur;
    }
    return count;
}

} // namespace stclab
