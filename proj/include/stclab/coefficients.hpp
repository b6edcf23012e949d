// Coefficient storage for the forward and backward systems.
//
// Coefficients are sampled once, at cell centers and left endpoints of the
// time levels, either from user functions, constants, or a seeded counter
// RNG. Deterministic coefficients store one slice per level; adapted ones
// store one slice per node. Realized sup-norms feed the well-posedness
// constants r1 and r2.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stclab/errors.hpp"
#include "stclab/geometry.hpp"
#include "stclab/rng.hpp"
#include "stclab/scenario_tree.hpp"

namespace stclab {

struct SampledProcess {
    bool adapted = false;
    bool zero = true;
    int stride = 0; // components per node slice
    double sup = 0.0;
    std::vector<std::vector<double>> data; // per level

    const double* slice(int level, std::size_t node) const {
        if (zero) return nullptr;
        const auto& lv = data[static_cast<std::size_t>(level)];
        return lv.data() + (adapted ? node * static_cast<std::size_t>(stride) : 0);
    }
};

using ScalarCoeffFn = std::function<double(double t, Vec2 x, Vec2 U)>;
using KernelCoeffFn = std::function<double(double t, Vec2 x, Vec2 U, Vec2 V)>;

namespace detail {

inline void refresh_sup(SampledProcess& p) {
    p.sup = 0.0;
    bool all_zero = true;
    for (const auto& lv : p.data)
        for (double v : lv) {
            if (v != 0.0) all_zero = false;
            p.sup = std::max(p.sup, std::abs(v));
        }
    if (all_zero) {
        p.zero = true;
        p.data.clear();
    }
}

} // namespace detail

inline SampledProcess zero_process() { return SampledProcess{}; }

/// Sample a scalar coefficient a(t, x, U) on levels 0..n_steps-1.
inline SampledProcess sample_scalar(const Geometry& g, const ScenarioTree& tree,
                                    const ScalarCoeffFn& fn) {
    SampledProcess p;
    p.adapted = false;
    p.zero = false;
    p.stride = g.field_dim();
    p.data.resize(static_cast<std::size_t>(tree.n_steps));
    for (int k = 0; k < tree.n_steps; ++k) {
        auto& lv = p.data[static_cast<std::size_t>(k)];
        lv.resize(static_cast<std::size_t>(p.stride));
        const double t = tree.time_at(k);
        for (int c = 0; c < g.n_cells(); ++c)
            for (int j = 0; j < g.n_vel(); ++j)
                lv[static_cast<std::size_t>(g.field_index(c, j))] =
                    fn(t, g.cell_centers[static_cast<std::size_t>(c)],
                       g.velocities[static_cast<std::size_t>(j)]);
    }
    detail::refresh_sup(p);
    return p;
}

/// Sample a velocity kernel a(t, x, U, V); slice layout [cell][U][V].
inline SampledProcess sample_kernel(const Geometry& g, const ScenarioTree& tree,
                                    const KernelCoeffFn& fn) {
    SampledProcess p;
    p.adapted = false;
    p.zero = false;
    const int nv = g.n_vel();
    p.stride = g.n_cells() * nv * nv;
    p.data.resize(static_cast<std::size_t>(tree.n_steps));
    for (int k = 0; k < tree.n_steps; ++k) {
        auto& lv = p.data[static_cast<std::size_t>(k)];
        lv.resize(static_cast<std::size_t>(p.stride));
        const double t = tree.time_at(k);
        for (int c = 0; c < g.n_cells(); ++c)
            for (int ju = 0; ju < nv; ++ju)
                for (int jv = 0; jv < nv; ++jv)
                    lv[static_cast<std::size_t>((c * nv + ju) * nv + jv)] =
                        fn(t, g.cell_centers[static_cast<std::size_t>(c)],
                           g.velocities[static_cast<std::size_t>(ju)],
                           g.velocities[static_cast<std::size_t>(jv)]);
    }
    detail::refresh_sup(p);
    return p;
}

inline SampledProcess constant_scalar(const Geometry& g, const ScenarioTree& tree, double value) {
    if (value == 0.0) return zero_process();
    return sample_scalar(g, tree, [value](double, Vec2, Vec2) { return value; });
}

inline SampledProcess constant_kernel(const Geometry& g, const ScenarioTree& tree, double value) {
    if (value == 0.0) return zero_process();
    return sample_kernel(g, tree, [value](double, Vec2, Vec2, Vec2) { return value; });
}

/// Uniform samples in [-bound, bound], adapted (per node) or deterministic.
inline SampledProcess random_scalar(const Geometry& g, const ScenarioTree& tree, CounterRng rng,
                                    double bound, bool adapted) {
    if (bound == 0.0) return zero_process();
    SampledProcess p;
    p.adapted = adapted;
    p.zero = false;
    p.stride = g.field_dim();
    p.data.resize(static_cast<std::size_t>(tree.n_steps));
    for (int k = 0; k < tree.n_steps; ++k) {
        const std::size_t nodes = adapted ? tree.nodes_at(k) : 1;
        auto& lv = p.data[static_cast<std::size_t>(k)];
        lv.resize(nodes * static_cast<std::size_t>(p.stride));
        for (double& v : lv) v = rng.bounded(bound);
    }
    detail::refresh_sup(p);
    return p;
}

inline SampledProcess random_kernel(const Geometry& g, const ScenarioTree& tree, CounterRng rng,
                                    double bound, bool adapted) {
    if (bound == 0.0) return zero_process();
    SampledProcess p;
    p.adapted = adapted;
    p.zero = false;
    const int nv = g.n_vel();
    p.stride = g.n_cells() * nv * nv;
    p.data.resize(static_cast<std::size_t>(tree.n_steps));
    for (int k = 0; k < tree.n_steps; ++k) {
        const std::size_t nodes = adapted ? tree.nodes_at(k) : 1;
        auto& lv = p.data[static_cast<std::size_t>(k)];
        lv.resize(nodes * static_cast<std::size_t>(p.stride));
        for (double& v : lv) v = rng.bounded(bound);
    }
    detail::refresh_sup(p);
    return p;
}

// ---------------------------------------------------------------------------

struct CoefficientSet {
    SampledProcess a1; // reaction, drift side
    SampledProcess a2; // velocity kernel, drift side
    SampledProcess a3; // reaction, diffusion side
    SampledProcess f;  // source

    // Declared sup-norm bounds; negative means "not declared".
    double a1_bound = -1.0;
    double a2_bound = -1.0;
    double a3_bound = -1.0;

    /// Well-posedness constant of the forward energy estimate.
    double r1() const { return a1.sup * a1.sup + a2.sup + a3.sup + 1.0; }

    void validate() const {
        auto check = [](const SampledProcess& p, double bound, const char* name) {
            if (bound >= 0.0 && p.sup > bound * (1.0 + 1e-12))
                throw ConfigError(std::string("CoefficientSet: samples of ") + name +
                                  " exceed the declared bound");
        };
        check(a1, a1_bound, "a1");
        check(a2, a2_bound, "a2");
        check(a3, a3_bound, "a3");
    }
};

inline CoefficientSet zero_coefficients() { return CoefficientSet{}; }

/// Coefficients with all entries uniform in [-bound_i, bound_i].
inline CoefficientSet random_coefficients(const Geometry& g, const ScenarioTree& tree,
                                          const CounterRng& rng, double a1_bound, double a2_bound,
                                          double a3_bound, bool adapted) {
    CoefficientSet c;
    c.a1 = random_scalar(g, tree, rng.stream("a1"), a1_bound, adapted);
    c.a2 = random_kernel(g, tree, rng.stream("a2"), a2_bound, adapted);
    c.a3 = random_scalar(g, tree, rng.stream("a3"), a3_bound, adapted);
    c.a1_bound = a1_bound;
    c.a2_bound = a2_bound;
    c.a3_bound = a3_bound;
    return c;
}

// ---------------------------------------------------------------------------
// Dual-side coefficients. The discrete backward recursion is the exact
// transpose of the forward step maps; these records exist so reports can
// state the continuous-coefficient correspondence (b1 = -a1, b2 with swapped
// velocity arguments = -a2, b3 = -a3, b4 = 0) and so the Carleman threshold
// lambda_1 has its sup-norm inputs.

struct BackwardCoefficientSet {
    SampledProcess b1;
    SampledProcess b2; // kernel, arguments already swapped: slice [cell][V][U]
    SampledProcess b3;
    SampledProcess b4;

    double b1_sup() const { return b1.sup; }
    double b2_sup() const { return b2.sup; }
    double b3_sup() const { return b3.sup; }
    double b4_sup() const { return b4.sup; }

    /// Well-posedness constant of the backward energy estimate.
    double r2() const {
        auto p4 = [](double s) { return s * s * s * s; };
        return p4(b1.sup) + p4(b3.sup) + p4(b4.sup) + b2.sup + 1.0;
    }
};

inline SampledProcess negate_process(const SampledProcess& p) {
    SampledProcess q = p;
    for (auto& lv : q.data)
        for (double& v : lv) v = -v;
    return q;
}

/// Negate a kernel and swap its two velocity arguments.
inline SampledProcess negate_swap_kernel(const SampledProcess& p, int n_cells, int n_vel) {
    SampledProcess q = p;
    for (std::size_t L = 0; L < p.data.size(); ++L) {
        const auto& src = p.data[L];
        auto& dst = q.data[L];
        const std::size_t slices = src.size() / static_cast<std::size_t>(p.stride);
        for (std::size_t s = 0; s < slices; ++s) {
            const double* in = src.data() + s * static_cast<std::size_t>(p.stride);
            double* out = dst.data() + s * static_cast<std::size_t>(p.stride);
            for (int c = 0; c < n_cells; ++c)
                for (int ju = 0; ju < n_vel; ++ju)
                    for (int jv = 0; jv < n_vel; ++jv)
                        out[(c * n_vel + ju) * n_vel + jv] = -in[(c * n_vel + jv) * n_vel + ju];
        }
    }
    return q;
}

inline BackwardCoefficientSet adjoint_from_forward(const CoefficientSet& c, const Geometry& g) {
    BackwardCoefficientSet b;
    b.b1 = negate_process(c.a1);
    b.b2 = negate_swap_kernel(c.a2, g.n_cells(), g.n_vel());
    b.b3 = negate_process(c.a3);
    b.b4 = zero_process();
    return b;
}

} // namespace stclab
