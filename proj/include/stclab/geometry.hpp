// Spatial domain, velocity sphere, and the inflow/outflow boundary split.
//
// Supported domains: an interval (x_lo, x_hi) containing the origin (dim 1)
// and a disk of radius r0 centered at the origin (dim 2). The disk is
// discretized on a Cartesian grid; its boundary is the staircase boundary of
// the retained cells, with faces carrying axis-aligned normals. Velocities
// are unit vectors with quadrature weights summing to the measure of the
// unit sphere (2 for dim 1, 2*pi for dim 2).
//
// A BoundaryFace is a (geometric face, velocity) pair. It is inflow when
// U . nu <= 0; tangential pairs count as inflow but carry zero weight in the
// boundary norm, so the tie-break does not affect any norm.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "stclab/errors.hpp"

namespace stclab {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double norm2(const Vec2& a) { return std::sqrt(dot(a, a)); }

struct GeometrySpec {
    int dim = 1;
    double x_lo = -0.5;  // dim 1
    double x_hi = 0.5;   // dim 1
    double radius = 1.0; // dim 2
    int n_cells = 8;     // cells per axis
    int n_vel = 2;       // velocity count (dim 2; dim 1 always has {-1,+1})
};

struct GeomFace {
    int cell = -1;       // adjacent interior cell (active index)
    Vec2 pos;            // face center
    Vec2 normal;         // outward unit normal (axis-aligned)
    double measure = 1.0;
    int axis = 0;        // 0 = x, 1 = y
};

struct BoundaryFace {
    int id = -1;        // index into Geometry::boundary
    int geom_face = -1; // index into Geometry::faces
    int cell = -1;
    Vec2 pos;
    Vec2 normal;
    int vel = -1;
    double sign = 0.0; // U . nu
    bool inflow = false;
    double face_measure = 1.0;
};

class Geometry {
  public:
    int dim = 1;
    double x_lo = 0.0, x_hi = 0.0; // dim 1
    double radius = 0.0;           // dim 2
    int n_cells_axis = 0;
    double dx = 0.0, dy = 0.0;
    double cell_measure = 0.0;
    double domain_measure = 0.0; // measure of the discrete domain
    double R = 0.0;              // max |x| over the domain closure

    std::vector<Vec2> cell_centers;       // active cells
    std::vector<int> grid_to_cell;        // dense (i + j*n) -> active index or -1
    std::vector<Vec2> velocities;
    std::vector<double> vel_weights;
    std::vector<GeomFace> faces;          // geometric boundary faces
    std::vector<BoundaryFace> boundary;   // faces x velocities
    std::vector<int> inflow_slot;         // boundary id -> inflow slot or -1
    std::vector<int> inflow_faces;        // inflow slot -> boundary id

    int n_cells() const { return static_cast<int>(cell_centers.size()); }
    int n_vel() const { return static_cast<int>(velocities.size()); }
    int field_dim() const { return n_cells() * n_vel(); }
    int n_inflow() const { return static_cast<int>(inflow_faces.size()); }

    int field_index(int cell, int vel) const { return cell * n_vel() + vel; }

    /// Neighbor of `cell` one step along `axis` in direction `dir` (+1/-1);
    /// -1 when the neighbor lies outside the domain.
    int neighbor(int cell, int axis, int dir) const {
        if (dim == 1) {
            int i = cell + dir;
            return (i >= 0 && i < n_cells_axis) ? i : -1;
        }
        int gi = grid_index_[static_cast<std::size_t>(cell)];
        int i = gi % n_cells_axis;
        int j = gi / n_cells_axis;
        (axis == 0 ? i : j) += dir;
        if (i < 0 || i >= n_cells_axis || j < 0 || j >= n_cells_axis) return -1;
        return grid_to_cell[static_cast<std::size_t>(i + j * n_cells_axis)];
    }

    std::vector<int> grid_index_; // active index -> dense grid index
};

/// Minimal time horizon for exact controllability of the transport system.
inline double min_control_time(const Geometry& g) { return 2.0 * g.R; }

namespace detail {

inline void build_faces_and_boundary(Geometry& g) {
    g.faces.clear();
    if (g.dim == 1) {
        GeomFace lo;
        lo.cell = 0;
        lo.pos = {g.x_lo, 0.0};
        lo.normal = {-1.0, 0.0};
        lo.measure = 1.0;
        GeomFace hi;
        hi.cell = g.n_cells_axis - 1;
        hi.pos = {g.x_hi, 0.0};
        hi.normal = {1.0, 0.0};
        hi.measure = 1.0;
        g.faces = {lo, hi};
    } else {
        const int n = g.n_cells_axis;
        const std::array<std::array<int, 2>, 4> dirs = {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
        for (int c = 0; c < g.n_cells(); ++c) {
            for (const auto& d : dirs) {
                const int axis = d[1] != 0 ? 1 : 0;
                const int sgn = d[0] + d[1];
                int gi = g.grid_index_[static_cast<std::size_t>(c)];
                int i = gi % n + d[0];
                int j = gi / n + d[1];
                bool outside = i < 0 || i >= n || j < 0 || j >= n ||
                               g.grid_to_cell[static_cast<std::size_t>(i + j * n)] < 0;
                if (!outside) continue;
                GeomFace f;
                f.cell = c;
                f.axis = axis;
                f.measure = axis == 0 ? g.dy : g.dx;
                f.normal = {static_cast<double>(d[0]), static_cast<double>(d[1])};
                const Vec2 ctr = g.cell_centers[static_cast<std::size_t>(c)];
                if (axis == 0)
                    f.pos = {ctr.x + 0.5 * g.dx * sgn, ctr.y};
                else
                    f.pos = {ctr.x, ctr.y + 0.5 * g.dy * sgn};
                g.faces.push_back(f);
            }
        }
    }

    g.boundary.clear();
    g.inflow_slot.clear();
    g.inflow_faces.clear();
    int id = 0;
    for (int fi = 0; fi < static_cast<int>(g.faces.size()); ++fi) {
        const GeomFace& f = g.faces[static_cast<std::size_t>(fi)];
        for (int j = 0; j < g.n_vel(); ++j) {
            BoundaryFace b;
            b.id = id++;
            b.geom_face = fi;
            b.cell = f.cell;
            b.pos = f.pos;
            b.normal = f.normal;
            b.vel = j;
            b.sign = dot(g.velocities[static_cast<std::size_t>(j)], f.normal);
            b.inflow = b.sign <= 0.0;
            b.face_measure = f.measure;
            if (b.inflow) {
                g.inflow_slot.push_back(static_cast<int>(g.inflow_faces.size()));
                g.inflow_faces.push_back(b.id);
            } else {
                g.inflow_slot.push_back(-1);
            }
            g.boundary.push_back(b);
        }
    }
}

} // namespace detail

inline Geometry build_geometry(const GeometrySpec& spec) {
    if (spec.dim != 1 && spec.dim != 2)
        throw ConfigError("build_geometry: unsupported dimension " + std::to_string(spec.dim) +
                          " (supported: 1, 2)");
    if (spec.n_cells < 2) throw ConfigError("build_geometry: resolution must be >= 2");

    Geometry g;
    g.dim = spec.dim;
    g.n_cells_axis = spec.n_cells;

    if (spec.dim == 1) {
        if (!(spec.x_lo < 0.0 && 0.0 < spec.x_hi))
            throw ConfigError("build_geometry: interval (" + std::to_string(spec.x_lo) + ", " +
                              std::to_string(spec.x_hi) + ") must contain the origin");
        g.x_lo = spec.x_lo;
        g.x_hi = spec.x_hi;
        g.dx = (spec.x_hi - spec.x_lo) / spec.n_cells;
        g.dy = 1.0;
        g.cell_measure = g.dx;
        g.R = std::max(std::abs(spec.x_lo), std::abs(spec.x_hi));
        for (int i = 0; i < spec.n_cells; ++i) {
            g.cell_centers.push_back({spec.x_lo + (i + 0.5) * g.dx, 0.0});
            g.grid_index_.push_back(i);
            g.grid_to_cell.push_back(i);
        }
        g.velocities = {{-1.0, 0.0}, {1.0, 0.0}};
        g.vel_weights = {1.0, 1.0};
    } else {
        if (!(spec.radius > 0.0)) throw ConfigError("build_geometry: disk radius must be positive");
        if (spec.n_vel < 2) throw ConfigError("build_geometry: need at least 2 velocities");
        g.radius = spec.radius;
        const int n = spec.n_cells;
        g.dx = 2.0 * spec.radius / n;
        g.dy = g.dx;
        g.cell_measure = g.dx * g.dy;
        g.R = spec.radius;
        g.grid_to_cell.assign(static_cast<std::size_t>(n) * n, -1);
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                Vec2 ctr{-spec.radius + (i + 0.5) * g.dx, -spec.radius + (j + 0.5) * g.dy};
                if (norm2(ctr) < spec.radius) {
                    g.grid_to_cell[static_cast<std::size_t>(i + j * n)] =
                        static_cast<int>(g.cell_centers.size());
                    g.cell_centers.push_back(ctr);
                    g.grid_index_.push_back(i + j * n);
                }
            }
        }
        if (g.cell_centers.empty())
            throw ConfigError("build_geometry: no cells fall inside the disk at this resolution");
        const double w = 2.0 * M_PI / spec.n_vel;
        for (int j = 0; j < spec.n_vel; ++j) {
            const double phi = 2.0 * M_PI * j / spec.n_vel;
            g.velocities.push_back({std::cos(phi), std::sin(phi)});
            g.vel_weights.push_back(w);
        }
    }

    g.domain_measure = g.cell_measure * g.n_cells();
    detail::build_faces_and_boundary(g);
    return g;
}

/// The (face, velocity) decomposition; every pair appears exactly once.
inline const std::vector<BoundaryFace>& classify_boundary(const Geometry& g) {
    return g.boundary;
}

/// Sum of velocity quadrature weights (should equal |S^{d-1}|).
inline double velocity_weight_sum(const Geometry& g) {
    double s = 0.0;
    for (double w : g.vel_weights) s += w;
    return s;
}

// ---------------------------------------------------------------------------
// Boundary traces

/// Values on inflow faces per (level, node, sample): values[k] has
/// 2^k * samples_per_node * n_inflow entries laid out [node][sample][slot],
/// levels 0..n_steps-1. Each sample covers a time cell of width dt; when a
/// noise level is integrated by m transport substeps, traces carry m
/// samples per node (dt is then the substep length), keeping boundary data
/// at the transport resolution rather than the coarser noise resolution.
struct BoundaryTrace {
    std::vector<std::vector<double>> levels;
    double dt = 0.0; // time-cell width of one sample
    int n_inflow = 0;
    int samples_per_node = 1;

    bool empty() const { return levels.empty(); }
    int node_stride() const { return samples_per_node * n_inflow; }
    double* slice(int level, std::size_t node) {
        return levels[static_cast<std::size_t>(level)].data() +
               node * static_cast<std::size_t>(node_stride());
    }
    const double* slice(int level, std::size_t node) const {
        return levels[static_cast<std::size_t>(level)].data() +
               node * static_cast<std::size_t>(node_stride());
    }
};

inline BoundaryTrace make_boundary_trace(const Geometry& g, double dt, int n_levels,
                                         int samples_per_node = 1) {
    BoundaryTrace t;
    t.dt = dt;
    t.n_inflow = g.n_inflow();
    t.samples_per_node = samples_per_node;
    t.levels.resize(static_cast<std::size_t>(n_levels));
    for (int k = 0; k < n_levels; ++k)
        t.levels[static_cast<std::size_t>(k)]
            .assign((std::size_t{1} << k) * static_cast<std::size_t>(t.node_stride()), 0.0);
    return t;
}

/// Weight of one inflow slot in the L^2_w boundary norm:
/// (-U.nu) * face_measure * velocity weight. Zero on tangential pairs.
inline double inflow_weight(const Geometry& g, int slot) {
    const BoundaryFace& b = g.boundary[static_cast<std::size_t>(g.inflow_faces[static_cast<std::size_t>(slot)])];
    return -b.sign * b.face_measure * g.vel_weights[static_cast<std::size_t>(b.vel)];
}

/// L^2_F(0,T; L^2_w) pairing of two traces.
inline double trace_dot(const BoundaryTrace& a, const BoundaryTrace& b, const Geometry& g) {
    if (a.levels.size() != b.levels.size() || a.n_inflow != b.n_inflow ||
        a.samples_per_node != b.samples_per_node || a.n_inflow != g.n_inflow())
        throw ShapeError("trace_dot: trace shapes do not match");
    double total = 0.0;
    for (std::size_t k = 0; k < a.levels.size(); ++k) {
        const std::size_t nodes = std::size_t{1} << k;
        const double prob = 1.0 / static_cast<double>(nodes);
        double level_sum = 0.0;
        for (std::size_t n = 0; n < nodes; ++n) {
            const double* pa = a.slice(static_cast<int>(k), n);
            const double* pb = b.slice(static_cast<int>(k), n);
            for (int e = 0; e < a.samples_per_node; ++e)
                for (int s = 0; s < a.n_inflow; ++s)
                    level_sum += prob * inflow_weight(g, s) * pa[e * a.n_inflow + s] *
                                 pb[e * a.n_inflow + s];
        }
        total += a.dt * level_sum;
    }
    return total;
}

inline double weighted_inflow_norm(const BoundaryTrace& trace, const Geometry& g) {
    return std::sqrt(trace_dot(trace, trace, g));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json geometry_to_json(const Geometry& g) {
    nlohmann::ordered_json j;
    j["dim"] = g.dim;
    if (g.dim == 1) {
        j["domain"] = {{"kind", "interval"}, {"x_lo", g.x_lo}, {"x_hi", g.x_hi}};
    } else {
        j["domain"] = {{"kind", "disk"}, {"radius", g.radius}};
    }
    j["n_cells"] = g.n_cells();
    j["n_cells_axis"] = g.n_cells_axis;
    j["cell_measure"] = g.cell_measure;
    j["domain_measure"] = g.domain_measure;
    nlohmann::ordered_json vels = nlohmann::ordered_json::array();
    for (const auto& u : g.velocities) vels.push_back({u.x, u.y});
    j["velocities"] = vels;
    j["vel_weights"] = g.vel_weights;
    j["R"] = g.R;
    j["n_boundary_faces"] = g.boundary.size();
    j["n_inflow_faces"] = g.inflow_faces.size();
    return j;
}

} // namespace stclab
