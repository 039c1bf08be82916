#pragma once

// Time grid with geometric clustering towards the horizon plus the small
// quadrature/interpolation kit shared by all solvers in this library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace liqgame {

/// Strictly increasing partition of [0, T].  Interval lengths shrink
/// geometrically towards T by `refinement_factor` (1 = uniform), so the
/// terminal blow-up of the Riccati solution stays resolved.
class TimeGrid {
public:
    static TimeGrid build(double T, std::size_t n, double refinement_factor,
                          std::size_t min_nodes = 16) {
        if (!(T > 0.0)) throw std::invalid_argument("TimeGrid: horizon T must be positive");
        if (n < min_nodes) throw std::invalid_argument("TimeGrid: too few nodes");
        if (!(refinement_factor >= 1.0))
            throw std::invalid_argument("TimeGrid: refinement_factor must be >= 1");

        const std::size_t m = n - 1;  // intervals
        std::vector<double> cum(n, 0.0);
        if (refinement_factor == 1.0 || m < 2) {
            for (std::size_t k = 0; k < n; ++k) cum[k] = double(k);
        } else {
            const double rho = std::pow(refinement_factor, -1.0 / double(m - 1));
            double len = 1.0, acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                acc += len;
                cum[k + 1] = acc;
                len *= rho;
            }
        }
        // Rescale so both endpoints are exact.
        std::vector<double> nodes(n);
        const double total = cum[m];
        for (std::size_t k = 0; k < n; ++k) nodes[k] = T * (cum[k] / total);
        nodes.front() = 0.0;
        nodes.back() = T;
        return TimeGrid(std::move(nodes), refinement_factor);
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t intervals() const { return nodes_.size() - 1; }
    double horizon() const { return nodes_.back(); }
    double refinement_factor() const { return refinement_; }

    double node(std::size_t k) const { return nodes_[k]; }
    double mid(std::size_t k) const { return 0.5 * (nodes_[k] + nodes_[k + 1]); }
    double dt(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
    const std::vector<double>& nodes() const { return nodes_; }

    /// Index k with t in [node(k), node(k+1)]; clamped at the ends.
    std::size_t locate(double t) const {
        if (t <= nodes_.front()) return 0;
        if (t >= nodes_[nodes_.size() - 2]) return nodes_.size() - 2;
        auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
        return std::size_t(it - nodes_.begin()) - 1;
    }

private:
    TimeGrid(std::vector<double> nodes, double refinement)
        : nodes_(std::move(nodes)), refinement_(refinement) {
        for (std::size_t k = 0; k + 1 < nodes_.size(); ++k)
            if (!(nodes_[k] < nodes_[k + 1]))
                throw std::invalid_argument("TimeGrid: nodes must increase strictly");
    }

    std::vector<double> nodes_;
    double refinement_ = 1.0;
};

inline TimeGrid build_grid(double T, std::size_t n, double refinement_factor) {
    return TimeGrid::build(T, n, refinement_factor);
}

/// Function tabulated at grid nodes and at interval midpoints.  Midpoint
/// values make every composite quadrature below Simpson-accurate.
struct GridTable {
    std::vector<double> node;  // size n
    std::vector<double> mid;   // size n-1

    static GridTable zeros(const TimeGrid& g) {
        return {std::vector<double>(g.size(), 0.0), std::vector<double>(g.intervals(), 0.0)};
    }

    template <class F>
    static GridTable sample(const TimeGrid& g, F&& f) {
        GridTable t = zeros(g);
        for (std::size_t k = 0; k < g.size(); ++k) t.node[k] = f(g.node(k));
        for (std::size_t k = 0; k < g.intervals(); ++k) t.mid[k] = f(g.mid(k));
        return t;
    }

    /// Node-only data; midpoints filled by linear interpolation.
    static GridTable from_nodes(const TimeGrid& g, std::vector<double> node_values) {
        if (node_values.size() != g.size())
            throw std::invalid_argument("GridTable: node value count mismatch");
        GridTable t;
        t.node = std::move(node_values);
        t.mid.resize(g.intervals());
        for (std::size_t k = 0; k < t.mid.size(); ++k)
            t.mid[k] = 0.5 * (t.node[k] + t.node[k + 1]);
        return t;
    }
};

/// Linear interpolation on the node lattice.
inline double interp_nodes(const TimeGrid& g, const std::vector<double>& v, double t) {
    const std::size_t k = g.locate(t);
    const double w = (t - g.node(k)) / g.dt(k);
    return v[k] + w * (v[k + 1] - v[k]);
}

/// Linear interpolation on the half lattice (nodes and midpoints).
inline double interp_table(const TimeGrid& g, const GridTable& f, double t) {
    const std::size_t k = g.locate(t);
    const double tm = g.mid(k);
    if (t <= tm) {
        const double w = (t - g.node(k)) / (tm - g.node(k));
        return f.node[k] + w * (f.mid[k] - f.node[k]);
    }
    const double w = (t - tm) / (g.node(k + 1) - tm);
    return f.mid[k] + w * (f.node[k + 1] - f.mid[k]);
}

namespace detail {

// Integral of the quadratic through (f0, fm, f1) on [t0, t0 + x*dt], x in [0,1].
inline double quad_partial(double f0, double fm, double f1, double dt, double x) {
    const double x2 = x * x, x3 = x2 * x;
    const double w0 = (2.0 / 3.0) * x3 - 1.5 * x2 + x;
    const double wm = 2.0 * x2 - (4.0 / 3.0) * x3;
    const double w1 = (2.0 / 3.0) * x3 - 0.5 * x2;
    return dt * (w0 * f0 + wm * fm + w1 * f1);
}

}  // namespace detail

/// Prefix integrals of a tabulated function, Simpson per interval.  Evaluates
/// exact-quadratic partial integrals inside an interval, so path integrands
/// that start or stop between nodes keep their accuracy.
class CumulativeIntegral {
public:
    CumulativeIntegral() = default;
    CumulativeIntegral(const TimeGrid& g, const GridTable& f) : grid_(&g), f_(&f) {
        prefix_.assign(g.size(), 0.0);
        for (std::size_t k = 0; k < g.intervals(); ++k) {
            const double s = g.dt(k) / 6.0 * (f.node[k] + 4.0 * f.mid[k] + f.node[k + 1]);
            prefix_[k + 1] = prefix_[k] + s;
        }
    }

    double at_node(std::size_t k) const { return prefix_[k]; }
    double total() const { return prefix_.back(); }

    /// Integral from 0 to t.
    double to(double t) const {
        const std::size_t k = grid_->locate(t);
        const double x = (t - grid_->node(k)) / grid_->dt(k);
        return prefix_[k] + detail::quad_partial(f_->node[k], f_->mid[k], f_->node[k + 1],
                                                 grid_->dt(k), std::clamp(x, 0.0, 1.0));
    }

    /// Integral over [a, b].
    double over(double a, double b) const { return to(b) - to(a); }

private:
    const TimeGrid* grid_ = nullptr;
    const GridTable* f_ = nullptr;
    std::vector<double> prefix_;
};

}  // namespace liqgame
