#pragma once

// Individual best-response trajectories and the population aggregate F(mu).
//
// All paths come from the closed-form solution of the trading-interval
// system expressed through the bundle tables:
//
//   X(t)  = E2(t) [ C0 - U(t) + G1(tau) h(t)/E1(t) ],
//   xi(t) = ( alpha~(t) (C0 - U(t) + G1(tau) h(t)/E1(t))
//             + (G1(t) - G1(tau))/E1(t) ) / eta(t)
//
// with G1(s) = int_s^T kappa mu E1 and U(t) = int_0^t G1/(eta E1 E2); the
// identity int_0^t 1/(eta E1 E2) = h/E1 removes the only singular integrand.
// One (G1, U) table pair per aggregate rate serves every player.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "liqgame/distribution.hpp"
#include "liqgame/equilibrium.hpp"
#include "liqgame/grid.hpp"
#include "liqgame/kernels.hpp"
#include "liqgame/riccati.hpp"

namespace liqgame {

struct PlayerPath {
    double x0 = 0.0;
    double sigma = 0.0;  ///< entry time (buyers may enter late)
    double tau = 0.0;    ///< exit time (sellers may exit early)
    GridTable X;         ///< position
    GridTable Y;         ///< adjoint
    GridTable xi;        ///< trading rate (positive = selling)
    double cost = 0.0;   ///< realized objective against the engine's mu
    // closed-form bracket constants (set by the engine; allow exact
    // off-grid evaluation of the trajectory)
    double bracket_c0 = 0.0;
    double g1_at_tau = 0.0;
};

class PathEngine {
public:
    PathEngine(GridTable mu, const RiccatiBundle& b, bool require_strict_psi = true)
        : b_(b), mu_(std::move(mu)) {
        const TimeGrid& g = b.grid();
        kernels_ = compute_kernels(mu_, b, MonotoneCertificate::NumericCheck, require_strict_psi);

        f1_ = GridTable::zeros(g);
        for (std::size_t k = 0; k < g.size(); ++k)
            f1_.node[k] = b.params().kappa * mu_.node[k] * b.E1.node[k];
        for (std::size_t k = 0; k < g.intervals(); ++k)
            f1_.mid[k] = b.params().kappa * mu_.mid[k] * b.E1.mid[k];
        F1_ = CumulativeIntegral(g, f1_);

        fU_ = GridTable::zeros(g);
        auto fU_at = [&](double e1, double e2, double eta, double F1_to) {
            return (F1_.total() - F1_to) / (eta * e1 * e2);
        };
        for (std::size_t k = 0; k + 1 < g.size(); ++k)
            fU_.node[k] = fU_at(b.E1.node[k], b.E2.node[k], b.eta.node[k], F1_.at_node(k));
        for (std::size_t k = 0; k < g.intervals(); ++k)
            fU_.mid[k] = fU_at(b.E1.mid[k], b.E2.mid[k], b.eta.mid[k], F1_.to(g.mid(k)));
        // bounded limit of G1/(eta E1 E2) at the horizon
        fU_.node.back() = b.params().kappa * mu_.node.back() / (2.0 * b.alpha_tilde_T());
        U_ = CumulativeIntegral(g, fU_);

        lam_mu_ = GridTable::zeros(g);  // lambda (for pre-entry adjoint)
        Clam_ = CumulativeIntegral(g, b_.lambda);
        Cmu_ = CumulativeIntegral(g, mu_);
    }

    const TimeGrid& grid() const { return b_.grid(); }
    const RiccatiBundle& bundle() const { return b_; }
    const GridTable& mu() const { return mu_; }
    const EntryExitKernels& kernels() const { return kernels_; }

    double G1(double s) const { return F1_.total() - F1_.to(s); }

    PlayerPath path(double x0) const {
        if (x0 < 0.0) return buyer_path(x0);
        if (x0 > 0.0) return seller_path(x0);
        PlayerPath p;  // zero position: the only admissible strategy is no trade
        p.x0 = 0.0;
        p.tau = 0.0;
        p.X = GridTable::zeros(grid());
        p.Y = GridTable::zeros(grid());
        p.xi = GridTable::zeros(grid());
        return p;
    }

    /// Buyer (x < 0): possibly late entry at psi(sigma) = -x, trades on
    /// [sigma, T].  The bracket constant is pinned so that the trading rate
    /// vanishes exactly at entry.
    PlayerPath buyer_path(double x) const {
        if (!(x < 0.0)) throw std::invalid_argument("buyer_path: x must be negative");
        const TimeGrid& g = grid();
        PlayerPath p;
        p.x0 = x;
        p.tau = g.horizon();
        p.sigma = entry_time(x, g, kernels_);
        p.X = GridTable::zeros(g);
        p.Y = GridTable::zeros(g);
        p.xi = GridTable::zeros(g);

        double C0;
        if (p.sigma > 0.0) {
            const double e1 = interp_table(g, b_.E1, p.sigma);
            const double at = interp_table(g, b_.alpha_tilde, p.sigma);
            C0 = U_.to(p.sigma) - G1(p.sigma) / (e1 * at);
        } else {
            C0 = x;  // E2(0) = 1, U(0) = 0
        }
        p.bracket_c0 = C0;
        const double Y_entry = p.sigma > 0.0 ? b_.params().delta * b_.params().kappa * x : 0.0;

        auto fill = [&](double t, double E1v, double E2v, double atv, double etav, double& X,
                        double& Y, double& xi) {
            if (t < p.sigma) {
                X = x;
                xi = 0.0;
                Y = Y_entry + x * Clam_.over(t, p.sigma) +
                    b_.params().kappa * Cmu_.over(t, p.sigma);
                return;
            }
            const double bracket = C0 - U_.to(t);
            const double B = E1v > 0.0 ? G1(t) / E1v : 0.0;
            X = E2v * bracket;
            xi = (atv * bracket + B) / etav;
            Y = atv * bracket + b_.params().delta * b_.params().kappa * X + B;
        };
        fill_tables(p, fill);
        snap_sign(p);
        return p;
    }

    /// Seller (x > 0): enters at zero, exits at the first time phi(tau) = x.
    PlayerPath seller_path(double x) const {
        if (!(x > 0.0)) throw std::invalid_argument("seller_path: x must be positive");
        const TimeGrid& g = grid();
        PlayerPath p;
        p.x0 = x;
        p.sigma = 0.0;
        p.tau = exit_time(x, g, kernels_);
        if (p.tau < g.horizon()) {
            // refine against the path's own exit kernel so the stored
            // trajectory liquidates exactly at tau
            auto omega = [&](double t) {
                const double e1 = interp_table(g, b_.E1, t);
                return x - U_.to(t) + G1(t) * interp_h(t) / e1;
            };
            double t0 = p.tau, f0 = omega(t0);
            double t1 = std::min(g.horizon() * (1.0 - 1e-9), p.tau + 0.5 * g.dt(g.locate(p.tau)));
            for (int it = 0; it < 30 && std::abs(f0) > 1e-15 * (1.0 + x); ++it) {
                const double f1 = omega(t1);
                if (f1 == f0) break;
                const double t2 = std::clamp(t1 - f1 * (t1 - t0) / (f1 - f0), 0.0,
                                             g.horizon() * (1.0 - 1e-9));
                t0 = t1;
                f0 = f1;
                t1 = t2;
            }
            p.tau = t1;
        }
        p.X = GridTable::zeros(g);
        p.Y = GridTable::zeros(g);
        p.xi = GridTable::zeros(g);
        const double G1_tau = p.tau >= g.horizon() ? 0.0 : G1(p.tau);
        p.bracket_c0 = x;
        p.g1_at_tau = G1_tau;
        auto fill = [&](double t, double E1v, double E2v, double atv, double etav, double& X,
                        double& Y, double& xi) {
            if (t > p.tau) {
                X = 0.0;
                Y = 0.0;
                xi = 0.0;
                return;
            }
            const double hv = interp_h(t);
            const double bracket = x - U_.to(t) + (E1v > 0.0 ? G1_tau * hv / E1v : 0.0);
            const double B = E1v > 0.0 ? (G1(t) - G1_tau) / E1v : 0.0;
            X = E2v * bracket;
            xi = (atv * bracket + B) / etav;
            Y = atv * bracket + b_.params().delta * b_.params().kappa * X + B;
        };
        fill_tables(p, fill);
        snap_sign(p);
        return p;
    }

    /// Exact closed-form position at any time (the tables hold lattice
    /// samples; this evaluates the same expression off-grid).
    double position_at(const PlayerPath& p, double t) const {
        if (t <= p.sigma) return p.x0;
        if (t > p.tau) return 0.0;
        const TimeGrid& g = grid();
        const double e1 = interp_table(g, b_.E1, t);
        const double e2 = interp_table(g, b_.E2, t);
        const double vterm = p.g1_at_tau != 0.0 && e1 > 0.0
                                 ? p.g1_at_tau * interp_h(t) / e1
                                 : 0.0;
        return e2 * (p.bracket_c0 - U_.to(t) + vterm);
    }

    /// Population best-response aggregate F(mu)_t = int xi^{*,x} nu(dx).
    /// Empirical laws aggregate exactly; the mixture is quantized into
    /// equal-mass strata per side with boundaries forced at the two
    /// activity thresholds psi(0) and phi(T).
    GridTable aggregate(const PortfolioDistribution& dist, std::size_t strata_per_side) const {
        const TimeGrid& g = grid();
        GridTable F = GridTable::zeros(g);
        auto add = [&](const PlayerPath& p, double w) {
            for (std::size_t k = 0; k < g.size(); ++k) F.node[k] += w * p.xi.node[k];
            for (std::size_t k = 0; k < g.intervals(); ++k) F.mid[k] += w * p.xi.mid[k];
        };
        if (dist.is_empirical()) {
            const double w = 1.0 / double(dist.player_count());
            for (double x : dist.positions())
                if (x != 0.0) add(path(x), w);
            return F;
        }
        for (const auto& s : dist.quantize_side(true, {kernels_.phi_at_T}, strata_per_side))
            add(path(s.x), s.mass);
        for (const auto& s : dist.quantize_side(false, {-kernels_.psi_at_0}, strata_per_side))
            add(path(s.x), s.mass);
        return F;
    }

private:
    template <class F>
    void fill_tables(PlayerPath& p, F&& fill) const {
        const TimeGrid& g = grid();
        for (std::size_t k = 0; k < g.size(); ++k)
            fill(g.node(k), b_.E1.node[k], b_.E2.node[k], b_.alpha_tilde.node[k], b_.eta.node[k],
                 p.X.node[k], p.Y.node[k], p.xi.node[k]);
        for (std::size_t k = 0; k < g.intervals(); ++k)
            fill(g.mid(k), b_.E1.mid[k], b_.E2.mid[k], b_.alpha_tilde.mid[k], b_.eta.mid[k],
                 p.X.mid[k], p.Y.mid[k], p.xi.mid[k]);
    }

    double interp_h(double t) const { return interp_table(grid(), b_.h, t); }

    // Remove sub-1e-9 sign noise where the rate crosses zero at entry/exit;
    // anything larger is a genuine violation and is left for the tests.
    void snap_sign(PlayerPath& p) const {
        const double s = p.x0 < 0.0 ? -1.0 : 1.0;
        const double floor = 1e-9 * (1.0 + std::abs(p.x0));
        auto snap = [&](double& v) {
            if (s * v < 0.0 && s * v > -floor) v = 0.0;
        };
        for (auto& v : p.xi.node) snap(v);
        for (auto& v : p.xi.mid) snap(v);
    }

    const RiccatiBundle& b_;
    GridTable mu_;
    EntryExitKernels kernels_;
    GridTable f1_, fU_, lam_mu_;
    CumulativeIntegral F1_, U_, Clam_, Cmu_;
};

/// Objective value int (eta xi^2 / 2 + kappa mu_bar X + lambda X^2 / 2) for
/// an arbitrary rate/position pair on the bundle grid.
inline double evaluate_cost_tables(const GridTable& xi, const GridTable& X,
                                   const GridTable& mu_bar, const RiccatiBundle& b) {
    const TimeGrid& g = b.grid();
    if (xi.node.size() != g.size() || mu_bar.node.size() != g.size())
        throw std::invalid_argument("evaluate_cost: grid mismatch");
    GridTable f = GridTable::zeros(g);
    auto val = [&](double eta, double lam, double xiv, double Xv, double mv) {
        return 0.5 * eta * xiv * xiv + b.params().kappa * mv * Xv + 0.5 * lam * Xv * Xv;
    };
    for (std::size_t k = 0; k < g.size(); ++k)
        f.node[k] = val(b.eta.node[k], b.lambda.node[k], xi.node[k], X.node[k], mu_bar.node[k]);
    for (std::size_t k = 0; k < g.intervals(); ++k)
        f.mid[k] = val(b.eta.mid[k], b.lambda.mid[k], xi.mid[k], X.mid[k], mu_bar.mid[k]);
    return CumulativeIntegral(g, f).total();
}

/// Mean-field cost of a path against an exogenous aggregate rate.
inline double evaluate_cost(const PlayerPath& p, const GridTable& mu, const RiccatiBundle& b) {
    return evaluate_cost_tables(p.xi, p.X, mu, b);
}

/// N-player cost: the price-relevant aggregate is the opponents' average
/// plus the player's own rate weighted by 1/N.
inline double evaluate_cost_nplayer(const GridTable& xi, const GridTable& X,
                                    const GridTable& others_aggregate, double N,
                                    const RiccatiBundle& b) {
    const TimeGrid& g = b.grid();
    GridTable mu_bar = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k)
        mu_bar.node[k] = others_aggregate.node[k] + xi.node[k] / N;
    for (std::size_t k = 0; k < g.intervals(); ++k)
        mu_bar.mid[k] = others_aggregate.mid[k] + xi.mid[k] / N;
    return evaluate_cost_tables(xi, X, mu_bar, b);
}

/// Position path of an arbitrary rate profile: X(t) = x0 - int_0^t xi.
inline GridTable position_of_rate(const GridTable& xi, double x0, const TimeGrid& g) {
    CumulativeIntegral I(g, xi);
    GridTable X = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k) X.node[k] = x0 - I.at_node(k);
    for (std::size_t k = 0; k < g.intervals(); ++k) X.mid[k] = x0 - I.to(g.mid(k));
    return X;
}

inline GridTable aggregate_F(const GridTable& mu, const RiccatiBundle& b,
                             const PortfolioDistribution& dist,
                             std::size_t strata_per_side = 512) {
    return PathEngine(mu, b).aggregate(dist, strata_per_side);
}

/// sup_t |F(mu*) - mu*| over nodes and midpoints.
inline double fixed_point_selfcheck(const EquilibriumSolution& sol, const RiccatiBundle& b,
                                    const PortfolioDistribution& dist,
                                    std::size_t strata_per_side = 512) {
    const GridTable F = aggregate_F(sol.mu, b, dist, strata_per_side);
    double err = 0.0;
    for (std::size_t k = 0; k < F.node.size(); ++k)
        err = std::max(err, std::abs(F.node[k] - sol.mu.node[k]));
    for (std::size_t k = 0; k < F.mid.size(); ++k)
        err = std::max(err, std::abs(F.mid[k] - sol.mu.mid[k]));
    return err;
}

}  // namespace liqgame
