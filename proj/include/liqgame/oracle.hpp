#pragma once

// Independent verification tools.
//
//  * best_response_qp: the single-player problem discretized on a coarse
//    uniform grid (deliberately different from the solver grid) and solved
//    as a strictly convex QP by projected gradient.  No formulas from the
//    timing reduction enter, so matching objectives and matching active
//    sets are genuine evidence.
//  * nash_deviation_test: seeded random admissible deviations must never
//    beat the candidate equilibrium strategies.
//  * sensitivity_check: finite-difference signs and bounds of the solution
//    map in (theta, c).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "liqgame/equilibrium.hpp"
#include "liqgame/paths.hpp"

namespace liqgame {

/// Counter-based deterministic generator (recorded seed => reproducible).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * ++counter_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

struct DiscreteBestResponse {
    std::vector<double> rates;  ///< signed per-interval rates
    double objective = 0.0;
    double kkt_residual = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

// Exact projection onto {z >= 0, sum w_i z_i = budget} by clip-and-reshift
// over the still-free coordinates (finitely many passes).
inline void project_simplex(std::vector<double>& z, const std::vector<double>& w, double budget) {
    const std::size_t n = z.size();
    std::vector<bool> free_coord(n, true);
    for (std::size_t pass = 0; pass <= n; ++pass) {
        double acc = 0.0, wsum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (free_coord[i]) {
                acc += w[i] * z[i];
                wsum += w[i];
            }
        if (wsum <= 0.0) {
            std::fill(z.begin(), z.end(), 0.0);
            return;
        }
        const double shift = (acc - budget) / wsum;
        bool clipped = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (!free_coord[i]) continue;
            z[i] -= shift;
            if (z[i] < 0.0) {
                z[i] = 0.0;
                free_coord[i] = false;
                clipped = true;
            }
        }
        if (!clipped) return;
    }
}

}  // namespace detail

/// Discretized constrained best response by projected gradient.
///
/// `others` is the price-relevant aggregate rate of the opponents (the
/// exogenous rate in the mean-field game); the player's own impact enters
/// with weight delta from the cost parameters.  The objective uses midpoint
/// coefficient samples and left-endpoint positions, i.e. the plain
/// rectangle-rule transcription of the cost functional.
inline DiscreteBestResponse best_response_qp(double x, const std::vector<double>& others_mid,
                                             const CostParams& p, std::size_t coarse_n,
                                             std::size_t max_iter = 40000) {
    if (coarse_n < 50) throw std::invalid_argument("best_response_qp: coarse_n >= 50 required");
    if (others_mid.size() != coarse_n)
        throw std::invalid_argument("best_response_qp: aggregate sample count mismatch");
    const std::size_t m = coarse_n;
    const double dt = p.T / double(m);
    const double sgn = x >= 0.0 ? 1.0 : -1.0;

    std::vector<double> eta(m), lam(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double t = (double(j) + 0.5) * dt;
        eta[j] = p.eta(t);
        lam[j] = p.lambda(t);
    }

    DiscreteBestResponse out;
    out.rates.assign(m, 0.0);
    if (x == 0.0) return out;  // only admissible point

    // All work happens in z = sgn * xi >= 0 with sum z dt = |x|.
    std::vector<double> Xb(m);
    auto gradient = [&](const std::vector<double>& z, std::vector<double>& g) {
        // X_bar_j = x - sgn*dt*(sum_{i<j} z_i + z_j/2)
        double run = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            Xb[j] = x - sgn * dt * (run + 0.5 * z[j]);
            run += z[j];
        }
        // suffix of (kappa*others + delta*kappa*xi + lambda*Xb)
        double suf = 0.0;
        for (std::size_t j = m; j-- > 0;) {
            const double xi_j = sgn * z[j];
            const double pr = p.kappa * others_mid[j] + p.delta * p.kappa * xi_j + lam[j] * Xb[j];
            g[j] = dt * (eta[j] * z[j] + sgn * p.delta * p.kappa * Xb[j] -
                         sgn * (0.5 * dt * pr + dt * suf));
            suf += pr;
        }
    };
    auto objective = [&](const std::vector<double>& z) {
        double run = 0.0, J = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double Xb = x - sgn * dt * (run + 0.5 * z[j]);
            const double xi_j = sgn * z[j];
            J += dt * (0.5 * eta[j] * xi_j * xi_j +
                       p.kappa * Xb * (others_mid[j] + p.delta * xi_j) + 0.5 * lam[j] * Xb * Xb);
            run += z[j];
        }
        return J;
    };

    // Lipschitz constant of the gradient via exact power iteration (the
    // objective is quadratic, so gradient differences apply the Hessian).
    std::vector<double> w(m, dt);
    std::vector<double> z(m, std::abs(x) / (dt * double(m)));  // TWAP start
    std::vector<double> g0(m), g1(m), v(m, 1.0), hv(m);
    gradient(z, g0);
    double L = 0.0;
    {
        std::vector<double> zp(m);
        double nrm = std::sqrt(double(m));
        for (double& vi : v) vi /= nrm;
        for (int it = 0; it < 40; ++it) {
            for (std::size_t j = 0; j < m; ++j) zp[j] = z[j] + v[j];
            gradient(zp, g1);
            double nn = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                hv[j] = g1[j] - g0[j];
                nn += hv[j] * hv[j];
            }
            nn = std::sqrt(nn);
            if (nn == 0.0) break;
            L = nn;
            for (std::size_t j = 0; j < m; ++j) v[j] = hv[j] / nn;
        }
        L = std::max(L, dt * *std::max_element(eta.begin(), eta.end()));
    }

    // Projected gradient: constant 1/L burn-in, then diminishing steps with
    // tail averaging.  The problem is strictly convex, so this pins the
    // unique minimizer; the KKT residual below certifies it.
    std::vector<double> zbar(m, 0.0);
    std::size_t navg = 0;
    const std::size_t burn = max_iter / 2;
    for (std::size_t it = 0; it < max_iter; ++it) {
        gradient(z, g0);
        const double step = it < burn ? 1.0 / L : 1.0 / (L * (1.0 + 0.01 * double(it - burn)));
        for (std::size_t j = 0; j < m; ++j) z[j] -= step * g0[j];
        detail::project_simplex(z, w, std::abs(x));
        if (it >= burn) {
            for (std::size_t j = 0; j < m; ++j) zbar[j] += z[j];
            ++navg;
        }
    }
    for (std::size_t j = 0; j < m; ++j) z[j] = zbar[j] / double(navg);
    detail::project_simplex(z, w, std::abs(x));

    gradient(z, g0);
    // KKT: on free coordinates g/dt equals the multiplier; on the active set
    // the reduced gradient must not push inward.
    double mult = 0.0;
    std::size_t nfree = 0;
    const double act_tol = 1e-12 * (1.0 + std::abs(x) / p.T);
    for (std::size_t j = 0; j < m; ++j)
        if (z[j] > act_tol) {
            mult += g0[j] / dt;
            ++nfree;
        }
    mult = nfree ? mult / double(nfree) : 0.0;
    double kkt = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double r = g0[j] / dt - mult;
        kkt = std::max(kkt, z[j] > act_tol ? std::abs(r) : std::max(0.0, -r));
    }

    out.kkt_residual = kkt;
    out.iterations = max_iter;
    out.objective = objective(z);
    out.rates.resize(m);
    for (std::size_t j = 0; j < m; ++j) out.rates[j] = sgn * z[j];
    return out;
}

// ---------------------------------------------------------------------------
// Nash deviation testing
// ---------------------------------------------------------------------------

struct DeviationReport {
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    double min_cost_increase = 0.0;  ///< min over samples of J(pert) - J(star)
    double cost_scale = 1.0;
    double worst_x = 0.0;
};

namespace detail {

inline GridTable simpson_weights(const TimeGrid& g) {
    GridTable w = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.intervals(); ++k) {
        w.node[k] += g.dt(k) / 6.0;
        w.mid[k] += 4.0 * g.dt(k) / 6.0;
        w.node[k + 1] += g.dt(k) / 6.0;
    }
    return w;
}

// Project a signed rate profile onto {sign(x0) xi >= 0, int xi = x0} in the
// Simpson inner product of the grid.
inline void project_admissible(GridTable& xi, double x0, const TimeGrid& g) {
    const double sgn = x0 >= 0.0 ? 1.0 : -1.0;
    const GridTable w = simpson_weights(g);
    const std::size_t n = g.size(), m = g.intervals();
    std::vector<double> z(n + m), ww(n + m);
    for (std::size_t k = 0; k < n; ++k) {
        z[k] = sgn * xi.node[k];
        ww[k] = w.node[k];
    }
    for (std::size_t k = 0; k < m; ++k) {
        z[n + k] = sgn * xi.mid[k];
        ww[n + k] = w.mid[k];
    }
    project_simplex(z, ww, std::abs(x0));
    for (std::size_t k = 0; k < n; ++k) xi.node[k] = sgn * z[k];
    for (std::size_t k = 0; k < m; ++k) xi.mid[k] = sgn * z[n + k];
}

inline void add_bump(GridTable& xi, const TimeGrid& g, double center, double halfwidth,
                     double amplitude) {
    auto bump = [&](double t) {
        const double u = std::abs(t - center) / halfwidth;
        return u >= 1.0 ? 0.0 : amplitude * (1.0 - u);
    };
    for (std::size_t k = 0; k < g.size(); ++k) xi.node[k] += bump(g.node(k));
    for (std::size_t k = 0; k < g.intervals(); ++k) xi.mid[k] += bump(g.mid(k));
}

}  // namespace detail

/// Random admissible deviations against the solved strategies.  In the
/// N-player game the deviator's own rate stays inside the price-relevant
/// aggregate; in the mean-field game the aggregate is exogenous.
inline DeviationReport nash_deviation_test(const EquilibriumSolution& sol,
                                           const RiccatiBundle& b,
                                           const PortfolioDistribution& dist,
                                           std::size_t samples, std::uint64_t seed) {
    const TimeGrid& g = b.grid();
    const bool nplayer = b.params().delta > 0.0;
    PathEngine engine(sol.mu, b);
    CounterRng rng(seed);

    DeviationReport rep;
    rep.seed = seed;
    rep.min_cost_increase = std::numeric_limits<double>::infinity();

    std::vector<double> players;
    if (dist.is_empirical()) {
        for (double x : dist.positions())
            if (x != 0.0) players.push_back(x);
    } else {
        for (std::size_t i = 0; i < 16; ++i)  // representative spread of types
            players.push_back(dist.quantile((double(i) + 0.5) / 16.0));
    }

    for (double x : players) {
        if (x == 0.0) continue;
        const PlayerPath star = engine.path(x);
        GridTable others = GridTable::zeros(g);
        double N = 1.0;
        if (nplayer) {
            N = 1.0 / b.params().delta;
            for (std::size_t k = 0; k < g.size(); ++k)
                others.node[k] = sol.mu.node[k] - star.xi.node[k] / N;
            for (std::size_t k = 0; k < g.intervals(); ++k)
                others.mid[k] = sol.mu.mid[k] - star.xi.mid[k] / N;
        }
        // reference strategy made exactly feasible in the discrete metric,
        // so the identity deviation has exactly zero cost difference
        GridTable xi_star = star.xi;
        detail::project_admissible(xi_star, x, g);
        const GridTable X_star = position_of_rate(xi_star, x, g);
        const double J_star =
            nplayer ? evaluate_cost_nplayer(xi_star, X_star, others, N, b)
                    : evaluate_cost_tables(xi_star, X_star, sol.mu, b);
        double xi_scale = 0.0;
        for (double v : xi_star.node) xi_scale = std::max(xi_scale, std::abs(v));
        xi_scale = std::max(xi_scale, std::abs(x) / b.params().T);
        rep.cost_scale = std::max(rep.cost_scale, std::abs(J_star));

        for (std::size_t s = 0; s < samples; ++s) {
            GridTable xi = xi_star;
            const double center = rng.uniform(0.0, b.params().T);
            const double halfwidth = rng.uniform(0.05, 0.35) * b.params().T;
            const double amp = rng.uniform(-0.6, 0.6) * xi_scale;
            detail::add_bump(xi, g, center, halfwidth, amp);
            detail::project_admissible(xi, x, g);
            const GridTable X = position_of_rate(xi, x, g);
            const double J =
                nplayer ? evaluate_cost_nplayer(xi, X, others, N, b)
                        : evaluate_cost_tables(xi, X, sol.mu, b);
            const double d = J - J_star;
            if (d < rep.min_cost_increase) {
                rep.min_cost_increase = d;
                rep.worst_x = x;
            }
            ++rep.samples;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Parameter sensitivity (finite differences)
// ---------------------------------------------------------------------------

struct SensitivityReport {
    double min_dvartheta_dtheta = 0.0;  ///< over interior nodes
    double max_dvartheta_dc = 0.0;
    bool rho1_increasing_in_theta = true;
    double outer_map_slope = 0.0;  ///< d/dc rho2(theta(c), c) at the solution
};

inline SensitivityReport sensitivity_check(const RiccatiBundle& b,
                                           const PortfolioDistribution& dist, VariantMode mode,
                                           double theta, double c, double bump_rel = 1e-4) {
    if (!(theta > 0.0)) throw std::invalid_argument("sensitivity_check: theta must be positive");
    const TimeGrid& g = b.grid();
    const double dth = bump_rel * theta;
    const double dc = bump_rel * std::max(c, 0.1);

    auto vartheta = [&](double th, double cc) {
        BackwardSolution s = solve_backward(th, cc, b, dist, mode, false);
        std::vector<double> v(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) v[k] = s.mu.node[k] * b.eta.node[k];
        return v;
    };

    SensitivityReport rep;
    const auto up_th = vartheta(theta + dth, c), dn_th = vartheta(theta - dth, c);
    const auto up_c = vartheta(theta, c + dc), dn_c = vartheta(theta, c - std::min(dc, c));
    const double dc_eff = dc + std::min(dc, c);
    rep.min_dvartheta_dtheta = std::numeric_limits<double>::infinity();
    rep.max_dvartheta_dc = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k + 1 < g.size(); ++k) {
        rep.min_dvartheta_dtheta =
            std::min(rep.min_dvartheta_dtheta, (up_th[k] - dn_th[k]) / (2.0 * dth));
        rep.max_dvartheta_dc = std::max(rep.max_dvartheta_dc, (up_c[k] - dn_c[k]) / dc_eff);
    }

    // rho1 monotone in theta across a sweep
    const double th_hi = dist.mean() * b.alpha_tilde_T() / b.eta.node.back();
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 16; ++i) {
        const double th = th_hi * double(i + 1) / 16.0;
        BackwardSolution s = solve_backward(th, c, b, dist, mode, false);
        const double r1 = terminal_residual_rho1(s, b, dist, mode);
        if (r1 <= prev) rep.rho1_increasing_in_theta = false;
        prev = r1;
    }

    if (mode != VariantMode::Unconstrained) {
        EquilibriumOptions opt;
        auto g_of_c = [&](double cc) {
            auto r = detail::solve_theta(cc, b, dist, mode, opt);
            return exit_mass_residual_rho2(r.state);
        };
        rep.outer_map_slope = (g_of_c(c + dc) - g_of_c(std::max(0.0, c - dc))) /
                              (dc + std::min(dc, c));
    }
    return rep;
}

}  // namespace liqgame
