#pragma once

// Equilibrium aggregate trading rate.
//
// The fixed-point equation for mu depends at time t only on [t, T] once the
// terminal rate (theta) and the total early-exit mass (c) are treated as
// parameters, so a single backward sweep of the coupled state
//
//   mu' = -(kappa/eta)(q(c - Phi) + p(-psi) - delta) mu - (eta'/eta) mu
//         - (lambda/eta)(ell(-psi) + M)
//   psi' = (lambda psi - kappa mu)/(A - delta kappa)
//   Phi' = -h kappa mu,   M' = -mu,      (mu, psi, Phi, M)(T) = (theta, 0, 0, 0)
//
// solves it exactly.  The equilibrium pair (theta, c) is the root of the two
// consistency residuals rho1 (terminal condition) and rho2 = c - phi_mu(T),
// found by bisection in theta nested inside a scan-and-secant search in c.
// An independent Picard iteration of the integrated operator form provides a
// cross-check and the robust route for atomic (N-player) distributions.

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "liqgame/distribution.hpp"
#include "liqgame/grid.hpp"
#include "liqgame/kernels.hpp"
#include "liqgame/params.hpp"
#include "liqgame/riccati.hpp"

namespace liqgame {

struct BackwardSolution {
    GridTable mu, psi, Phi, M;  // Phi(t) = int_t^T h kappa mu, M(t) = int_t^T mu
    double theta = 0.0, c = 0.0;
    double integral_residual = 0.0;  // sup residual of the integral equation
};

struct NoBracketError : std::runtime_error {
    NoBracketError(std::string msg, std::vector<double> cs, std::vector<double> rho2s)
        : std::runtime_error(std::move(msg)), scan_c(std::move(cs)), scan_rho2(std::move(rho2s)) {}
    std::vector<double> scan_c, scan_rho2;
};

namespace detail {

// Exact integral of the quadratic through (va,fa), (vm,fm), (vb,fb) over
// [va, vb]; the sample points need not be equally spaced in v.
inline double quad3_stieltjes(double va, double vm, double vb, double fa, double fm, double fb) {
    const double L = vb - va, M = vm - va;
    if (L == 0.0) return 0.0;
    if (std::abs(M) < 1e-12 * std::abs(L) || std::abs(M - L) < 1e-12 * std::abs(L))
        return 0.5 * L * (fa + fb);
    const double w0 = L * L * (3.0 * M - L) / (6.0 * M * L);
    const double wm = -L * L * L / (6.0 * M * (M - L));
    const double w1 = L * (2.0 * L - 3.0 * M) / (6.0 * (L - M));
    return w0 * fa + wm * fm + w1 * fb;
}

struct MarchY {
    double mu, psi, Phi, M;
};

class BackwardMarch {
public:
    BackwardMarch(const RiccatiBundle& b, const PortfolioDistribution& dist, VariantMode mode,
                  double c)
        : b_(b), dist_(dist), mode_(mode), c_(c) {
        if (dist.is_empirical()) {
            seller_atoms_ = dist.sorted_positive_atoms();
            buyer_mags_ = dist.sorted_buyer_magnitudes();
        }
    }

    BackwardSolution run(double theta) {
        const TimeGrid& g = b_.grid();
        BackwardSolution s;
        s.theta = theta;
        s.c = c_;
        s.mu = GridTable::zeros(g);
        s.psi = GridTable::zeros(g);
        s.Phi = GridTable::zeros(g);
        s.M = GridTable::zeros(g);

        MarchY y{theta, 0.0, 0.0, 0.0};
        store(s, g.size() - 1, y, true);
        for (std::size_t k = g.size() - 1; k-- > 0;) {
            interval_ = k;
            step(g.node(k + 1), g.mid(k), y, max_depth);
            store(s, k, y, false);
            step(g.mid(k), g.node(k), y, max_depth);
            store(s, k, y, true);
        }
        return s;
    }

private:
    static constexpr int max_depth = 40;

    static void store(BackwardSolution& s, std::size_t k, const MarchY& y, bool at_node) {
        auto put = [&](GridTable& t, double v) { (at_node ? t.node : t.mid)[k] = v; };
        put(s.mu, y.mu);
        put(s.psi, y.psi);
        put(s.Phi, y.Phi);
        put(s.M, y.M);
    }

    double table_at(const GridTable& f, double t) const {
        const TimeGrid& g = b_.grid();
        const std::size_t k = interval_;
        const double tn0 = g.node(k), tm = g.mid(k), tn1 = g.node(k + 1);
        if (t <= tm) {
            const double w = (t - tn0) / (tm - tn0);
            return f.node[k] + w * (f.mid[k] - f.node[k]);
        }
        const double w = (t - tm) / (tn1 - tm);
        return f.mid[k] + w * (f.node[k + 1] - f.mid[k]);
    }

    void masses(const MarchY& y, double& qa, double& pa) const {
        switch (mode_) {
            case VariantMode::TradingConstraint:
                qa = dist_.active_seller_mass(c_ - y.Phi);
                pa = dist_.active_buyer_mass(-y.psi);
                break;
            case VariantMode::DropOut:
                qa = dist_.active_seller_mass(c_ - y.Phi);
                pa = dist_.active_buyer_mass(0.0);
                break;
            case VariantMode::Unconstrained:
                qa = 1.0;
                pa = 0.0;
                break;
        }
    }

    void rhs(double t, const MarchY& y, MarchY& dy, double qa_frozen, double pa_frozen) const {
        const CostParams& p = b_.params();
        const double eta = p.eta(t), eta_dot = p.eta.derivative(t), lam = p.lambda(t);
        double qa = qa_frozen, pa = pa_frozen;
        if (!dist_.is_empirical()) masses(y, qa, pa);  // smooth law: stage-exact masses
        const double ell = mode_ == VariantMode::TradingConstraint ? dist_.ell(-y.psi) : 0.0;
        dy.mu = -(p.kappa / eta) * (qa + pa - p.delta) * y.mu - (eta_dot / eta) * y.mu -
                (lam / eta) * (ell + y.M);
        dy.psi = mode_ == VariantMode::TradingConstraint
                     ? (lam * y.psi - p.kappa * y.mu) * table_at(b_.inv_A_dk, t)
                     : 0.0;
        dy.Phi = -table_at(b_.h, t) * p.kappa * y.mu;
        dy.M = -y.mu;
    }

    MarchY rk4(double t_hi, double t_lo, const MarchY& y0, double qa, double pa) const {
        const double dt = t_lo - t_hi;
        MarchY k1, k2, k3, k4, tmp;
        auto axpy = [](const MarchY& a, double s, const MarchY& d) {
            return MarchY{a.mu + s * d.mu, a.psi + s * d.psi, a.Phi + s * d.Phi, a.M + s * d.M};
        };
        rhs(t_hi, y0, k1, qa, pa);
        tmp = axpy(y0, 0.5 * dt, k1);
        rhs(t_hi + 0.5 * dt, tmp, k2, qa, pa);
        tmp = axpy(y0, 0.5 * dt, k2);
        rhs(t_hi + 0.5 * dt, tmp, k3, qa, pa);
        tmp = axpy(y0, dt, k3);
        rhs(t_lo, tmp, k4, qa, pa);
        return MarchY{y0.mu + dt / 6.0 * (k1.mu + 2 * k2.mu + 2 * k3.mu + k4.mu),
                      y0.psi + dt / 6.0 * (k1.psi + 2 * k2.psi + 2 * k3.psi + k4.psi),
                      y0.Phi + dt / 6.0 * (k1.Phi + 2 * k2.Phi + 2 * k3.Phi + k4.Phi),
                      y0.M + dt / 6.0 * (k1.M + 2 * k2.M + 2 * k3.M + k4.M)};
    }

    // First atom strictly inside (lo, hi), as a time estimate.
    static bool first_crossing(const std::vector<double>& atoms, double v_hi, double v_lo,
                               double t_hi, double t_lo, bool descending, double& t_est) {
        const double a = std::min(v_hi, v_lo), bnd = std::max(v_hi, v_lo);
        auto lo_it = std::upper_bound(atoms.begin(), atoms.end(), a);
        auto hi_it = std::lower_bound(atoms.begin(), atoms.end(), bnd);
        if (lo_it >= hi_it) return false;
        // the crossing met first when marching down from t_hi
        const double atom = descending ? *(hi_it - 1) : *lo_it;
        const double w = (atom - v_hi) / (v_lo - v_hi);
        t_est = t_hi + w * (t_lo - t_hi);
        return true;
    }

    // One backward substep with event localisation for atomic laws: the
    // active masses are frozen per substep (piecewise constant between
    // crossings), and any stretch containing a crossing is split at the
    // first-order estimate of the crossing time.
    void step(double t_hi, double t_lo, MarchY& y, int depth) {
        double qa = 0.0, pa = 0.0;
        if (dist_.is_empirical()) {
            MarchY probe = y;
            masses(probe, qa, pa);
        }
        const MarchY cand = rk4(t_hi, t_lo, y, qa, pa);
        if (!dist_.is_empirical() || depth == 0) {
            y = cand;
            return;
        }
        double t_s = 0.0, t_b = 0.0;
        const bool uses_psi = mode_ == VariantMode::TradingConstraint;
        const bool ev_s = mode_ != VariantMode::Unconstrained &&
                          first_crossing(seller_atoms_, c_ - y.Phi, c_ - cand.Phi, t_hi, t_lo,
                                         /*descending=*/c_ - cand.Phi < c_ - y.Phi, t_s);
        const bool ev_b = uses_psi && first_crossing(buyer_mags_, y.psi, cand.psi, t_hi, t_lo,
                                                     /*descending=*/cand.psi < y.psi, t_b);
        if (!ev_s && !ev_b) {
            y = cand;
            return;
        }
        double t_star = ev_s && ev_b ? std::max(t_s, t_b) : (ev_s ? t_s : t_b);
        const double lo_guard = t_lo + 0.01 * (t_hi - t_lo);
        const double hi_guard = t_hi - 0.01 * (t_hi - t_lo);
        if (!(t_star > lo_guard && t_star < hi_guard)) t_star = 0.5 * (t_hi + t_lo);
        step(t_hi, t_star, y, depth - 1);
        step(t_star, t_lo, y, depth - 1);
    }

    const RiccatiBundle& b_;
    const PortfolioDistribution& dist_;
    VariantMode mode_;
    double c_;
    std::size_t interval_ = 0;
    std::vector<double> seller_atoms_, buyer_mags_;
};

}  // namespace detail

/// A-posteriori residual of the parameterized integral equation, evaluated by
/// Simpson quadrature on the stored state.
inline double backward_integral_residual(const BackwardSolution& s, const RiccatiBundle& b,
                                         const PortfolioDistribution& dist, VariantMode mode) {
    const TimeGrid& g = b.grid();
    auto integrand = [&](double eta, double eta_dot, double lam, double mu, double psi,
                         double Phi, double M) {
        double qa = 1.0, pa = 0.0;
        if (mode != VariantMode::Unconstrained) {
            qa = dist.active_seller_mass(s.c - Phi);
            pa = mode == VariantMode::TradingConstraint ? dist.active_buyer_mass(-psi)
                                                        : dist.active_buyer_mass(0.0);
        }
        const double ell = mode == VariantMode::TradingConstraint ? dist.ell(-psi) : 0.0;
        return (b.params().kappa / eta) * (qa + pa - b.params().delta) * mu +
               (eta_dot / eta) * mu + (lam / eta) * (ell + M);
    };
    GridTable f = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k)
        f.node[k] = integrand(b.eta.node[k], b.eta_dot.node[k], b.lambda.node[k], s.mu.node[k],
                              s.psi.node[k], s.Phi.node[k], s.M.node[k]);
    for (std::size_t k = 0; k < g.intervals(); ++k)
        f.mid[k] = integrand(b.eta.mid[k], b.eta_dot.mid[k], b.lambda.mid[k], s.mu.mid[k],
                             s.psi.mid[k], s.Phi.mid[k], s.M.mid[k]);
    CumulativeIntegral F(g, f);
    double worst = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double res = s.mu.node[k] - (s.theta + F.total() - F.at_node(k));
        worst = std::max(worst, std::abs(res));
    }
    return worst;
}

/// Single backward sweep for given parameters (theta, c).
inline BackwardSolution solve_backward(double theta, double c, const RiccatiBundle& b,
                                       const PortfolioDistribution& dist, VariantMode mode,
                                       bool check_residual = true) {
    if (theta < 0.0 || c < 0.0)
        throw std::invalid_argument("solve_backward: theta and c must be non-negative");
    detail::BackwardMarch march(b, dist, mode, c);
    BackwardSolution s = march.run(theta);
    s.integral_residual = backward_integral_residual(s, b, dist, mode);
    if (check_residual) {
        double scale = std::abs(theta);
        for (double v : s.mu.node) scale = std::max(scale, std::abs(v));
        // atomic laws put kinks inside grid cells, so their quadrature check
        // is necessarily coarser
        const double tol = (dist.is_empirical() ? 2e-3 : 2e-5) * (1.0 + scale);
        if (!(s.integral_residual < tol))
            throw std::runtime_error("solve_backward: integral equation residual too large");
    }
    return s;
}

/// Terminal-condition residual rho1; strictly increasing in theta.
inline double terminal_residual_rho1(const BackwardSolution& s, const RiccatiBundle& b,
                                     const PortfolioDistribution& dist, VariantMode mode) {
    const TimeGrid& g = b.grid();
    const double mean = dist.mean();
    const double head = b.eta.node.back() / b.alpha_tilde_T() * s.theta - mean;
    if (mode == VariantMode::Unconstrained) return head + s.Phi.node.front();
    if (mode == VariantMode::DropOut)
        return head + dist.bigQ(s.c) + s.c * dist.active_buyer_mass(0.0);

    // trading constraint: head + Q(c) + P(-psi(0)) - int p(-psi)(lambda psi - kappa mu)/alpha~
    auto w_at = [&](double lam, double mu, double psi, double at) {
        return (lam * psi - b.params().kappa * mu) / at;
    };
    GridTable w = GridTable::zeros(g), f = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        w.node[k] = w_at(b.lambda.node[k], s.mu.node[k], s.psi.node[k], b.alpha_tilde.node[k]);
        f.node[k] = dist.active_buyer_mass(-s.psi.node[k]) * w.node[k];
    }
    for (std::size_t k = 0; k < g.intervals(); ++k) {
        w.mid[k] = w_at(b.lambda.mid[k], s.mu.mid[k], s.psi.mid[k], b.alpha_tilde.mid[k]);
        f.mid[k] = dist.active_buyer_mass(-s.psi.mid[k]) * w.mid[k];
    }
    double I = CumulativeIntegral(g, f).total();

    if (dist.is_empirical()) {
        // p(-psi) steps at the buyer entry times; re-integrate any interval
        // containing a crossing piecewise, with the smooth factor w kept as
        // the interval quadratic.
        const auto mags = dist.sorted_buyer_magnitudes();
        for (std::size_t k = 0; k < g.intervals(); ++k) {
            const double hi = s.psi.node[k], lo = s.psi.node[k + 1];  // psi decreases in t
            auto it0 = std::upper_bound(mags.begin(), mags.end(), std::min(lo, hi));
            auto it1 = std::lower_bound(mags.begin(), mags.end(), std::max(lo, hi));
            if (it0 >= it1) continue;
            const double dt = g.dt(k);
            I -= dt / 6.0 * (f.node[k] + 4.0 * f.mid[k] + f.node[k + 1]);
            // crossing fractions, ascending in t (descending in magnitude)
            std::vector<double> xs{0.0};
            for (auto it = it1; it-- > it0;)
                xs.push_back(std::clamp((hi - *it) / (hi - lo), 0.0, 1.0));
            xs.push_back(1.0);
            std::sort(xs.begin(), xs.end());
            for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
                const double psi_seg = hi + 0.5 * (xs[j] + xs[j + 1]) * (lo - hi);
                const double p_seg = dist.active_buyer_mass(-psi_seg);
                const double piece =
                    detail::quad_partial(w.node[k], w.mid[k], w.node[k + 1], dt, xs[j + 1]) -
                    detail::quad_partial(w.node[k], w.mid[k], w.node[k + 1], dt, xs[j]);
                I += p_seg * piece;
            }
        }
    }
    return head + dist.bigQ(s.c) + dist.bigP(-s.psi.node.front()) - I;
}

/// Exit-mass residual rho2 = c - phi_mu(T).
inline double exit_mass_residual_rho2(const BackwardSolution& s) {
    return s.c - s.Phi.node.front();
}

// --------------------------------------------------------------------------
// Picard iteration of the operator form (independent cross-check)
// --------------------------------------------------------------------------

/// Fixed-point iteration of  I_theta + G + H_c + J  on  vartheta = mu eta,
/// using the integrated representations of H_c and J (they only evaluate the
/// continuous functionals Q and P, which keeps the scheme robust for atomic
/// laws).  Returns mu on the grid nodes.
inline std::vector<double> solve_backward_picard(double theta, double c, const RiccatiBundle& b,
                                                 const PortfolioDistribution& dist,
                                                 VariantMode mode, std::size_t max_iter = 400,
                                                 double tol = 1e-13,
                                                 std::vector<double>* diff_log = nullptr) {
    const TimeGrid& g = b.grid();
    const std::size_t n = g.size();
    const CostParams& p = b.params();
    const double eta_T = b.eta.node.back();
    const double p0 = dist.active_buyer_mass(0.0);

    std::vector<double> pi(n), inv_eta(n);
    for (std::size_t k = 0; k < n; ++k) {
        pi[k] = p.kappa / b.eta.node[k];
        inv_eta[k] = 1.0 / b.eta.node[k];
    }
    auto suffix_trapz = [&](const std::vector<double>& f) {
        std::vector<double> F(n, 0.0);
        for (std::size_t k = n - 1; k-- > 0;)
            F[k] = F[k + 1] + 0.5 * g.dt(k) * (f[k] + f[k + 1]);
        return F;
    };

    std::vector<double> th(n, theta * eta_T), th_new(n), tmp(n);
    double prev_diff = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < max_iter; ++it) {
        // G: int_t^T lambda int_s^T vartheta/eta
        for (std::size_t k = 0; k < n; ++k) tmp[k] = th[k] * inv_eta[k];
        auto Sth = suffix_trapz(tmp);
        for (std::size_t k = 0; k < n; ++k) tmp[k] = b.lambda.node[k] * Sth[k];
        auto G = suffix_trapz(tmp);

        for (std::size_t k = 0; k < n; ++k) tmp[k] = pi[k] * th[k];
        auto Spith = suffix_trapz(tmp);

        std::vector<double> H(n, 0.0), J(n, 0.0);
        if (mode == VariantMode::Unconstrained) {
            for (std::size_t k = 0; k < n; ++k) H[k] = (1.0 - p.delta) * Spith[k];
        } else {
            // W(t) = int_t^T h pi vartheta
            for (std::size_t k = 0; k < n; ++k) tmp[k] = b.h.node[k] * pi[k] * th[k];
            auto W = suffix_trapz(tmp);
            // H_c in integrated form away from zero; the dh/h^2 weight is
            // integrated as a Stieltjes integral in v = -1/h (exact
            // increments, Q quadratic in v per interval), which keeps the
            // three terms cancelling even as 1/h grows.  Near t = 0, where
            // 1/h blows up, the direct form of the operator is regular and
            // is used instead.
            std::vector<double> Qc(n);
            for (std::size_t k = 0; k < n; ++k) Qc[k] = dist.bigQ(c - W[k]);
            std::size_t K = 1;
            while (K + 1 < n && g.node(K) < 0.02 * p.T) ++K;
            std::vector<double> I2(n, 0.0);  // int_t^T Q d(-1/h), used for k >= K
            for (std::size_t k = n - 1; k-- > K;) {
                const double th_mid = 0.5 * (th[k] + th[k + 1]);
                const double Wm = W[k + 1] +
                                  0.5 * (g.node(k + 1) - g.mid(k)) *
                                      (b.h.mid[k] * (p.kappa / b.eta.mid[k]) * th_mid +
                                       b.h.node[k + 1] * pi[k + 1] * th[k + 1]);
                I2[k] = I2[k + 1] +
                        detail::quad3_stieltjes(-1.0 / b.h.node[k], -1.0 / b.h.mid[k],
                                                -1.0 / b.h.node[k + 1], Qc[k],
                                                dist.bigQ(c - Wm), Qc[k + 1]);
            }
            const double QcT = dist.bigQ(c);
            for (std::size_t k = K; k < n; ++k)
                H[k] = QcT / b.h_T() - Qc[k] / b.h.node[k] + I2[k];
            for (std::size_t k = K; k-- > 0;)
                H[k] = H[k + 1] + 0.5 * g.dt(k) *
                                      (dist.active_seller_mass(c - W[k]) * pi[k] * th[k] +
                                       dist.active_seller_mass(c - W[k + 1]) * pi[k + 1] *
                                           th[k + 1]);

            if (mode == VariantMode::TradingConstraint) {
                // psi of vartheta/eta, then J in integrated form
                for (std::size_t k = 0; k < n; ++k) tmp[k] = b.E1.node[k] * pi[k] * th[k];
                auto Spsi = suffix_trapz(tmp);
                std::vector<double> psi(n), Pv(n);
                for (std::size_t k = 0; k < n; ++k) {
                    psi[k] = k + 1 == n ? 0.0 : Spsi[k] / b.alpha.node[k];
                    Pv[k] = dist.bigP(-psi[k]);
                }
                std::vector<double> w(n);
                for (std::size_t k = 0; k + 1 < n; ++k) {
                    const double A = b.A.node[k];
                    w[k] = (A * A - p.delta * p.kappa * A) / b.eta.node[k] * Pv[k];
                }
                // integrable limit of the apparently singular integrand
                w[n - 1] = -p0 * p.kappa * th[n - 1] / (2.0 * eta_T);
                auto Iw = suffix_trapz(w);
                for (std::size_t k = 0; k < n; ++k) {
                    const double lead =
                        k + 1 == n ? 0.0
                                   : -(b.A.node[k] - p.delta * p.kappa) * Pv[k];
                    J[k] = lead - Iw[k] - p.delta * Spith[k];
                }
            } else {  // DropOut: buyers always active, no entry kernel
                for (std::size_t k = 0; k < n; ++k) J[k] = (p0 - p.delta) * Spith[k];
            }
        }

        double diff = 0.0, scale = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            th_new[k] = theta * eta_T + G[k] + H[k] + J[k];
            diff = std::max(diff, std::abs(th_new[k] - th[k]));
            scale = std::max(scale, std::abs(th_new[k]));
        }
        th.swap(th_new);
        if (diff_log) diff_log->push_back(diff);
        if (diff <= tol * (1.0 + scale)) break;
        if (it + 1 == max_iter && diff > 1e-8 * (1.0 + scale))
            throw std::runtime_error("solve_backward_picard: no convergence");
        prev_diff = diff;
    }
    (void)prev_diff;

    std::vector<double> mu(n);
    for (std::size_t k = 0; k < n; ++k) mu[k] = th[k] * inv_eta[k];
    return mu;
}

// --------------------------------------------------------------------------
// Equilibrium search
// --------------------------------------------------------------------------

struct EquilibriumOptions {
    double tol = 1e-10;            ///< |rho| tolerance relative to max(1, E[nu])
    std::size_t scan_points = 32;  ///< outer bracketing scan density
    int inner_max_iter = 60;
    int outer_max_iter = 80;
};

struct EquilibriumResiduals {
    double rho1 = 0.0, rho2 = 0.0;
    double mass_error = 0.0;  // |int mu - E[nu]|
    double integral_residual = 0.0;
    double fixed_point_sup_error = std::numeric_limits<double>::quiet_NaN();
};

struct EquilibriumSolution {
    GridTable mu;
    double theta = 0.0, c = 0.0;
    EntryExitKernels kernels;
    BackwardSolution state;
    EquilibriumResiduals residuals;
    VariantMode mode = VariantMode::TradingConstraint;
    bool trivial = false;          ///< E[nu] = 0 short-circuit
    bool outer_monotone = false;   ///< uniqueness certificate from the scan
    bool multiple_roots = false;
    std::vector<double> roots_found;
    std::vector<double> scan_c, scan_rho2;
};

namespace detail {

struct InnerResult {
    double theta;
    BackwardSolution state;
};

// For fixed c: bisection on theta for rho1 = 0 (rho1 is strictly increasing
// in theta).
inline InnerResult solve_theta(double c, const RiccatiBundle& b, const PortfolioDistribution& d,
                               VariantMode mode, const EquilibriumOptions& opt) {
    const double mean = d.mean();
    double lo = 0.0, hi = mean * b.alpha_tilde_T() / b.eta.node.back();
    auto rho1_at = [&](double th, BackwardSolution& out) {
        out = solve_backward(th, c, b, d, mode, /*check_residual=*/false);
        return terminal_residual_rho1(out, b, d, mode);
    };
    BackwardSolution s_hi;
    double f_hi = rho1_at(hi, s_hi);
    for (int grow = 0; f_hi < 0.0 && grow < 8; ++grow) {  // theoretical bound, but be safe
        hi *= 1.5;
        f_hi = rho1_at(hi, s_hi);
    }
    InnerResult r;
    r.theta = hi;
    r.state = s_hi;
    const double tol = opt.tol * std::max(1.0, std::abs(mean));
    for (int it = 0; it < opt.inner_max_iter; ++it) {
        const double mid = 0.5 * (lo + hi);
        BackwardSolution s;
        const double f = rho1_at(mid, s);
        if (f >= 0.0) {
            hi = mid;
            r.theta = mid;
            r.state = s;
            if (std::abs(f) < tol) break;
        } else {
            lo = mid;
        }
        if (hi - lo < 1e-16 * std::max(1.0, hi)) break;
    }
    return r;
}

}  // namespace detail

/// Full nested solve for E[nu] > 0.  Throws NoBracketError with the scan
/// table when the outer map has no sign change; reports all roots and
/// returns the smallest when there are several.
inline EquilibriumSolution find_equilibrium(const RiccatiBundle& b,
                                            const PortfolioDistribution& dist, VariantMode mode,
                                            EquilibriumOptions opt = {}) {
    const double mean = dist.mean();
    if (!(mean > 0.0))
        throw std::domain_error("find_equilibrium: requires E[nu] > 0 (reflect or short-circuit)");

    EquilibriumSolution sol;
    sol.mode = mode;

    const auto diag = validate_params(b.params());
    const MonotoneCertificate cert = diag.condition_lambda_eta_monotone
                                         ? MonotoneCertificate::ConditionII
                                         : (diag.condition_lambda_small
                                                ? MonotoneCertificate::ConditionI
                                                : MonotoneCertificate::NumericCheck);

    if (mode == VariantMode::Unconstrained) {
        // one-dimensional: theta with mu_T = alpha~_T/eta_T (E[nu] - phi(T))
        auto inner = detail::solve_theta(0.0, b, dist, mode, opt);
        sol.theta = inner.theta;
        sol.state = inner.state;
        sol.c = sol.state.Phi.node.front();
        sol.state.c = sol.c;
    } else {
        const double qinv = dist.qinv_of_mean();
        double c_hi = qinv;
        if (!std::isfinite(c_hi)) c_hi = 4.0 * b.params().kappa * b.h_T() * mean;

        std::vector<double> roots;
        bool monotone = true;
        for (int expand = 0; expand < 8; ++expand) {
            sol.scan_c.clear();
            sol.scan_rho2.clear();
            const std::size_t m = opt.scan_points;
            std::vector<detail::InnerResult> scan(m);
            for (std::size_t j = 0; j < m; ++j) {
                const double cj = (std::isfinite(qinv) ? 0.9999999 : 1.0) * c_hi * double(j) /
                                  double(m - 1);
                scan[j] = detail::solve_theta(cj, b, dist, mode, opt);
                sol.scan_c.push_back(cj);
                sol.scan_rho2.push_back(exit_mass_residual_rho2(scan[j].state));
            }
            monotone = true;
            for (std::size_t j = 0; j + 1 < m; ++j)
                monotone &= sol.scan_rho2[j + 1] >= sol.scan_rho2[j];
            roots.clear();
            for (std::size_t j = 0; j + 1 < m; ++j) {
                if (sol.scan_rho2[j] == 0.0) {
                    roots.push_back(sol.scan_c[j]);
                    continue;
                }
                if (sol.scan_rho2[j] * sol.scan_rho2[j + 1] < 0.0) {
                    // Illinois refinement of the bracket
                    double a = sol.scan_c[j], fa = sol.scan_rho2[j];
                    double bb = sol.scan_c[j + 1], fb = sol.scan_rho2[j + 1];
                    detail::InnerResult best = scan[j + 1];
                    const double tol = opt.tol * std::max(1.0, mean);
                    int side = 0;
                    for (int it = 0; it < opt.outer_max_iter; ++it) {
                        const double cm = (a * fb - bb * fa) / (fb - fa);
                        auto r = detail::solve_theta(cm, b, dist, mode, opt);
                        const double fm = exit_mass_residual_rho2(r.state);
                        if (std::abs(fm) < tol || std::abs(bb - a) < 1e-14 * (1.0 + bb)) {
                            best = r;
                            break;
                        }
                        if (fm * fb < 0.0) {
                            a = bb;
                            fa = fb;
                            side = 0;
                        } else if (side == 1) {
                            fa *= 0.5;
                        } else {
                            side = 1;
                        }
                        bb = cm;
                        fb = fm;
                        best = r;
                    }
                    roots.push_back(best.state.c);
                    if (roots.size() == 1) {
                        sol.theta = best.theta;
                        sol.state = best.state;
                        sol.c = best.state.c;
                    }
                }
            }
            if (!roots.empty()) break;
            if (std::isfinite(qinv))
                throw NoBracketError("find_equilibrium: no sign change of rho2 on the scan",
                                     sol.scan_c, sol.scan_rho2);
            c_hi *= 2.0;  // no-buyer laws have no finite a-priori bound on c
            if (expand == 7)
                throw NoBracketError("find_equilibrium: no sign change of rho2 after expansion",
                                     sol.scan_c, sol.scan_rho2);
        }
        sol.outer_monotone = monotone;
        sol.roots_found = roots;
        sol.multiple_roots = roots.size() > 1;
    }

    sol.mu = sol.state.mu;
    sol.residuals.rho1 = terminal_residual_rho1(sol.state, b, dist, mode);
    sol.residuals.rho2 = mode == VariantMode::Unconstrained ? 0.0
                                                            : exit_mass_residual_rho2(sol.state);
    sol.residuals.mass_error = std::abs(sol.state.M.node.front() - mean);
    sol.residuals.integral_residual = backward_integral_residual(sol.state, b, dist, mode);
    sol.kernels = compute_kernels(sol.mu, b, cert);
    return sol;
}

/// Reflection wrapper: solves buyer-dominated markets on the mirrored law and
/// returns E[nu] = 0 as the trivial equilibrium.
struct SignedEquilibrium {
    EquilibriumSolution solution;  // of the (possibly reflected) problem
    bool reflected = false;
    PortfolioDistribution solved_dist;  // the law actually solved
};

inline SignedEquilibrium solve_equilibrium_auto(const RiccatiBundle& b,
                                                const PortfolioDistribution& dist,
                                                VariantMode mode, EquilibriumOptions opt = {}) {
    const double mean = dist.mean();
    if (mean > 0.0) return {find_equilibrium(b, dist, mode, opt), false, dist};
    if (mean < 0.0) {
        auto r = dist.reflected();
        return {find_equilibrium(b, r, mode, opt), true, r};
    }
    EquilibriumSolution sol;  // mu == 0: the unique equilibrium in the monotone class
    sol.mode = mode;
    sol.trivial = true;
    sol.mu = GridTable::zeros(b.grid());
    sol.state.mu = sol.mu;
    sol.state.psi = sol.mu;
    sol.state.Phi = sol.mu;
    sol.state.M = sol.mu;
    sol.kernels = compute_kernels(sol.mu, b, MonotoneCertificate::NumericCheck,
                                  /*require_strict=*/false);
    return {sol, false, dist};
}

/// Conservative growth constant for |mu_t| <= theta e^{K(T-t)} (engineering
/// bound assembled from the coefficient magnitudes; not a sharp value).
inline double gronwall_growth_constant(const RiccatiBundle& b) {
    const CostParams& p = b.params();
    double eta_min = std::numeric_limits<double>::infinity();
    double sup_etadot_over_eta = 0.0, sup_lambda_over_eta = 0.0, alpha_min =
        std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < b.grid().size(); ++k) {
        eta_min = std::min(eta_min, b.eta.node[k]);
        sup_etadot_over_eta = std::max(sup_etadot_over_eta,
                                       std::abs(b.eta_dot.node[k]) / b.eta.node[k]);
        sup_lambda_over_eta = std::max(sup_lambda_over_eta, b.lambda.node[k] / b.eta.node[k]);
        alpha_min = std::min(alpha_min, b.alpha.node[k]);
    }
    return (p.kappa / eta_min) * (1.0 + p.delta) + sup_etadot_over_eta +
           p.T * sup_lambda_over_eta * (1.0 + 2.0 * p.kappa / alpha_min);
}

}  // namespace liqgame
