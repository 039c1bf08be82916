#pragma once

// Singular Riccati equation
//
//     -dA/dt = -A^2/eta + delta*kappa*A/eta + lambda,   A(t) -> inf as t -> T,
//
// solved together with every derived quantity the rest of the library needs:
// the decaying exponentials E1 = exp(-int_0^t A/eta) and
// E2 = exp(-int_0^t (A - delta*kappa)/eta), the bounded products
// alpha = (A - delta*kappa) E1 and alpha~ = (A - delta*kappa) E2, and the
// exit-time weight h.
//
// The singularity never enters a quadrature: A is integrated through its
// reciprocal R = 1/A (regular at T, R(T) = 0), the log-singular part of
// int A/eta is split off analytically as -log((T-t)/T), and h comes from the
// identity  h = 1/alpha~ - E1 * (1/alpha~(0) + int_0^t lambda/(alpha alpha~))
// whose terms are all smooth and bounded.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "liqgame/grid.hpp"
#include "liqgame/params.hpp"

namespace liqgame {

/// A(t) ~ eta_T/(T-t) + shift + curvature*(T-t) near the horizon, with
/// shift = (delta*kappa - eta_dot(T))/2 and the curvature matched from the
/// ODE at the next order (exact for constant coefficients).
struct RiccatiAsymptote {
    double eta_T = 1.0;
    double shift = 0.0;
    double curvature = 0.0;
    double window = 0.0;  ///< points with T-t < window are filled from the asymptote

    double A(double T, double t) const {
        return eta_T / (T - t) + shift + curvature * (T - t);
    }
};

class RiccatiBundle {
public:
    RiccatiBundle(const CostParams& params, TimeGrid grid, double asym_window_rel = 1e-3)
        : params_(params), grid_(std::move(grid)) {
        const auto diag = validate_params(params_);
        if (!diag.valid) throw std::invalid_argument("RiccatiBundle: " + diag.violations.front());
        build(asym_window_rel);
    }

    const TimeGrid& grid() const { return grid_; }
    const CostParams& params() const { return params_; }
    double delta() const { return params_.delta; }

    // Tables at grid nodes and midpoints.  A.node.back() is +inf; the
    // regularized tables below are the ones downstream code consumes.
    GridTable A;
    GridTable inv_A_dk;     ///< 1/(A - delta*kappa), exactly 0 at T
    GridTable E1;           ///< exp(-int_0^t A/eta), exactly 0 at T
    GridTable E2;           ///< exp(-int_0^t (A-delta*kappa)/eta), exactly 0 at T
    GridTable alpha;        ///< (A - delta*kappa) E1, finite on [0, T]
    GridTable alpha_tilde;  ///< (A - delta*kappa) E2, finite on [0, T]
    GridTable h;
    GridTable hdot;
    GridTable eta, eta_dot, lambda;  ///< coefficient samples

    RiccatiAsymptote asymptote;

    double alpha_tilde_T() const { return alpha_tilde.node.back(); }
    double alpha_T() const { return alpha.node.back(); }
    double h_T() const { return h.node.back(); }
    bool closed_form() const { return closed_form_; }

private:
    // Half-lattice: even index = node i/2, odd index = midpoint (i-1)/2.
    std::size_t points() const { return 2 * grid_.size() - 1; }
    double tw(std::size_t i) const { return (i % 2 == 0) ? grid_.node(i / 2) : grid_.mid(i / 2); }

    template <class F>
    GridTable fill(F&& f) const {
        GridTable t = GridTable::zeros(grid_);
        for (std::size_t k = 0; k < grid_.size(); ++k) t.node[k] = f(2 * k);
        for (std::size_t k = 0; k + 1 < grid_.size(); ++k) t.mid[k] = f(2 * k + 1);
        return t;
    }

    void build(double asym_window_rel) {
        const double T = params_.T;
        const double dk = params_.delta * params_.kappa;

        eta = GridTable::sample(grid_, [&](double t) { return params_.eta(t); });
        eta_dot = GridTable::sample(grid_, [&](double t) { return params_.eta.derivative(t); });
        lambda = GridTable::sample(grid_, [&](double t) { return params_.lambda(t); });

        const double eta_T = params_.eta(T);
        asymptote.eta_T = eta_T;
        asymptote.shift = 0.5 * (dk - params_.eta.derivative(T));
        asymptote.curvature = (params_.lambda(T) + dk * dk / (4.0 * eta_T)) / 3.0;
        asymptote.window = asym_window_rel * T;

        const std::size_t m = points();
        std::vector<double> Aw(m), Jw(m), Jkw(m);  // A and the smooth remainders
        closed_form_ = params_.delta == 0.0 && params_.eta.is_constant() &&
                       params_.lambda.is_constant();
        if (closed_form_)
            tabulate_closed_form(Aw, Jw, Jkw);
        else
            tabulate_march(Aw, Jw, Jkw);

        const double JA_T = Jw.back(), JAk_T = Jkw.back();

        auto e1_at = [&](std::size_t i) {
            return i + 1 == m ? 0.0 : ((T - tw(i)) / T) * std::exp(-Jw[i]);
        };
        auto e2_at = [&](std::size_t i) {
            return i + 1 == m ? 0.0 : ((T - tw(i)) / T) * std::exp(-Jkw[i]);
        };
        E1 = fill(e1_at);
        E2 = fill(e2_at);
        A = fill([&](std::size_t i) {
            return i + 1 == m ? std::numeric_limits<double>::infinity() : Aw[i];
        });
        inv_A_dk = fill([&](std::size_t i) { return i + 1 == m ? 0.0 : 1.0 / (Aw[i] - dk); });
        alpha = fill([&](std::size_t i) {
            return i + 1 == m ? (eta_T / T) * std::exp(-JA_T) : (Aw[i] - dk) * e1_at(i);
        });
        alpha_tilde = fill([&](std::size_t i) {
            return i + 1 == m ? (eta_T / T) * std::exp(-JAk_T) : (Aw[i] - dk) * e2_at(i);
        });

        // S(t) = int_0^t lambda/(alpha alpha~): smooth, trapezoid on the
        // half lattice.
        std::vector<double> S(m, 0.0);
        auto integrand = [&](std::size_t i) {
            const double a = (i % 2 == 0) ? alpha.node[i / 2] : alpha.mid[i / 2];
            const double at = (i % 2 == 0) ? alpha_tilde.node[i / 2] : alpha_tilde.mid[i / 2];
            const double lam = params_.lambda(tw(i));
            return lam / (a * at);
        };
        double prev = integrand(0);
        for (std::size_t i = 1; i < m; ++i) {
            const double cur = integrand(i);
            S[i] = S[i - 1] + 0.5 * (tw(i) - tw(i - 1)) * (prev + cur);
            prev = cur;
        }
        if (closed_form_ && params_.lambda(0.0) > 0.0) {
            // exact form, keeps h at machine precision for the benchmark case
            const double ec = params_.eta(0.0), lc = params_.lambda(0.0);
            const double g = std::sqrt(lc / ec), sh = std::sinh(g * T);
            for (std::size_t i = 0; i < m; ++i)
                S[i] = sh * sh / ec * (std::tanh(g * T) - std::tanh(g * (T - tw(i)))) / g;
        }

        const double inv_at0 = 1.0 / alpha_tilde.node.front();
        auto h_at = [&](std::size_t i) {
            const double at = (i % 2 == 0) ? alpha_tilde.node[i / 2] : alpha_tilde.mid[i / 2];
            const double e1 = (i % 2 == 0) ? E1.node[i / 2] : E1.mid[i / 2];
            return 1.0 / at - e1 * (inv_at0 + S[i]);
        };
        h = fill(h_at);
        h.node.front() = 0.0;
        hdot = fill([&](std::size_t i) {
            const double a = (i % 2 == 0) ? alpha.node[i / 2] : alpha.mid[i / 2];
            const double at = (i % 2 == 0) ? alpha_tilde.node[i / 2] : alpha_tilde.mid[i / 2];
            const double e1 = (i % 2 == 0) ? E1.node[i / 2] : E1.mid[i / 2];
            const double et = params_.eta(tw(i));
            return (-dk / at + (a + dk * e1) * (inv_at0 + S[i])) / et;
        });

        check_residual(Aw);
    }

    // delta = 0, constant eta and lambda: coth closed form.
    void tabulate_closed_form(std::vector<double>& Aw, std::vector<double>& Jw,
                              std::vector<double>& Jkw) {
        const double T = params_.T;
        const double ec = params_.eta(0.0), lc = params_.lambda(0.0);
        const std::size_t m = points();
        if (lc == 0.0) {
            for (std::size_t i = 0; i < m; ++i) {
                const double s = T - tw(i);
                Aw[i] = i + 1 == m ? std::numeric_limits<double>::infinity() : ec / s;
                Jw[i] = 0.0;
                Jkw[i] = 0.0;
            }
            return;
        }
        const double g = std::sqrt(lc / ec);
        for (std::size_t i = 0; i < m; ++i) {
            const double s = T - tw(i);
            if (i + 1 == m) {
                Aw[i] = std::numeric_limits<double>::infinity();
                Jw[i] = std::log(std::sinh(g * T) / (g * T));
            } else {
                Aw[i] = std::sqrt(ec * lc) / std::tanh(g * s);
                Jw[i] = std::log(s * std::sinh(g * T) / (T * std::sinh(g * s)));
            }
            Jkw[i] = Jw[i];
        }
    }

    // General coefficients: march (R, B, Bk) backwards from the asymptote at
    // t = T - window, where R = 1/A,
    //   B(t)  = int_t^T (A/eta - 1/(T-r)) dr,
    //   Bk(t) = B(t) - int_t^T delta*kappa/eta dr,
    // then J(t) = B(0) - B(t).
    void tabulate_march(std::vector<double>& Aw, std::vector<double>& Jw,
                        std::vector<double>& Jkw) {
        const double T = params_.T;
        const double dk = params_.delta * params_.kappa;
        const std::size_t m = points();
        const double t_start = T - asymptote.window;

        // limits of the smooth integrands at T
        const double etad_T = params_.eta.derivative(T);
        const double gA_lim = (etad_T + dk) / (2.0 * params_.eta(T));
        const double gAk_lim = (etad_T - dk) / (2.0 * params_.eta(T));

        auto rhs = [&](double t, const double y[3], double dy[3]) {
            const double et = params_.eta(t);
            const double lam = params_.lambda(t);
            const double R = y[0];
            dy[0] = -1.0 / et + dk / et * R + lam * R * R;
            const double gA = (T - t - et * R) / (et * R * (T - t));
            dy[1] = -gA;
            dy[2] = -(gA - dk / et);
        };

        std::vector<double> Bw(m, 0.0), Bkw(m, 0.0);
        double y[3] = {1.0 / asymptote.A(T, t_start), gA_lim * asymptote.window,
                       gAk_lim * asymptote.window};

        double t_cur = t_start;
        const double sub_max = std::max(asymptote.window, 1e-3 * T);
        for (std::size_t ii = m; ii-- > 0;) {
            const double t_target = tw(ii);
            if (t_target >= t_start - 1e-15 * T) {
                // inside the asymptote window
                Aw[ii] = ii + 1 == m ? std::numeric_limits<double>::infinity()
                                     : asymptote.A(T, t_target);
                Bw[ii] = gA_lim * (T - t_target);
                Bkw[ii] = gAk_lim * (T - t_target);
                continue;
            }
            const double span = t_cur - t_target;
            const auto steps = std::max<std::size_t>(1, std::size_t(std::ceil(span / sub_max)));
            const double dt = -span / double(steps);
            for (std::size_t s = 0; s < steps; ++s) {
                double k1[3], k2[3], k3[3], k4[3], tmp[3];
                rhs(t_cur, y, k1);
                for (int j = 0; j < 3; ++j) tmp[j] = y[j] + 0.5 * dt * k1[j];
                rhs(t_cur + 0.5 * dt, tmp, k2);
                for (int j = 0; j < 3; ++j) tmp[j] = y[j] + 0.5 * dt * k2[j];
                rhs(t_cur + 0.5 * dt, tmp, k3);
                for (int j = 0; j < 3; ++j) tmp[j] = y[j] + dt * k3[j];
                rhs(t_cur + dt, tmp, k4);
                for (int j = 0; j < 3; ++j)
                    y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                t_cur += dt;
            }
            t_cur = t_target;
            if (!(y[0] > 0.0))
                throw std::runtime_error("RiccatiBundle: reciprocal variable left (0, inf)");
            Aw[ii] = 1.0 / y[0];
            Bw[ii] = y[1];
            Bkw[ii] = y[2];
        }
        for (std::size_t i = 0; i < m; ++i) {
            Jw[i] = Bw[0] - Bw[i];
            Jkw[i] = Bkw[0] - Bkw[i];
        }
    }

    // A-posteriori consistency: centered differences of the reciprocal
    // variable (smooth through T) must reproduce the ODE.
    void check_residual(const std::vector<double>& Aw) const {
        const double T = params_.T;
        const double dk = params_.delta * params_.kappa;
        const std::size_t m = points();
        for (std::size_t i = 1; i + 2 < m; ++i) {
            if (T - tw(i) < 10.0 * asymptote.window) break;
            const double h0 = tw(i) - tw(i - 1), h1 = tw(i + 1) - tw(i);
            const double R0 = 1.0 / Aw[i - 1], R1 = 1.0 / Aw[i], R2 = 1.0 / Aw[i + 1];
            // three-point derivative on a non-uniform stencil
            const double Rdot = (-h1 / (h0 * (h0 + h1))) * R0 +
                                ((h1 - h0) / (h0 * h1)) * R1 +
                                (h0 / (h1 * (h0 + h1))) * R2;
            const double Adot = -Rdot / (R1 * R1);
            const double et = params_.eta(tw(i)), lam = params_.lambda(tw(i));
            const double resid = -Adot + Aw[i] * Aw[i] / et - dk * Aw[i] / et - lam;
            // 1e-6 relative on production grids; the h^2 term keeps the guard
            // meaningful on deliberately coarse test grids.
            const double tol = (1e-6 + h0 * h1) * (1.0 + Aw[i] * Aw[i] / et);
            if (!(std::abs(resid) < tol))
                throw std::runtime_error("RiccatiBundle: ODE residual tolerance not met");
        }
    }

    CostParams params_;
    TimeGrid grid_;
    bool closed_form_ = false;
};

inline RiccatiBundle solve_riccati(const CostParams& params, const TimeGrid& grid) {
    return RiccatiBundle(params, grid);
}

}  // namespace liqgame
