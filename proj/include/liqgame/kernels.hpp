#pragma once

// Entry/exit kernels and the timing maps they induce.
//
//   psi(t) = 1/alpha(t) * int_t^tau E1(s) kappa mu_s ds   (buyer entry kernel)
//   phi(t) = int_0^t kappa mu_u h_u du                    (seller exit kernel)
//
// A buyer with position x < 0 enters at the unique time psi(sigma) = -x
// (immediately if |x| >= psi(0)); a seller with x > 0 exits at the first
// time phi(tau) = x (never, if x >= phi(T)).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "liqgame/grid.hpp"
#include "liqgame/riccati.hpp"

namespace liqgame {

enum class MonotoneCertificate { ConditionI, ConditionII, NumericCheck };

inline const char* to_string(MonotoneCertificate c) {
    switch (c) {
        case MonotoneCertificate::ConditionI: return "lambda_small";
        case MonotoneCertificate::ConditionII: return "lambda_eta_monotone";
        case MonotoneCertificate::NumericCheck: return "numeric_check";
    }
    return "?";
}

struct MonotonicityViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EntryExitKernels {
    GridTable psi;
    GridTable phi;
    double psi_at_0 = 0.0;
    double phi_at_T = 0.0;
    MonotoneCertificate certificate = MonotoneCertificate::NumericCheck;

    // Linear interpolation between nodes, matching the timing maps below.
    double psi_at(const TimeGrid& g, double t) const { return interp_nodes(g, psi.node, t); }
    double phi_at(const TimeGrid& g, double t) const { return interp_nodes(g, phi.node, t); }
};

/// Entry kernel for the aggregate rate `mu` (>= 0) up to exit time tau.
/// Strict decrease is certified by a sufficient condition on the
/// coefficients when one applies, otherwise checked numerically; a
/// violation aborts (the timing reduction is invalid then).
inline GridTable compute_psi(const GridTable& mu, const RiccatiBundle& b, double tau,
                             bool require_strict = true) {
    const TimeGrid& g = b.grid();
    const double kappa = b.params().kappa;
    GridTable f = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k) f.node[k] = kappa * mu.node[k] * b.E1.node[k];
    for (std::size_t k = 0; k < g.intervals(); ++k) f.mid[k] = kappa * mu.mid[k] * b.E1.mid[k];
    CumulativeIntegral F(g, f);
    const double F_tau = F.to(tau);

    GridTable psi = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double t = g.node(k);
        psi.node[k] = t >= tau ? 0.0 : (F_tau - F.at_node(k)) / b.alpha.node[k];
    }
    for (std::size_t k = 0; k < g.intervals(); ++k) {
        const double t = g.mid(k);
        psi.mid[k] = t >= tau ? 0.0 : (F_tau - F.to(t)) / b.alpha.mid[k];
    }

    if (require_strict) {
        bool mu_positive = true;
        for (double v : mu.node) mu_positive &= v > 0.0;
        if (mu_positive) {
            for (std::size_t k = 0; k + 1 < g.size() && g.node(k + 1) <= tau; ++k)
                if (!(psi.node[k + 1] < psi.node[k]))
                    throw MonotonicityViolation("compute_psi: entry kernel not strictly decreasing");
        }
    }
    return psi;
}

/// Exit kernel phi(t) = int_0^t kappa mu h.
inline GridTable compute_phi(const GridTable& mu, const RiccatiBundle& b) {
    const TimeGrid& g = b.grid();
    const double kappa = b.params().kappa;
    GridTable f = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k) f.node[k] = kappa * mu.node[k] * b.h.node[k];
    for (std::size_t k = 0; k < g.intervals(); ++k) f.mid[k] = kappa * mu.mid[k] * b.h.mid[k];
    CumulativeIntegral F(g, f);
    GridTable phi = GridTable::zeros(g);
    for (std::size_t k = 0; k < g.size(); ++k) phi.node[k] = F.at_node(k);
    for (std::size_t k = 0; k < g.intervals(); ++k) phi.mid[k] = F.to(g.mid(k));
    return phi;
}

inline EntryExitKernels compute_kernels(const GridTable& mu, const RiccatiBundle& b,
                                        MonotoneCertificate certificate,
                                        bool require_strict = true) {
    EntryExitKernels k;
    k.psi = compute_psi(mu, b, b.params().T, require_strict);
    k.phi = compute_phi(mu, b);
    k.psi_at_0 = k.psi.node.front();
    k.phi_at_T = k.phi.node.back();
    k.certificate = certificate;
    return k;
}

/// Buyer entry time: sigma = 0 when |x| >= psi(0), else the unique root of
/// psi(sigma) = -x on the piecewise-linear kernel (inf of the empty set is 0).
inline double entry_time(double x, const TimeGrid& g, const EntryExitKernels& k) {
    if (!(x < 0.0)) throw std::invalid_argument("entry_time: x must be negative");
    const double y = -x;
    const auto& psi = k.psi.node;
    if (y >= psi.front()) return 0.0;
    // psi decreasing: first node with psi <= y, root in the interval before it
    std::size_t lo = 0, hi = g.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (psi[mid] > y ? lo : hi) = mid;
    }
    const double drop = psi[lo] - psi[hi];
    if (drop <= 0.0) return g.node(lo);
    return g.node(lo) + (psi[lo] - y) / drop * g.dt(lo);
}

/// Seller exit time: tau = T when x >= phi(T), else the left-most root of
/// phi(tau) = x (inf of the empty set is T).
inline double exit_time(double x, const TimeGrid& g, const EntryExitKernels& k) {
    if (!(x > 0.0)) throw std::invalid_argument("exit_time: x must be positive");
    const auto& phi = k.phi.node;
    if (x >= phi.back()) return g.horizon();
    // first node with phi >= x; flat stretches resolve to the left-most root
    std::size_t lo = 0, hi = g.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (phi[mid] < x ? lo : hi) = mid;
    }
    if (phi[hi] <= x && hi + 1 < g.size()) {
        // exact plateau hit: walk left to the first node attaining x
        while (lo > 0 && phi[lo] >= x) --lo;
    }
    const double rise = phi[hi] - phi[lo];
    if (rise <= 0.0) return g.node(lo);
    return g.node(lo) + (x - phi[lo]) / rise * g.dt(lo);
}

struct MuDiagnostics {
    bool sign_constant = true;
    int sign = 0;  // +1, -1, or 0 for mu == 0
    bool eta_mu_monotone = true;
    double worst_monotone_violation = 0.0;
};

/// Checks the standing assumptions on an aggregate rate: constant sign, and
/// t -> eta_t mu_t non-increasing (non-decreasing for negative mu).
inline MuDiagnostics check_mu_assumptions(const GridTable& mu, const CostParams& p,
                                          const TimeGrid& g) {
    MuDiagnostics d;
    double scale = 0.0;
    for (double v : mu.node) scale = std::max(scale, std::abs(v));
    const double tol = 1e-12 * (1.0 + scale);
    bool has_pos = false, has_neg = false;
    for (double v : mu.node) {
        has_pos |= v > tol;
        has_neg |= v < -tol;
    }
    d.sign_constant = !(has_pos && has_neg);
    d.sign = has_pos ? +1 : (has_neg ? -1 : 0);

    const int s = d.sign == 0 ? +1 : d.sign;
    double prev = p.eta(g.node(0)) * mu.node[0];
    for (std::size_t k = 1; k < g.size(); ++k) {
        const double cur = p.eta(g.node(k)) * mu.node[k];
        const double viol = s * (cur - prev);  // positive = violation
        if (viol > tol) {
            d.eta_mu_monotone = false;
            d.worst_monotone_violation = std::max(d.worst_monotone_violation, viol);
        }
        prev = cur;
    }
    return d;
}

}  // namespace liqgame
