#pragma once

// Market primitives: cost coefficients, the self-impact weight delta and the
// variant of the trading rule being solved.

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "liqgame/grid.hpp"

namespace liqgame {

/// Deterministic coefficient of time with an explicit derivative.  The
/// analytic families keep the backward marches exact; `Custom` is the escape
/// hatch for anything else.
class Coefficient {
public:
    static Coefficient constant(double c) { return Coefficient(Constant{c}); }
    /// a + b*t
    static Coefficient affine(double a, double b) { return Coefficient(Affine{a, b}); }
    /// a * exp(b*t)
    static Coefficient exponential(double a, double b) { return Coefficient(Exponential{a, b}); }
    static Coefficient custom(std::function<double(double)> value,
                              std::function<double(double)> derivative) {
        return Coefficient(Custom{std::move(value), std::move(derivative)});
    }

    double operator()(double t) const {
        if (auto* c = std::get_if<Constant>(&spec_)) return c->c;
        if (auto* a = std::get_if<Affine>(&spec_)) return a->a + a->b * t;
        if (auto* e = std::get_if<Exponential>(&spec_)) return e->a * std::exp(e->b * t);
        return std::get<Custom>(spec_).value(t);
    }

    double derivative(double t) const {
        if (std::get_if<Constant>(&spec_)) return 0.0;
        if (auto* a = std::get_if<Affine>(&spec_)) return a->b;
        if (auto* e = std::get_if<Exponential>(&spec_)) return e->a * e->b * std::exp(e->b * t);
        return std::get<Custom>(spec_).derivative(t);
    }

    bool is_constant() const { return std::holds_alternative<Constant>(spec_); }

private:
    struct Constant { double c; };
    struct Affine { double a, b; };
    struct Exponential { double a, b; };
    struct Custom {
        std::function<double(double)> value, derivative;
    };
    using Spec = std::variant<Constant, Affine, Exponential, Custom>;

    explicit Coefficient(Spec s) : spec_(std::move(s)) {}
    Spec spec_;
};

/// Which trading rule the equilibrium equation encodes.
///  - TradingConstraint: players may never change trading direction.
///  - DropOut: players leave when the position hits zero (psi and ell drop
///    out of the equation).
///  - Unconstrained: no constraint at all (active mass identically one).
enum class VariantMode { TradingConstraint, DropOut, Unconstrained };

inline const char* to_string(VariantMode m) {
    switch (m) {
        case VariantMode::TradingConstraint: return "trading_constraint";
        case VariantMode::DropOut: return "drop_out";
        case VariantMode::Unconstrained: return "unconstrained";
    }
    return "?";
}

struct CostParams {
    double T = 1.0;          ///< trading horizon
    Coefficient eta = Coefficient::constant(1.0);     ///< instantaneous impact, > 0
    Coefficient lambda = Coefficient::constant(0.0);  ///< risk penalty, >= 0
    double kappa = 1.0;      ///< permanent impact, > 0
    double delta = 0.0;      ///< self-impact weight: 0 (mean-field) or 1/N

    static CostParams constants(double T, double eta, double lambda, double kappa,
                                double delta = 0.0) {
        CostParams p;
        p.T = T;
        p.eta = Coefficient::constant(eta);
        p.lambda = Coefficient::constant(lambda);
        p.kappa = kappa;
        p.delta = delta;
        return p;
    }
};

/// Result of the static coefficient checks: hard invariant violations plus
/// the two sufficient conditions under which the entry kernel is known to be
/// strictly decreasing.  If neither condition holds the solver still runs but
/// must certify monotonicity of psi numerically.
struct ParamDiagnostics {
    bool valid = true;
    std::vector<std::string> violations;
    bool condition_lambda_small = false;     // sup(lambda) * (int 1/eta~)^2 / 2 < min 1/eta
    bool condition_lambda_eta_monotone = false;  // t -> lambda*eta non-decreasing
    bool needs_numeric_psi_check() const {
        return !(condition_lambda_small || condition_lambda_eta_monotone);
    }
};

/// Pure: the predicates are evaluated on a fixed internal sampling of [0, T].
inline ParamDiagnostics validate_params(const CostParams& p) {
    ParamDiagnostics d;
    auto fail = [&](std::string msg) {
        d.valid = false;
        d.violations.push_back(std::move(msg));
    };
    if (!(p.T > 0.0)) fail("T must be positive");
    if (!(p.kappa > 0.0)) fail("kappa must be positive");
    if (!(p.delta >= 0.0 && p.delta <= 1.0)) fail("delta must lie in [0, 1]");

    constexpr std::size_t samples = 1025;
    const double T = p.T > 0.0 ? p.T : 1.0;
    std::vector<double> eta(samples), lam(samples);
    double min_inv_eta = std::numeric_limits<double>::infinity();
    double sup_lambda = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const double t = T * double(i) / double(samples - 1);
        eta[i] = p.eta(t);
        lam[i] = p.lambda(t);
        if (!(eta[i] > 0.0)) {
            fail("eta must be positive on [0, T]");
            return d;
        }
        if (lam[i] < 0.0) {
            fail("lambda must be non-negative on [0, T]");
            return d;
        }
        min_inv_eta = std::min(min_inv_eta, 1.0 / eta[i]);
        sup_lambda = std::max(sup_lambda, lam[i]);
    }
    if (!d.valid) return d;

    // Condition (i): sup(lambda) * (int_0^T 1/eta~)^2 / 2 < min 1/eta, where
    // eta~ = eta * exp(-int_0^t delta*kappa/eta), i.e. 1/eta~ carries the
    // positive exponential tilt.
    double tilt = 0.0, int_inv_eta_tilde = 0.0;
    for (std::size_t i = 0; i + 1 < samples; ++i) {
        const double dt = T / double(samples - 1);
        const double g0 = std::exp(tilt) / eta[i];
        tilt += dt * 0.5 * (p.delta * p.kappa / eta[i] + p.delta * p.kappa / eta[i + 1]);
        const double g1 = std::exp(tilt) / eta[i + 1];
        int_inv_eta_tilde += dt * 0.5 * (g0 + g1);
    }
    d.condition_lambda_small = sup_lambda * 0.5 * int_inv_eta_tilde * int_inv_eta_tilde < min_inv_eta;

    // Condition (ii): lambda * eta non-decreasing.
    d.condition_lambda_eta_monotone = true;
    for (std::size_t i = 0; i + 1 < samples; ++i) {
        if (lam[i + 1] * eta[i + 1] < lam[i] * eta[i] - 1e-14 * (1.0 + lam[i] * eta[i])) {
            d.condition_lambda_eta_monotone = false;
            break;
        }
    }
    return d;
}

}  // namespace liqgame
