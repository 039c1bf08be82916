// Acceptance suite: one quantitative criterion per block, each printed as a
// single pass/fail line.  Exit code is the number of failed criteria.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "liqgame/liqgame.hpp"

using namespace liqgame;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", ok ? "PASS" : "FAIL", id, what.c_str(),
                detail.c_str());
    if (!ok) ++failures;
}

std::string fmt(double v) {
    char b[64];
    std::snprintf(b, sizeof(b), "%.6g", v);
    return b;
}

double sup_node(const GridTable& t) {
    double s = 0.0;
    for (double v : t.node) s = std::max(s, std::abs(v));
    return s;
}

}  // namespace

int main() {
    // Benchmark scenario: eta = 5, kappa = 10, lambda = 5, T = 1,
    // q(x) = 0.8 e^{-2x/3}, p(x) = 0.2 e^x  (E[nu] = 1).
    const TimeGrid g = build_grid(1.0, 2001, 4.0);
    const CostParams params = CostParams::constants(1.0, 5.0, 5.0, 10.0, 0.0);
    const auto dist = PortfolioDistribution::exp_mixture(0.8, 2.0 / 3.0, 0.2, 1.0);
    const RiccatiBundle bundle(params, g);
    const EquilibriumSolution sol =
        find_equilibrium(bundle, dist, VariantMode::TradingConstraint);
    const double mu_sup = sup_node(sol.mu);

    // 1. existence inside the parameter box + mass identity
    {
        const double th_max = dist.mean() * bundle.alpha_tilde_T() / 5.0;
        const double qinv = dist.qinv_of_mean();
        const double mass = sol.state.M.node.front();
        const bool ok = sol.theta > 0.0 && sol.theta < th_max && sol.c >= 0.0 && sol.c < qinv &&
                        std::abs(mass - 1.0) < 1e-3;
        report(1, ok, "benchmark equilibrium exists with the mass identity",
               "theta=" + fmt(sol.theta) + " in (0," + fmt(th_max) + "), c=" + fmt(sol.c) +
                   " in [0," + fmt(qinv) + "), |int mu - 1|=" + fmt(std::abs(mass - 1.0)));
    }

    // 2. sign and monotone impact, exact on the grid
    {
        bool pos = true, dec = true;
        for (double v : sol.mu.node) pos &= v > 0.0;
        for (std::size_t k = 0; k + 1 < g.size(); ++k)
            dec &= 5.0 * sol.mu.node[k + 1] < 5.0 * sol.mu.node[k];
        report(2, pos && dec, "mu > 0 and eta mu strictly decreasing at every node",
               std::string("positive=") + (pos ? "yes" : "no") + ", decreasing=" +
                   (dec ? "yes" : "no"));
    }

    // 3. fixed-point self-consistency, halving under stratum doubling
    {
        const double e512 = fixed_point_selfcheck(sol, bundle, dist, 512);
        const double e1024 = fixed_point_selfcheck(sol, bundle, dist, 1024);
        const bool ok = e512 < 1e-3 * mu_sup && e1024 <= 0.55 * e512 + 1e-6 * mu_sup;
        report(3, ok, "sup|F(mu)-mu| small and halving under stratum doubling",
               "err512=" + fmt(e512 / mu_sup) + " err1024=" + fmt(e1024 / mu_sup) +
                   " (relative)");
    }

    // 4. backward march vs Picard iteration
    {
        const auto mu_p = solve_backward_picard(sol.theta, sol.c, bundle, dist,
                                                VariantMode::TradingConstraint);
        double sup = 0.0;
        for (std::size_t k = 0; k < mu_p.size(); ++k)
            sup = std::max(sup, std::abs(mu_p[k] - sol.mu.node[k]));
        report(4, sup < 1e-4 * mu_sup, "march and Picard agree",
               "sup gap=" + fmt(sup / mu_sup) + " (relative, tol 1e-4)");
    }

    // 5. Riccati closed form + Appendix lower bound for delta > 0
    {
        double worst = 0.0;
        for (std::size_t k = 0; k + 1 < g.size(); ++k) {
            const double s = 1.0 - g.node(k);
            if (s < bundle.asymptote.window) break;
            const double sh = std::sinh(s);
            const double Adot = 5.0 / (sh * sh);  // independent closed-form derivative
            const double A = bundle.A.node[k];
            worst = std::max(worst, std::abs(-Adot + A * A / 5.0 - 5.0));
        }
        bool bound_ok = true;
        for (double N : {7.0, 100.0}) {
            const CostParams pN = CostParams::constants(1.0, 5.0, 5.0, 10.0, 1.0 / N);
            const RiccatiBundle bN(pN, g);
            const double dk = 10.0 / N;
            for (std::size_t k = 0; k + 1 < g.size(); ++k) {
                const double t = g.node(k);
                const double Ao = dk / (std::exp(dk / 5.0) - std::exp(dk * t / 5.0));
                bound_ok &= bN.A.node[k] - dk >= std::exp(dk * t / 5.0) * Ao * (1.0 - 1e-9);
            }
        }
        report(5, worst < 1e-8 && bound_ok, "Riccati closed form and tilted lower bound",
               "max residual=" + fmt(worst) + ", lower bound held=" +
                   (bound_ok ? "yes" : "no"));
    }

    // 6. timing structure: thresholds from kernels and from the QP oracle
    {
        PathEngine engine(sol.mu, bundle);
        const double psi0 = engine.kernels().psi_at_0;
        const double phiT = engine.kernels().phi_at_T;
        bool ok = psi0 > 0.0 && phiT > 0.0;
        double prev_sigma = 1e9;
        for (double f : {0.2, 0.5, 0.8}) {
            const PlayerPath p = engine.buyer_path(-f * psi0);
            ok &= p.sigma > 0.0 && p.sigma < prev_sigma;
            prev_sigma = p.sigma;
        }
        ok &= engine.buyer_path(-1.2 * psi0).sigma == 0.0;
        double prev_tau = 0.0;
        for (double f : {0.2, 0.5, 0.8}) {
            const PlayerPath p = engine.seller_path(f * phiT);
            ok &= p.tau < 1.0 && p.tau >= prev_tau;
            prev_tau = p.tau;
        }
        ok &= engine.seller_path(1.2 * phiT).tau == 1.0;

        // the same thresholds must emerge from the QP active sets
        const std::size_t m = 200;
        std::vector<double> mu_c(m);
        for (std::size_t j = 0; j < m; ++j)
            mu_c[j] = interp_table(g, sol.mu, (double(j) + 0.5) / double(m));
        double qp_detail = 0.0;
        for (double f : {0.35, 0.7}) {
            const double x = -f * psi0;
            const auto qp = best_response_qp(x, mu_c, params, m);
            std::size_t first = m;
            for (std::size_t j = 0; j < m; ++j)
                if (std::abs(qp.rates[j]) > 1e-7 * std::abs(x)) {
                    first = j;
                    break;
                }
            const double sigma = engine.buyer_path(x).sigma;
            const double gap = std::abs((double(first) + 0.5) / double(m) - sigma);
            qp_detail = std::max(qp_detail, gap);
            ok &= gap < 2.5 / double(m);
        }
        for (double f : {0.4, 0.8}) {
            const double x = f * phiT;
            const auto qp = best_response_qp(x, mu_c, params, m);
            std::size_t last = 0;
            for (std::size_t j = 0; j < m; ++j)
                if (std::abs(qp.rates[j]) > 1e-7 * std::abs(x)) last = j;
            const double tau = engine.seller_path(x).tau;
            const double gap = std::abs((double(last) + 0.5) / double(m) - tau);
            qp_detail = std::max(qp_detail, gap);
            ok &= gap < 2.5 / double(m);
        }
        report(6, ok, "entry/exit structure and QP active-set thresholds",
               "psi0=" + fmt(psi0) + " phiT=" + fmt(phiT) + " worst qp threshold gap=" +
                   fmt(qp_detail));
    }

    // 7. Nash property under random admissible deviations
    {
        const auto mfg = nash_deviation_test(sol, bundle, dist, 100, 20240817);
        const std::vector<double> xs = {-0.6, -0.3, 0.4, 0.6, 1.3, 2.1, 3.5};
        const auto d7 = PortfolioDistribution::empirical(xs);
        const CostParams p7 = CostParams::constants(1.0, 5.0, 5.0, 10.0, 1.0 / 7.0);
        const RiccatiBundle b7(p7, g);
        const auto sol7 = find_equilibrium(b7, d7, VariantMode::TradingConstraint);
        const auto np = nash_deviation_test(sol7, b7, d7, 100, 20240817);
        const bool ok = mfg.min_cost_increase > -1e-6 * mfg.cost_scale &&
                        np.min_cost_increase > -1e-6 * np.cost_scale;
        report(7, ok, "no profitable deviation (mean-field and 7 players)",
               "min increase mfg=" + fmt(mfg.min_cost_increase) +
                   " nplayer=" + fmt(np.min_cost_increase) + ", seed 20240817");
    }

    // 8. sensitivity bounds
    {
        const auto rep =
            sensitivity_check(bundle, dist, VariantMode::TradingConstraint, sol.theta, sol.c);
        const bool ok = rep.min_dvartheta_dtheta >= 5.0 * (1.0 - 1e-2) &&
                        rep.max_dvartheta_dc <= 1e-6 && rep.rho1_increasing_in_theta;
        report(8, ok, "finite-difference sensitivity bounds",
               "min d/dtheta=" + fmt(rep.min_dvartheta_dtheta) +
                   " max d/dc=" + fmt(rep.max_dvartheta_dc) + " rho1 monotone=" +
                   (rep.rho1_increasing_in_theta ? "yes" : "no"));
    }

    // 9. N-player convergence to the mean-field equilibrium
    {
        ScenarioConfig cfg;
        cfg.T = 1.0;
        cfg.grid_n = 2001;
        cfg.grid_refinement = 4.0;
        cfg.eta_spec = "5.0";
        cfg.lambda_spec = "5.0";
        cfg.kappa = 10.0;
        cfg.seller_mass = 0.8;
        cfg.seller_rate = 2.0 / 3.0;
        cfg.buyer_mass = 0.2;
        cfg.buyer_rate = 1.0;
        const auto table = sweep_n(cfg, {7, 15, 100}, false);
        const bool ok = table[1].second < table[0].second && table[2].second < table[1].second;
        report(9, ok, "sup-gap to the mean-field rate decreases in N",
               "gaps: N=7 " + fmt(table[0].second) + ", N=15 " + fmt(table[1].second) +
                   ", N=100 " + fmt(table[2].second));
    }

    // 10. degenerate closed forms
    {
        const RiccatiBundle b0(CostParams::constants(1.0, 5.0, 0.0, 10.0, 0.0), g);
        const auto atom = PortfolioDistribution::empirical({2.0});
        const auto s = solve_backward(0.7, 0.0, b0, atom, VariantMode::TradingConstraint);
        double worst = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double ref = 0.7 * std::exp(2.0 * (1.0 - g.node(k)));
            worst = std::max(worst, std::abs(s.mu.node[k] - ref) / ref);
        }

        const auto balanced = PortfolioDistribution::exp_mixture(0.5, 1.0, 0.5, 1.0);
        const auto triv = solve_equilibrium_auto(bundle, balanced,
                                                 VariantMode::TradingConstraint);
        bool triv_ok = triv.solution.trivial;
        for (double v : triv.solution.mu.node) triv_ok &= v == 0.0;

        const auto sellers = PortfolioDistribution::exp_mixture(1.0, 1.0, 0.0, 1.0);
        const auto tc = find_equilibrium(bundle, sellers, VariantMode::TradingConstraint);
        const auto dr = find_equilibrium(bundle, sellers, VariantMode::DropOut);
        double gap = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k)
            gap = std::max(gap, std::abs(tc.mu.node[k] - dr.mu.node[k]));

        const bool ok = worst < 1e-6 && triv_ok && gap < 1e-8;
        report(10, ok, "degenerate closed forms and mode coincidences",
               "exp-march err=" + fmt(worst) + ", trivial=" + (triv_ok ? "yes" : "no") +
                   ", no-buyer mode gap=" + fmt(gap));
    }

    std::printf("%d of 10 criteria passed\n", 10 - failures);
    return failures;
}
