#include <catch2/catch_amalgamated.hpp>

#include "liqgame/oracle.hpp"

using namespace liqgame;

namespace {

const TimeGrid& grid() {
    static TimeGrid g = build_grid(1.0, 1201, 4.0);
    return g;
}

PortfolioDistribution scenario_mixture() {
    return PortfolioDistribution::exp_mixture(0.8, 2.0 / 3.0, 0.2, 1.0);
}

const RiccatiBundle& scenario_bundle() {
    static RiccatiBundle b(CostParams::constants(1.0, 5.0, 5.0, 10.0, 0.0), grid());
    return b;
}

const EquilibriumSolution& scenario_solution() {
    static EquilibriumSolution sol =
        find_equilibrium(scenario_bundle(), scenario_mixture(), VariantMode::TradingConstraint);
    return sol;
}

std::vector<double> coarse_mu(std::size_t m) {
    std::vector<double> v(m);
    for (std::size_t j = 0; j < m; ++j)
        v[j] = interp_table(grid(), scenario_solution().mu, (double(j) + 0.5) / double(m));
    return v;
}

}  // namespace

TEST_CASE("counter rng is reproducible and in range") {
    CounterRng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double u = a.uniform();
        REQUIRE(u == b.uniform());
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    REQUIRE(a.uniform() != c.uniform());
}

TEST_CASE("simplex projection: feasibility and idempotence") {
    CounterRng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 5 + std::size_t(rng.uniform(0.0, 40.0));
        std::vector<double> v(n), w(n, 0.01);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        std::vector<double> z = v;
        detail::project_simplex(z, w, 0.37);
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            REQUIRE(z[i] >= 0.0);
            dot += w[i] * z[i];
        }
        REQUIRE(dot == Catch::Approx(0.37).margin(1e-12));
        std::vector<double> z2 = z;
        detail::project_simplex(z2, w, 0.37);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(z2[i] == Catch::Approx(z[i]).margin(1e-12));
    }
}

TEST_CASE("qp: zero position has the zero response") {
    const auto r = best_response_qp(0.0, coarse_mu(100), scenario_bundle().params(), 100, 10);
    REQUIRE(r.objective == 0.0);
    for (double v : r.rates) REQUIRE(v == 0.0);
}

TEST_CASE("qp: TWAP optimum without risk or drift") {
    const CostParams p = CostParams::constants(1.0, 5.0, 0.0, 10.0, 0.0);
    const std::vector<double> zero(200, 0.0);
    for (double x : {1.3, -0.8}) {
        const auto r = best_response_qp(x, zero, p, 200, 20000);
        REQUIRE(r.objective == Catch::Approx(0.5 * 5.0 * x * x).epsilon(1e-4));
        for (double v : r.rates) REQUIRE(v == Catch::Approx(x).epsilon(1e-2));
        REQUIRE(r.kkt_residual < 1e-6 * (1.0 + std::abs(x)));
    }
}

TEST_CASE("qp agrees with the analytic best response") {
    const std::size_t m = 200;
    const auto mu_c = coarse_mu(m);
    PathEngine engine(scenario_solution().mu, scenario_bundle());
    for (double x : {-0.5, 1.2}) {
        const auto qp = best_response_qp(x, mu_c, scenario_bundle().params(), m);
        // coarse-grid cost of the analytic path, same discrete functional
        const PlayerPath p = engine.path(x);
        const double dt = 1.0 / double(m);
        const double sgn = x > 0.0 ? 1.0 : -1.0;
        std::vector<double> z(m), w(m, dt);
        for (std::size_t j = 0; j < m; ++j)
            z[j] = sgn * interp_table(grid(), p.xi, (double(j) + 0.5) * dt);
        detail::project_simplex(z, w, std::abs(x));  // discrete-feasible resample
        double run = 0.0, Jpath = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double xi = sgn * z[j];
            const double Xb = x - run - 0.5 * dt * xi;
            Jpath += dt * (0.5 * 5.0 * xi * xi + 10.0 * Xb * mu_c[j] + 0.5 * 5.0 * Xb * Xb);
            run += dt * xi;
        }
        REQUIRE(qp.objective == Catch::Approx(Jpath).epsilon(1e-3));
        // the QP result is the discrete optimum, so it cannot lose to the
        // projected analytic path
        REQUIRE(qp.objective <= Jpath + 1e-6 * (1.0 + std::abs(Jpath)));
    }
}

TEST_CASE("qp objectives agree for a spread of 20 types across both thresholds") {
    const std::size_t m = 200;
    const auto mu_c = coarse_mu(m);
    PathEngine engine(scenario_solution().mu, scenario_bundle());
    const double psi0 = engine.kernels().psi_at_0;
    const double phiT = engine.kernels().phi_at_T;
    std::vector<double> types;
    for (double f : {0.1, 0.3, 0.5, 0.7, 0.9})  // late entrants
        types.push_back(-f * psi0);
    for (double f : {1.1, 1.5, 2.5, 4.0, 6.0})  // immediate entrants
        types.push_back(-f * psi0);
    for (double f : {0.1, 0.3, 0.5, 0.7, 0.9})  // early exiters
        types.push_back(f * phiT);
    for (double f : {1.1, 1.5, 2.5, 4.0, 6.0})  // full-horizon sellers
        types.push_back(f * phiT);
    const double dt = 1.0 / double(m);
    for (double x : types) {
        const auto qp = best_response_qp(x, mu_c, scenario_bundle().params(), m);
        const PlayerPath p = engine.path(x);
        double run = 0.0, Jpath = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double t = (double(j) + 0.5) * dt;
            const double xi = interp_table(grid(), p.xi, t);
            const double Xb = x - run - 0.5 * dt * xi;
            Jpath += dt * (0.5 * 5.0 * xi * xi + 10.0 * Xb * mu_c[j] + 0.5 * 5.0 * Xb * Xb);
            run += dt * xi;
        }
        REQUIRE(qp.objective == Catch::Approx(Jpath).epsilon(1e-3));
    }
}

TEST_CASE("qp reproduces the entry threshold through its active set") {
    const std::size_t m = 200;
    const auto mu_c = coarse_mu(m);
    PathEngine engine(scenario_solution().mu, scenario_bundle());
    const double psi0 = engine.kernels().psi_at_0;
    for (double f : {0.3, 0.7}) {
        const double x = -f * psi0;
        const auto qp = best_response_qp(x, mu_c, scenario_bundle().params(), m);
        const double sigma = entry_time(x, grid(), engine.kernels());
        // rates pinned at zero (active sign constraint) until about sigma
        std::size_t first_active = m;
        for (std::size_t j = 0; j < m; ++j)
            if (std::abs(qp.rates[j]) > 1e-7 * std::abs(x)) {
                first_active = j;
                break;
            }
        REQUIRE(first_active < m);
        const double t_active = (double(first_active) + 0.5) / double(m);
        REQUIRE(std::abs(t_active - sigma) < 2.5 / double(m));
    }
}

TEST_CASE("the identity deviation changes nothing") {
    // the deviation reference is the projected strategy; projecting it again
    // is an exact no-op, and the feasibility adjustment itself is tiny
    PathEngine engine(scenario_solution().mu, scenario_bundle());
    for (double x : {-0.7, 1.4}) {
        const PlayerPath star = engine.path(x);
        GridTable xi1 = star.xi;
        detail::project_admissible(xi1, x, grid());
        GridTable xi2 = xi1;
        detail::project_admissible(xi2, x, grid());
        const auto J = [&](const GridTable& xi) {
            return evaluate_cost_tables(xi, position_of_rate(xi, x, grid()),
                                        scenario_solution().mu, scenario_bundle());
        };
        // identity deviation costs nothing (up to one reshift rounding), and
        // the feasibility adjustment stays below the deviation-test resolution
        REQUIRE(J(xi2) == Catch::Approx(J(xi1)).margin(1e-12 * (1.0 + std::abs(J(xi1)))));
        REQUIRE(std::abs(J(xi1) - J(star.xi)) < 1e-4 * (1.0 + std::abs(J(star.xi))));
    }
}

TEST_CASE("no admissible deviation improves on the equilibrium (mean-field)") {
    const auto rep = nash_deviation_test(scenario_solution(), scenario_bundle(),
                                         scenario_mixture(), 25, 20240817);
    REQUIRE(rep.samples > 0);
    REQUIRE(rep.min_cost_increase > -1e-6 * rep.cost_scale);
}

TEST_CASE("no admissible deviation improves on the equilibrium (7 players)") {
    const std::vector<double> xs = {-0.6, -0.3, 0.4, 0.6, 1.3, 2.1, 3.5};
    const auto d = PortfolioDistribution::empirical(xs);
    RiccatiBundle b(CostParams::constants(1.0, 5.0, 5.0, 10.0, 1.0 / 7.0), grid());
    const auto sol = find_equilibrium(b, d, VariantMode::TradingConstraint);
    const auto rep = nash_deviation_test(sol, b, d, 25, 99);
    REQUIRE(rep.min_cost_increase > -1e-6 * rep.cost_scale);
}

TEST_CASE("sensitivity bounds at the solved scenario") {
    const auto& sol = scenario_solution();
    const auto rep = sensitivity_check(scenario_bundle(), scenario_mixture(),
                                       VariantMode::TradingConstraint, sol.theta, sol.c);
    REQUIRE(rep.min_dvartheta_dtheta >= 5.0 * (1.0 - 1e-2));
    REQUIRE(rep.max_dvartheta_dc <= 1e-6);
    REQUIRE(rep.rho1_increasing_in_theta);
    REQUIRE(rep.outer_map_slope > 0.0);
}

TEST_CASE("no-buyer law is flat in c beyond the seller support") {
    RiccatiBundle b(CostParams::constants(1.0, 5.0, 0.0, 10.0, 0.0), grid());
    const auto atom = PortfolioDistribution::empirical({2.0});
    // all sellers hold 2; for c above any realized exit mass the active mass
    // q(c - Phi) is locally constant, so vartheta does not move with c
    const double theta = 0.4;
    auto mu_at = [&](double c) {
        return solve_backward(theta, c, b, atom, VariantMode::TradingConstraint, false).mu;
    };
    const auto up = mu_at(8.0 + 1e-3), dn = mu_at(8.0 - 1e-3);
    for (std::size_t k = 0; k < grid().size(); k += 101)
        REQUIRE(std::abs(up.node[k] - dn.node[k]) < 1e-12);
}
