// Scenario CLI: solve a configured liquidation game, verify it against the
// independent oracles, compare the three constraint variants, or run the
// N-player convergence sweep.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "liqgame/liqgame.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

liqgame::ScenarioConfig load_with_overrides(const std::string& config_path, std::size_t grid_n,
                                            double tol, const std::string& out_dir,
                                            std::uint64_t seed) {
    liqgame::ScenarioConfig cfg = liqgame::load_config(config_path);
    if (grid_n) cfg.grid_n = grid_n;
    if (tol > 0.0) cfg.tol = tol;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = seed;
    return cfg;
}

void print_solution_summary(const liqgame::ScenarioResult& res) {
    const auto& sol = res.solution;
    std::printf("mode=%s reflected=%d trivial=%d\n", liqgame::to_string(sol.mode),
                int(res.reflected), int(sol.trivial));
    std::printf("theta=%.12g c=%.12g psi0=%.12g phiT=%.12g\n", sol.theta, sol.c,
                sol.kernels.psi_at_0, sol.kernels.phi_at_T);
    std::printf("int_mu=%.12g (E[nu]=%.12g, mass_error=%.3g)\n",
                (res.reflected ? -1.0 : 1.0) * sol.state.M.node.front(), res.mean_nu,
                sol.residuals.mass_error);
    std::printf("rho1=%.3g rho2=%.3g integral_residual=%.3g certificate=%s\n",
                sol.residuals.rho1, sol.residuals.rho2, sol.residuals.integral_residual,
                liqgame::to_string(sol.kernels.certificate));
    if (sol.multiple_roots) {
        std::printf("warning: multiple outer roots found (");
        for (double r : sol.roots_found) std::printf(" %.6g", r);
        std::printf(" ); smallest returned\n");
    }
}

int cmd_solve(const liqgame::ScenarioConfig& cfg, bool dump_bundle) {
    const auto t0 = Clock::now();
    liqgame::ScenarioResult res = liqgame::run_scenario(cfg);
    if (dump_bundle) {
        const liqgame::RiccatiBundle bundle(liqgame::config_params(cfg), res.grid);
        liqgame::write_bundle_csv(bundle,
                                  (std::filesystem::path(cfg.out_dir) / "bundle.csv").string());
    }
    std::printf("solve: %.2fs -> %s\n", seconds_since(t0), cfg.out_dir.c_str());
    print_solution_summary(res);
    return 0;
}

int cmd_verify(const liqgame::ScenarioConfig& cfg) {
    namespace fs = std::filesystem;
    using namespace liqgame;

    const auto t0 = Clock::now();
    ScenarioResult res = run_scenario(cfg);
    print_solution_summary(res);
    if (res.solution.trivial) {
        std::printf("verify: trivial equilibrium (E[nu] = 0), nothing to check\n");
        return 0;
    }

    const CostParams params = config_params(cfg);
    RiccatiBundle bundle(params, res.grid);
    const PortfolioDistribution dist = res.reflected ? config_distribution(cfg).reflected()
                                                     : config_distribution(cfg);
    EquilibriumSolution& sol = res.solution;

    std::ostringstream report;
    bool all_ok = true;
    auto check = [&](const std::string& what, bool ok, const std::string& detail) {
        report << (ok ? "[pass] " : "[FAIL] ") << what << ": " << detail << "\n";
        all_ok &= ok;
    };

    // re-read the emitted files and revalidate the pinned invariants
    try {
        revalidate_outputs(cfg.out_dir, cfg.mode);
        check("output revalidation", true, "summary consistent with emitted mu.csv");
    } catch (const std::exception& e) {
        check("output revalidation", false, e.what());
    }

    // fixed point self-consistency
    if (cfg.mode == VariantMode::TradingConstraint) {
        const double err = fixed_point_selfcheck(sol, bundle, dist, cfg.quantization);
        sol.residuals.fixed_point_sup_error = err;
        double mu_sup = 0.0;
        for (double v : sol.mu.node) mu_sup = std::max(mu_sup, std::abs(v));
        check("fixed-point selfcheck", err < 1e-3 * mu_sup,
              "sup|F(mu)-mu| = " + std::to_string(err));

        // scheme cross-check (atomic laws put kinks inside grid cells, so
        // their quadratures agree more coarsely)
        const auto mu_picard =
            solve_backward_picard(sol.theta, sol.c, bundle, dist, cfg.mode);
        double dsup = 0.0;
        for (std::size_t k = 0; k < mu_picard.size(); ++k)
            dsup = std::max(dsup, std::abs(mu_picard[k] - sol.mu.node[k]));
        const double picard_tol = dist.is_empirical() ? 2e-3 : 1e-4;
        check("picard cross-check", dsup < picard_tol * mu_sup,
              "sup|mu_picard - mu_march| = " + std::to_string(dsup));

        // QP oracle on a spread of types.  In the N-player game the QP sees
        // the opponents' aggregate mu* - xi*/N; the player's own impact
        // enters through delta.
        PathEngine engine(sol.mu, bundle);
        const double dt = cfg.T / double(cfg.oracle_coarse_n);
        double worst_rel = 0.0;
        const double psi0 = sol.kernels.psi_at_0, phiT = sol.kernels.phi_at_T;
        const std::vector<double> types = {-2.0 * psi0, -0.5 * psi0, 0.5 * phiT, 2.0 * phiT};
        for (double x : types) {
            PlayerPath p = engine.path(x);
            std::vector<double> others_mid(cfg.oracle_coarse_n);
            for (std::size_t j = 0; j < cfg.oracle_coarse_n; ++j) {
                const double t = (double(j) + 0.5) * dt;
                others_mid[j] = interp_table(res.grid, sol.mu, t) -
                                params.delta * interp_table(res.grid, p.xi, t);
            }
            auto qp = best_response_qp(x, others_mid, params, cfg.oracle_coarse_n);
            // coarse-grid cost of the analytic path, same discrete functional
            double run = 0.0, Jpath = 0.0;
            for (std::size_t j = 0; j < cfg.oracle_coarse_n; ++j) {
                const double t = (double(j) + 0.5) * dt;
                const double xi = interp_table(res.grid, p.xi, t);
                const double Xb = x - run - 0.5 * dt * xi;
                Jpath += dt * (0.5 * params.eta(t) * xi * xi +
                               params.kappa * Xb * (others_mid[j] + params.delta * xi) +
                               0.5 * params.lambda(t) * Xb * Xb);
                run += dt * xi;
            }
            worst_rel = std::max(worst_rel, std::abs(qp.objective - Jpath) /
                                                (1.0 + std::abs(Jpath)));
        }
        check("qp oracle objective agreement", worst_rel < 1e-3,
              "worst relative gap = " + std::to_string(worst_rel));

        // Nash deviations
        auto dev = nash_deviation_test(sol, bundle, dist, cfg.oracle_samples, cfg.seed);
        check("nash deviations", dev.min_cost_increase > -1e-6 * dev.cost_scale,
              "min improvement = " + std::to_string(dev.min_cost_increase) +
                  " (scale " + std::to_string(dev.cost_scale) +
                  ", seed " + std::to_string(dev.seed) + ")");

        // sensitivity signs
        auto sens = sensitivity_check(bundle, dist, cfg.mode, sol.theta, sol.c);
        const double eta_T = params.eta(cfg.T);
        check("sensitivity d(theta)", sens.min_dvartheta_dtheta >= eta_T * (1.0 - 1e-2),
              "min d(mu eta)/dtheta = " + std::to_string(sens.min_dvartheta_dtheta));
        check("sensitivity d(c)", sens.max_dvartheta_dc <= 1e-6,
              "max d(mu eta)/dc = " + std::to_string(sens.max_dvartheta_dc));
        check("rho1 monotone in theta", sens.rho1_increasing_in_theta, "16-point sweep");
    }

    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "verification_report.txt");
    out << report.str();
    std::printf("%s", report.str().c_str());
    std::printf("verify: %.2fs, %s\n", seconds_since(t0), all_ok ? "all checks passed" : "FAILURES");
    return all_ok ? 0 : 1;
}

int cmd_compare(const liqgame::ScenarioConfig& cfg) {
    const auto t0 = Clock::now();
    auto cmp = liqgame::compare_modes(cfg);
    std::printf("compare: %.2fs\n", seconds_since(t0));
    std::printf("int_mu: trading=%.9g dropout=%.9g unconstrained=%.9g\n", cmp.int_mu[0],
                cmp.int_mu[1], cmp.int_mu[2]);
    if (cmp.first_crossing >= 0.0)
        std::printf("trading-constraint rate overtakes unconstrained at t=%.6g\n",
                    cmp.first_crossing);
    return 0;
}

int cmd_sweep(const liqgame::ScenarioConfig& cfg, const std::string& n_list) {
    std::vector<std::size_t> Ns;
    std::stringstream ss(n_list);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) Ns.push_back(std::stoul(tok));
    if (Ns.empty()) {
        std::fprintf(stderr, "sweep-n: empty N list\n");
        return 2;
    }
    const auto t0 = Clock::now();
    auto table = liqgame::sweep_n(cfg, Ns);
    std::printf("sweep-n: %.2fs\n", seconds_since(t0));
    for (auto& [N, gap] : table) std::printf("N=%zu sup|mu_N - mu_mfg| = %.6g\n", N, gap);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic liquidation-game equilibrium solver"};
    app.require_subcommand(1);

    std::string config_path, out_dir, n_list = "7,15,100";
    std::size_t grid_n = 0;
    double tol = -1.0;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config_path, "scenario config file")->required();
        cmd->add_option("--grid-n", grid_n, "override grid node count");
        cmd->add_option("--tol", tol, "override root-finding tolerance");
        cmd->add_option("--out-dir", out_dir, "override output directory");
        cmd->add_option("--seed", seed, "override RNG seed");
    };
    auto* solve = app.add_subcommand("solve", "solve the scenario and write outputs");
    add_common(solve);
    bool dump_bundle = false;
    solve->add_flag("--dump-bundle", dump_bundle, "also write the Riccati tables as CSV");
    auto* verify = app.add_subcommand("verify", "solve plus oracle verification report");
    add_common(verify);
    auto* compare = app.add_subcommand("compare", "solve all three constraint variants");
    add_common(compare);
    auto* sweep = app.add_subcommand("sweep-n", "N-player to mean-field convergence");
    add_common(sweep);
    sweep->add_option("--N", n_list, "comma-separated player counts");

    CLI11_PARSE(app, argc, argv);

    try {
        const liqgame::ScenarioConfig cfg =
            load_with_overrides(config_path, grid_n, tol, out_dir, seed);
        if (solve->parsed()) return cmd_solve(cfg, dump_bundle);
        if (verify->parsed()) return cmd_verify(cfg);
        if (compare->parsed()) return cmd_compare(cfg);
        if (sweep->parsed()) return cmd_sweep(cfg, n_list);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
