#pragma once

// Scenario runner: parse a key/value config, solve, verify and emit
// plot-ready CSV data.  Every output is a pure function of the config (no
// wall-clock or machine state in any data file), and files are written
// atomically (tmp + rename).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "liqgame/distribution.hpp"
#include "liqgame/equilibrium.hpp"
#include "liqgame/oracle.hpp"
#include "liqgame/paths.hpp"

namespace liqgame {

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

struct ScenarioConfig {
    double T = 1.0;
    std::size_t grid_n = 2001;
    double grid_refinement = 4.0;
    std::string eta_spec = "1.0";
    std::string lambda_spec = "0.0";
    double kappa = 1.0;
    VariantMode mode = VariantMode::TradingConstraint;
    bool nplayer = false;
    std::size_t nplayer_n = 0;                  // used when no explicit positions
    std::vector<double> nplayer_positions;      // explicit N-player positions
    std::string dist_type = "exp_mixture";
    double seller_mass = 1.0, seller_rate = 1.0, buyer_mass = 0.0, buyer_rate = 1.0;
    std::vector<double> positions;              // dist.type = empirical
    double tol = 1e-10;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    std::size_t quantization = 512;
    std::vector<double> paths_x0;  // representative players; defaults from thresholds
    std::size_t oracle_samples = 100;
    std::size_t oracle_coarse_n = 200;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
}

inline Coefficient parse_coefficient(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) return Coefficient::constant(std::stod(spec));
    const std::string family = trim(spec.substr(0, colon));
    const auto args = parse_list(spec.substr(colon + 1));
    if (family == "affine" && args.size() == 2) return Coefficient::affine(args[0], args[1]);
    if (family == "exp" && args.size() == 2) return Coefficient::exponential(args[0], args[1]);
    throw std::invalid_argument("unknown coefficient family: " + spec);
}

}  // namespace detail

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline ScenarioConfig parse_config(std::istream& in, const std::string& name = "<config>") {
    ScenarioConfig c;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError(name + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        try {
            if (key == "T") c.T = std::stod(val);
            else if (key == "grid_n") c.grid_n = std::stoul(val);
            else if (key == "grid_refinement") c.grid_refinement = std::stod(val);
            else if (key == "eta") c.eta_spec = val;
            else if (key == "lambda") c.lambda_spec = val;
            else if (key == "kappa") c.kappa = std::stod(val);
            else if (key == "mode") {
                if (val == "trading_constraint") c.mode = VariantMode::TradingConstraint;
                else if (val == "drop_out") c.mode = VariantMode::DropOut;
                else if (val == "unconstrained") c.mode = VariantMode::Unconstrained;
                else fail("unknown mode: " + val);
            } else if (key == "game") {
                if (val == "mfg") c.nplayer = false;
                else if (val == "nplayer") c.nplayer = true;
                else fail("unknown game: " + val);
            } else if (key == "nplayer.n") c.nplayer_n = std::stoul(val);
            else if (key == "nplayer.positions") c.nplayer_positions = detail::parse_list(val);
            else if (key == "dist.type") c.dist_type = val;
            else if (key == "dist.seller_mass") c.seller_mass = std::stod(val);
            else if (key == "dist.seller_rate") c.seller_rate = std::stod(val);
            else if (key == "dist.buyer_mass") c.buyer_mass = std::stod(val);
            else if (key == "dist.buyer_rate") c.buyer_rate = std::stod(val);
            else if (key == "dist.positions") c.positions = detail::parse_list(val);
            else if (key == "tol") c.tol = std::stod(val);
            else if (key == "out_dir") c.out_dir = val;
            else if (key == "seed") c.seed = std::stoull(val);
            else if (key == "quantization") c.quantization = std::stoul(val);
            else if (key == "paths_x0") c.paths_x0 = detail::parse_list(val);
            else if (key == "oracle.samples") c.oracle_samples = std::stoul(val);
            else if (key == "oracle.coarse_n") c.oracle_coarse_n = std::stoul(val);
            else fail("unknown key: " + key);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            fail(std::string("bad value for ") + key + ": " + e.what());
        }
    }
    return c;
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    return parse_config(in, path);
}

/// The law the config describes (before any reflection).
inline PortfolioDistribution config_distribution(const ScenarioConfig& c) {
    if (c.nplayer) {
        if (!c.nplayer_positions.empty())
            return PortfolioDistribution::empirical(c.nplayer_positions);
        if (c.nplayer_n == 0)
            throw ConfigError("nplayer game needs nplayer.positions or nplayer.n");
        PortfolioDistribution base =
            c.dist_type == "empirical"
                ? PortfolioDistribution::empirical(c.positions)
                : PortfolioDistribution::exp_mixture(c.seller_mass, c.seller_rate,
                                                     c.buyer_mass, c.buyer_rate);
        std::vector<double> xs(c.nplayer_n);
        for (std::size_t i = 0; i < c.nplayer_n; ++i)
            xs[i] = base.quantile((double(i) + 0.5) / double(c.nplayer_n));
        return PortfolioDistribution::empirical(std::move(xs));
    }
    if (c.dist_type == "empirical") return PortfolioDistribution::empirical(c.positions);
    if (c.dist_type == "exp_mixture")
        return PortfolioDistribution::exp_mixture(c.seller_mass, c.seller_rate, c.buyer_mass,
                                                  c.buyer_rate);
    throw ConfigError("unknown dist.type: " + c.dist_type);
}

inline CostParams config_params(const ScenarioConfig& c) {
    CostParams p;
    p.T = c.T;
    p.eta = detail::parse_coefficient(c.eta_spec);
    p.lambda = detail::parse_coefficient(c.lambda_spec);
    p.kappa = c.kappa;
    p.delta = 0.0;
    if (c.nplayer) {
        const std::size_t N =
            !c.nplayer_positions.empty() ? c.nplayer_positions.size() : c.nplayer_n;
        if (N == 0) throw ConfigError("nplayer game needs a player count");
        p.delta = 1.0 / double(N);
    }
    return p;
}

// ---------------------------------------------------------------------------
// output files
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class AtomicFile {
public:
    explicit AtomicFile(const std::filesystem::path& path)
        : final_(path), tmp_(path.string() + ".tmp"), out_(tmp_) {
        if (!out_) throw std::runtime_error("cannot open " + tmp_.string());
    }
    std::ofstream& stream() { return out_; }
    void commit() {
        out_.close();
        std::filesystem::rename(tmp_, final_);
    }

private:
    std::filesystem::path final_, tmp_;
    std::ofstream out_;
};

inline void write_csv(const std::filesystem::path& path, const std::string& header,
                      const std::vector<std::vector<double>>& columns) {
    AtomicFile f(path);
    f.stream() << header << "\n";
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c)
            f.stream() << (c ? "," : "") << fmt17(columns[c][r]);
        f.stream() << "\n";
    }
    f.commit();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// scenario result
// ---------------------------------------------------------------------------

struct ScenarioResult {
    ScenarioConfig config;
    TimeGrid grid = TimeGrid::build(1.0, 16, 1.0);
    EquilibriumSolution solution;  // of the solved (possibly reflected) problem
    bool reflected = false;
    double mean_nu = 0.0;
    std::vector<PlayerPath> sample_paths;  // in original orientation
    std::vector<double> stage_seconds;     // timings (stdout only, never in files)
};

/// Solve the configured scenario and write mu/kernels/paths/summary files.
ScenarioResult run_scenario(const ScenarioConfig& cfg, bool write_files = true);

/// All three variant modes side by side; asserts the shared mass identity.
struct ModeComparison {
    std::vector<double> t;
    std::vector<std::vector<double>> mu_per_mode;  // trading, dropout, unconstrained
    std::vector<double> int_mu;
    double first_crossing = -1.0;  // trading-constraint rate overtakes unconstrained
};
ModeComparison compare_modes(const ScenarioConfig& cfg, bool write_files = true);

/// N-player to mean-field convergence table.
std::vector<std::pair<std::size_t, double>> sweep_n(const ScenarioConfig& cfg,
                                                    const std::vector<std::size_t>& Ns,
                                                    bool write_files = true);

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

inline ScenarioResult run_scenario(const ScenarioConfig& cfg, bool write_files) {
    namespace fs = std::filesystem;
    ScenarioResult res;
    res.config = cfg;

    const CostParams params = config_params(cfg);
    const auto diag = validate_params(params);
    if (!diag.valid) throw ConfigError("invalid parameters: " + diag.violations.front());

    res.grid = build_grid(cfg.T, cfg.grid_n, cfg.grid_refinement);
    const PortfolioDistribution dist = config_distribution(cfg);
    res.mean_nu = dist.mean();

    RiccatiBundle bundle(params, res.grid);
    EquilibriumOptions opt;
    opt.tol = cfg.tol;
    SignedEquilibrium se = solve_equilibrium_auto(bundle, dist, cfg.mode, opt);
    res.solution = std::move(se.solution);
    res.reflected = se.reflected;

    const EquilibriumSolution& sol = res.solution;
    const double sgn = res.reflected ? -1.0 : 1.0;

    // representative players: defaults straddle both activity thresholds
    std::vector<double> xs = cfg.paths_x0;
    if (xs.empty() && !sol.trivial) {
        const double psi0 = sol.kernels.psi_at_0, phiT = sol.kernels.phi_at_T;
        xs = {-1.5 * psi0, -0.75 * psi0, -0.25 * psi0, 0.5 * phiT, 0.9 * phiT, 1.5 * phiT,
              3.0 * phiT};
        for (double& x : xs) x *= sgn;
    }
    if (!sol.trivial && cfg.mode == VariantMode::TradingConstraint) {
        PathEngine engine(sol.mu, bundle);
        for (double x : xs) {
            if (x == 0.0) continue;
            PlayerPath p = engine.path(sgn * x);
            p.cost = evaluate_cost(p, sol.mu, bundle);
            if (res.reflected) {  // mirror back to the original orientation
                p.x0 = -p.x0;
                for (auto* t : {&p.X, &p.Y, &p.xi}) {
                    for (double& v : t->node) v = -v;
                    for (double& v : t->mid) v = -v;
                }
            }
            res.sample_paths.push_back(std::move(p));
        }
    }

    if (write_files) {
        fs::create_directories(cfg.out_dir);
        const TimeGrid& g = res.grid;
        std::vector<double> t(g.size()), mu(g.size()), eta_mu(g.size()), psi(g.size()),
            phi(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) {
            t[k] = g.node(k);
            mu[k] = sgn * sol.mu.node[k];
            eta_mu[k] = bundle.eta.node[k] * mu[k];
            psi[k] = sol.kernels.psi.node[k];
            phi[k] = sol.kernels.phi.node[k];
        }
        detail::write_csv(fs::path(cfg.out_dir) / ("mu_" + std::string(to_string(cfg.mode)) +
                                                   ".csv"),
                          "t,mu,eta_mu", {t, mu, eta_mu});
        detail::write_csv(fs::path(cfg.out_dir) / "kernels.csv", "t,psi,phi", {t, psi, phi});
        for (std::size_t i = 0; i < res.sample_paths.size(); ++i) {
            const PlayerPath& p = res.sample_paths[i];
            detail::write_csv(fs::path(cfg.out_dir) / ("path_" + std::to_string(i) + ".csv"),
                              "t,X,Y,xi", {t, p.X.node, p.Y.node, p.xi.node});
        }
        if (!res.sample_paths.empty()) {
            std::vector<double> x0s, sigmas, taus, costs;
            for (const PlayerPath& p : res.sample_paths) {
                x0s.push_back(p.x0);
                sigmas.push_back(p.sigma);
                taus.push_back(p.tau);
                costs.push_back(p.cost);
            }
            detail::write_csv(fs::path(cfg.out_dir) / "players.csv", "x0,sigma,tau,cost",
                              {x0s, sigmas, taus, costs});
        }

        detail::AtomicFile f(fs::path(cfg.out_dir) / "summary.txt");
        auto& o = f.stream();
        auto kv = [&](const std::string& k, const std::string& v) { o << k << " = " << v << "\n"; };
        kv("mode", to_string(cfg.mode));
        kv("game", cfg.nplayer ? "nplayer" : "mfg");
        kv("grid_n", std::to_string(cfg.grid_n));
        kv("seed", std::to_string(cfg.seed));
        kv("reflected", res.reflected ? "1" : "0");
        kv("trivial", sol.trivial ? "1" : "0");
        kv("mean_nu", detail::fmt17(res.mean_nu));
        kv("theta", detail::fmt17(sol.theta));
        kv("c", detail::fmt17(sol.c));
        kv("psi0", detail::fmt17(sol.kernels.psi_at_0));
        kv("phiT", detail::fmt17(sol.kernels.phi_at_T));
        kv("int_mu", detail::fmt17(sgn * sol.state.M.node.front()));
        kv("rho1", detail::fmt17(sol.residuals.rho1));
        kv("rho2", detail::fmt17(sol.residuals.rho2));
        kv("mass_error", detail::fmt17(sol.residuals.mass_error));
        kv("integral_residual", detail::fmt17(sol.residuals.integral_residual));
        kv("fixed_point_sup_error", detail::fmt17(sol.residuals.fixed_point_sup_error));
        kv("certificate", to_string(sol.kernels.certificate));
        kv("outer_monotone", sol.outer_monotone ? "1" : "0");
        kv("multiple_roots", sol.multiple_roots ? "1" : "0");
        f.commit();
    }
    return res;
}

/// Debug dump of the Riccati bundle tables.
inline void write_bundle_csv(const RiccatiBundle& b, const std::string& path) {
    const TimeGrid& g = b.grid();
    std::vector<double> t(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) t[k] = g.node(k);
    detail::write_csv(path, "t,A,alpha,alpha_tilde,h",
                      {t, b.A.node, b.alpha.node, b.alpha_tilde.node, b.h.node});
}

/// Parse a summary file back into a key -> value map.
inline std::map<std::string, std::string> load_summary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open summary: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

/// Defense against stale or edited outputs: recompute the invariants that
/// the summary pins (mass identity, sign) from the emitted mu.csv.
inline void revalidate_outputs(const std::string& out_dir, VariantMode mode) {
    namespace fs = std::filesystem;
    const auto kv = load_summary((fs::path(out_dir) / "summary.txt").string());
    std::ifstream mu_csv(fs::path(out_dir) / ("mu_" + std::string(to_string(mode)) + ".csv"));
    if (!mu_csv) throw std::runtime_error("revalidate: missing mu csv");
    std::string line;
    std::getline(mu_csv, line);  // header
    std::vector<double> t, mu;
    while (std::getline(mu_csv, line)) {
        std::stringstream ss(line);
        std::string a, b;
        std::getline(ss, a, ',');
        std::getline(ss, b, ',');
        t.push_back(std::stod(a));
        mu.push_back(std::stod(b));
    }
    double I = 0.0;
    for (std::size_t k = 0; k + 1 < t.size(); ++k)
        I += 0.5 * (t[k + 1] - t[k]) * (mu[k] + mu[k + 1]);
    const double stated = std::stod(kv.at("int_mu"));
    if (std::abs(I - stated) > 1e-5 * (1.0 + std::abs(stated)))
        throw std::runtime_error("revalidate: int_mu inconsistent with emitted mu.csv");
    const double mean = std::stod(kv.at("mean_nu"));
    if (std::abs(I - mean) > 2e-3 * (1.0 + std::abs(mean)))
        throw std::runtime_error("revalidate: mass identity violated in emitted outputs");
}

inline ModeComparison compare_modes(const ScenarioConfig& cfg, bool write_files) {
    namespace fs = std::filesystem;
    ModeComparison cmp;
    const VariantMode modes[3] = {VariantMode::TradingConstraint, VariantMode::DropOut,
                                  VariantMode::Unconstrained};
    std::vector<ScenarioResult> results;
    for (VariantMode m : modes) {
        ScenarioConfig c = cfg;
        c.mode = m;
        results.push_back(run_scenario(c, false));
    }
    const TimeGrid& g = results.front().grid;
    cmp.t.resize(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) cmp.t[k] = g.node(k);
    for (const auto& r : results) {
        std::vector<double> mu(g.size());
        const double sgn = r.reflected ? -1.0 : 1.0;
        for (std::size_t k = 0; k < g.size(); ++k) mu[k] = sgn * r.solution.mu.node[k];
        cmp.mu_per_mode.push_back(std::move(mu));
        cmp.int_mu.push_back(sgn * r.solution.state.M.node.front());
    }
    const double mean = results.front().mean_nu;
    for (double I : cmp.int_mu)
        if (std::abs(I - mean) > 1e-3 * std::max(1.0, std::abs(mean)))
            throw std::runtime_error("compare_modes: mass identity differs across modes");

    // first node where the trading-constraint rate overtakes the
    // unconstrained one (the qualitative late-acceleration marker)
    const auto& tc = cmp.mu_per_mode[0];
    const auto& un = cmp.mu_per_mode[2];
    for (std::size_t k = 0; k < g.size(); ++k)
        if (tc[k] > un[k]) {
            cmp.first_crossing = g.node(k);
            break;
        }
    if (write_files) {
        fs::create_directories(cfg.out_dir);
        detail::write_csv(fs::path(cfg.out_dir) / "compare_modes.csv",
                          "t,mu_trading_constraint,mu_drop_out,mu_unconstrained",
                          {cmp.t, cmp.mu_per_mode[0], cmp.mu_per_mode[1], cmp.mu_per_mode[2]});
    }
    return cmp;
}

inline std::vector<std::pair<std::size_t, double>> sweep_n(const ScenarioConfig& cfg,
                                                           const std::vector<std::size_t>& Ns,
                                                           bool write_files) {
    namespace fs = std::filesystem;
    ScenarioConfig mfg_cfg = cfg;
    mfg_cfg.nplayer = false;
    ScenarioResult mfg = run_scenario(mfg_cfg, false);

    std::vector<std::pair<std::size_t, double>> table;
    for (std::size_t N : Ns) {
        ScenarioConfig c = cfg;
        c.nplayer = true;
        c.nplayer_positions.clear();
        c.nplayer_n = N;
        ScenarioResult r = run_scenario(c, false);
        double gap = 0.0;
        for (std::size_t k = 0; k < mfg.grid.size(); ++k) {
            const double a = (r.reflected ? -1.0 : 1.0) * r.solution.mu.node[k];
            const double b = (mfg.reflected ? -1.0 : 1.0) * mfg.solution.mu.node[k];
            gap = std::max(gap, std::abs(a - b));
        }
        table.emplace_back(N, gap);
    }
    if (write_files) {
        fs::create_directories(cfg.out_dir);
        std::vector<double> Ncol, gapcol;
        for (auto& [N, gap] : table) {
            Ncol.push_back(double(N));
            gapcol.push_back(gap);
        }
        detail::write_csv(fs::path(cfg.out_dir) / "nplayer_convergence.csv", "N,sup_gap_to_mfg",
                          {Ncol, gapcol});
    }
    return table;
}

}  // namespace liqgame
