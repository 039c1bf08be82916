#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "liqgame/scenario.hpp"

using namespace liqgame;
namespace fs = std::filesystem;

namespace {

std::string scenario_text(const std::string& out_dir) {
    return "T = 1.0\n"
           "grid_n = 801\n"
           "grid_refinement = 4.0\n"
           "eta = 5.0\n"
           "lambda = 5.0\n"
           "kappa = 10.0\n"
           "mode = trading_constraint\n"
           "game = mfg\n"
           "dist.type = exp_mixture\n"
           "dist.seller_mass = 0.8\n"
           "dist.seller_rate = 0.6666666666666666\n"
           "dist.buyer_mass = 0.2\n"
           "dist.buyer_rate = 1.0\n"
           "out_dir = " + out_dir + "\n"
           "seed = 7\n";
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TmpDir {
    fs::path path;
    TmpDir() : path(fs::temp_directory_path() / ("liqgame_test_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config parsing handles every key and reports line numbers") {
    std::istringstream in(
        "# comment\n"
        "T = 2.0\n"
        "eta = affine:5.0,-1.0\n"
        "lambda = exp:1.0,0.5\n"
        "kappa = 3.0   # trailing comment\n"
        "mode = drop_out\n"
        "game = nplayer\n"
        "nplayer.positions = 1.0, 2.0, -0.5\n"
        "tol = 1e-8\n");
    const ScenarioConfig c = parse_config(in, "inline");
    REQUIRE(c.T == 2.0);
    REQUIRE(c.kappa == 3.0);
    REQUIRE(c.mode == VariantMode::DropOut);
    REQUIRE(c.nplayer);
    REQUIRE(c.nplayer_positions.size() == 3);
    const CostParams p = config_params(c);
    REQUIRE(p.delta == Catch::Approx(1.0 / 3.0));
    REQUIRE(p.eta(1.0) == Catch::Approx(4.0));
    REQUIRE(p.lambda(2.0) == Catch::Approx(std::exp(1.0)));

    std::istringstream bad("T = 1.0\nbogus_key = 3\n");
    try {
        parse_config(bad, "badcfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("badcfg:2") != std::string::npos);
    }
}

TEST_CASE("scenario run writes deterministic, self-consistent outputs") {
    TmpDir tmp;
    std::istringstream in(scenario_text((tmp.path / "run").string()));
    ScenarioConfig cfg = parse_config(in);
    const ScenarioResult res = run_scenario(cfg);
    REQUIRE_FALSE(res.solution.trivial);
    REQUIRE(res.solution.residuals.mass_error < 1e-3);

    const fs::path out = tmp.path / "run";
    REQUIRE(fs::exists(out / "mu_trading_constraint.csv"));
    REQUIRE(fs::exists(out / "kernels.csv"));
    REQUIRE(fs::exists(out / "summary.txt"));
    REQUIRE(fs::exists(out / "path_0.csv"));

    const auto kv = load_summary((out / "summary.txt").string());
    REQUIRE(std::stod(kv.at("theta")) == Catch::Approx(res.solution.theta));
    REQUIRE(kv.at("mode") == "trading_constraint");
    REQUIRE(kv.at("certificate") == "lambda_eta_monotone");

    REQUIRE_NOTHROW(revalidate_outputs(out.string(), cfg.mode));

    // byte-identical re-run
    const std::string mu_before = read_file(out / "mu_trading_constraint.csv");
    const std::string summary_before = read_file(out / "summary.txt");
    run_scenario(cfg);
    REQUIRE(read_file(out / "mu_trading_constraint.csv") == mu_before);
    REQUIRE(read_file(out / "summary.txt") == summary_before);

    // stale-file defense: corrupt mu.csv and expect revalidation to fail
    {
        std::ofstream f(out / "mu_trading_constraint.csv", std::ios::app);
        f << "2.0,99.0,495.0\n";
    }
    REQUIRE_THROWS(revalidate_outputs(out.string(), cfg.mode));
}

TEST_CASE("empty market produces the trivial equilibrium") {
    TmpDir tmp;
    std::istringstream in(
        "T = 1.0\ngrid_n = 201\ngrid_refinement = 4\neta = 5\nlambda = 5\nkappa = 10\n"
        "dist.type = exp_mixture\ndist.seller_mass = 0.5\ndist.seller_rate = 1.0\n"
        "dist.buyer_mass = 0.5\ndist.buyer_rate = 1.0\nout_dir = " +
        (tmp.path / "triv").string() + "\n");
    const ScenarioResult res = run_scenario(parse_config(in));
    REQUIRE(res.solution.trivial);
    const auto kv = load_summary((tmp.path / "triv" / "summary.txt").string());
    REQUIRE(kv.at("trivial") == "1");
    REQUIRE(std::stod(kv.at("int_mu")) == 0.0);
}

TEST_CASE("mode comparison: shared mass and the late-acceleration marker") {
    TmpDir tmp;
    std::istringstream in(scenario_text((tmp.path / "cmp").string()));
    ScenarioConfig cfg = parse_config(in);
    cfg.grid_n = 601;
    const ModeComparison cmp = compare_modes(cfg);
    REQUIRE(cmp.int_mu.size() == 3);
    for (double I : cmp.int_mu) REQUIRE(I == Catch::Approx(1.0).margin(1e-3));
    // slower initial liquidation under the trading constraint, overtaking later
    REQUIRE(cmp.mu_per_mode[0].front() <= cmp.mu_per_mode[2].front());
    REQUIRE(cmp.first_crossing > 0.0);
    REQUIRE(fs::exists(tmp.path / "cmp" / "compare_modes.csv"));
}

TEST_CASE("no-buyer markets: trading constraint coincides with drop-out") {
    TmpDir tmp;
    std::istringstream in(
        "T = 1.0\ngrid_n = 601\ngrid_refinement = 4\neta = 5\nlambda = 5\nkappa = 10\n"
        "dist.type = exp_mixture\ndist.seller_mass = 1.0\ndist.seller_rate = 1.0\n"
        "dist.buyer_mass = 0.0\ndist.buyer_rate = 1.0\nout_dir = " +
        (tmp.path / "nb").string() + "\n");
    ScenarioConfig cfg = parse_config(in);
    const ModeComparison cmp = compare_modes(cfg, false);
    double gap = 0.0;
    for (std::size_t k = 0; k < cmp.t.size(); ++k)
        gap = std::max(gap, std::abs(cmp.mu_per_mode[0][k] - cmp.mu_per_mode[1][k]));
    REQUIRE(gap < 1e-8);
}

TEST_CASE("single-atom seller: all modes coincide") {
    TmpDir tmp;
    std::istringstream in(
        "T = 1.0\ngrid_n = 601\ngrid_refinement = 4\neta = 5\nlambda = 5\nkappa = 10\n"
        "dist.type = empirical\ndist.positions = 2.0\nout_dir = " +
        (tmp.path / "atom").string() + "\n");
    ScenarioConfig cfg = parse_config(in);
    const ModeComparison cmp = compare_modes(cfg, false);
    double gap = 0.0;
    for (std::size_t k = 0; k < cmp.t.size(); ++k) {
        gap = std::max(gap, std::abs(cmp.mu_per_mode[0][k] - cmp.mu_per_mode[1][k]));
        gap = std::max(gap, std::abs(cmp.mu_per_mode[0][k] - cmp.mu_per_mode[2][k]));
    }
    REQUIRE(gap < 1e-6);
}

TEST_CASE("n-player sweep converges towards the mean-field rate") {
    TmpDir tmp;
    std::istringstream in(scenario_text((tmp.path / "sweep").string()));
    ScenarioConfig cfg = parse_config(in);
    cfg.grid_n = 601;
    const auto table = sweep_n(cfg, {7, 15}, true);
    REQUIRE(table.size() == 2);
    REQUIRE(table[1].second < table[0].second);
    REQUIRE(fs::exists(tmp.path / "sweep" / "nplayer_convergence.csv"));
}

TEST_CASE("buyer-dominated scenario is solved by reflection and mirrored back") {
    TmpDir tmp;
    std::istringstream in(
        "T = 1.0\ngrid_n = 601\ngrid_refinement = 4\neta = 5\nlambda = 5\nkappa = 10\n"
        "dist.type = exp_mixture\ndist.seller_mass = 0.2\ndist.seller_rate = 1.0\n"
        "dist.buyer_mass = 0.8\ndist.buyer_rate = 0.6666666666666666\nout_dir = " +
        (tmp.path / "refl").string() + "\n");
    const ScenarioResult res = run_scenario(parse_config(in));
    REQUIRE(res.reflected);
    REQUIRE(res.mean_nu < 0.0);
    const auto kv = load_summary((tmp.path / "refl" / "summary.txt").string());
    REQUIRE(std::stod(kv.at("int_mu")) == Catch::Approx(res.mean_nu).margin(1e-3));
}
