#include <catch2/catch_amalgamated.hpp>

#include "liqgame/distribution.hpp"
#include "oracle_utils.hpp"

using namespace liqgame;

namespace {
PortfolioDistribution scenario_mixture() {
    // q(x) = 0.8 e^{-2x/3}, p(x) = 0.2 e^x
    return PortfolioDistribution::exp_mixture(0.8, 2.0 / 3.0, 0.2, 1.0);
}
}  // namespace

TEST_CASE("mixture tail values") {
    const auto d = scenario_mixture();
    REQUIRE(d.p(0.0) == Catch::Approx(0.2).epsilon(1e-15));
    REQUIRE(d.q(0.0) == Catch::Approx(0.8).epsilon(1e-15));
    REQUIRE(d.p(-40.0) < 1e-15);
    REQUIRE(d.q(60.0) < 1e-15);
    REQUIRE(d.mean() == Catch::Approx(1.0).margin(1e-10));
    REQUIRE(d.abs_moment() == Catch::Approx(1.4).margin(1e-12));
    REQUIRE(d.zero_atom() == 0.0);
}

TEST_CASE("mixture integrated tails against quadrature") {
    const auto d = scenario_mixture();
    REQUIRE(d.bigQ(0.0) == 0.0);
    REQUIRE(d.bigP(0.0) == 0.0);
    REQUIRE(d.ell(0.0) == 0.0);
    REQUIRE(d.seller_restricted_mean() == Catch::Approx(1.2).margin(1e-12));
    REQUIRE(d.bigQ(80.0) == Catch::Approx(1.2).margin(1e-12));
    REQUIRE(d.bigP(-80.0) == Catch::Approx(-0.2).margin(1e-12));
    REQUIRE(d.ell(-80.0) == Catch::Approx(0.2).margin(1e-12));
    for (double x : {0.3, 1.1, 2.7}) {
        const double ref = testutil::integrate([&](double y) { return d.q(y); }, 0.0, x);
        REQUIRE(d.bigQ(x) == Catch::Approx(ref).margin(1e-10));
    }
    for (double x : {-0.4, -1.3, -3.0}) {
        const double refP = -testutil::integrate([&](double y) { return d.p(y); }, x, 0.0);
        REQUIRE(d.bigP(x) == Catch::Approx(refP).margin(1e-10));
        const double refL =
            -testutil::integrate([&](double y) { return y * 0.2 * std::exp(y); }, x, 0.0);
        REQUIRE(d.ell(x) == Catch::Approx(refL).margin(1e-10));
    }
}

TEST_CASE("ell identity and growth bounds") {
    const auto d = scenario_mixture();
    for (double x = -5.0; x < -1e-9; x += 0.17) {
        REQUIRE(d.ell(x) == Catch::Approx(x * d.p(x) - d.bigP(x)).margin(1e-10));
        REQUIRE(std::abs(d.ell(x)) <= 2.0 * std::abs(x));
    }
    // Lipschitz constants of P and Q
    for (double a = -3.0; a < 0.0; a += 0.31) {
        const double b = a + 0.2;
        REQUIRE(std::abs(d.bigP(a) - d.bigP(b)) <= d.p(0.0) * std::abs(a - b) + 1e-14);
    }
    for (double a = 0.0; a < 3.0; a += 0.31) {
        const double b = a + 0.2;
        REQUIRE(std::abs(d.bigQ(a) - d.bigQ(b)) <= d.q(0.0) * std::abs(a - b) + 1e-14);
    }
}

TEST_CASE("scenario inverse of Q at the mean") {
    const auto d = scenario_mixture();
    // 1.2 (1 - e^{-2c/3}) = 1  =>  c = 1.5 ln 6
    REQUIRE(d.qinv_of_mean() == Catch::Approx(2.6876392038420827).epsilon(1e-12));
    // cross-check by bisection on Q
    double lo = 0.0, hi = 50.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (d.bigQ(mid) < d.mean() ? lo : hi) = mid;
    }
    REQUIRE(d.qinv_of_mean() == Catch::Approx(0.5 * (lo + hi)).margin(1e-10));
}

TEST_CASE("empirical tails are exact counting functions") {
    const auto d = PortfolioDistribution::empirical({-1.0, -2.0, 3.0, 1.0});
    REQUIRE(d.p(-1.0) == Catch::Approx(0.5));
    REQUIRE(d.p(-1.0, false) == Catch::Approx(0.25));
    REQUIRE(d.q(1.0) == Catch::Approx(0.5));
    REQUIRE(d.q(1.0, false) == Catch::Approx(0.25));
    REQUIRE(d.mean() == Catch::Approx(0.25));
    // piecewise-linear Q: q = 1/2 on (0,1), 1/4 on (1,3)
    REQUIRE(d.bigQ(0.5) == Catch::Approx(0.25));
    REQUIRE(d.bigQ(2.0) == Catch::Approx(0.5 + 0.25));
    REQUIRE(d.bigQ(10.0) == Catch::Approx(1.0));  // restricted mean (1+3)/4
    // P side: p = 1/4 on (-2,-1), 1/2 on (-1,0)
    REQUIRE(d.bigP(-1.5) == Catch::Approx(-(0.5 * 1.0 + 0.25 * 0.5)));
    REQUIRE(d.ell(-1.0) == Catch::Approx(0.25));
    REQUIRE(d.ell(-2.0) == Catch::Approx(0.75));
    REQUIRE(d.qinv_of_mean() == Catch::Approx(0.5));  // Q(c) = c/2 near zero
}

TEST_CASE("empirical kink-aware inverse") {
    const auto d = PortfolioDistribution::empirical({-1.0, 3.0});
    // mean 1, Q(x) = x/2 up to 3: inverse at the mean is 2
    REQUIRE(d.qinv_of_mean() == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("degenerate seller-only laws") {
    const auto d = PortfolioDistribution::empirical({2.0});
    REQUIRE(d.mean() == Catch::Approx(2.0));
    REQUIRE(std::isinf(d.qinv_of_mean()));
    const auto z = PortfolioDistribution::empirical({0.0});
    REQUIRE_THROWS_AS(z.qinv_of_mean(), std::domain_error);
}

TEST_CASE("zero atom is excluded from active masses only") {
    const auto d = PortfolioDistribution::exp_mixture(0.5, 1.0, 0.3, 1.0);
    REQUIRE(d.zero_atom() == Catch::Approx(0.2));
    REQUIRE(d.q(0.0) == Catch::Approx(0.7));
    REQUIRE(d.p(0.0) == Catch::Approx(0.5));
    REQUIRE(d.active_seller_mass(0.0) == Catch::Approx(0.5));
    REQUIRE(d.active_buyer_mass(0.0) == Catch::Approx(0.3));
    REQUIRE(d.active_seller_mass(0.4) == Catch::Approx(d.q(0.4)));
    // active masses are continuous through zero for the mixture
    REQUIRE(d.active_seller_mass(-1e-12) == Catch::Approx(d.active_seller_mass(1e-12)).margin(1e-9));
}

TEST_CASE("reflection mirrors the law") {
    const auto d = scenario_mixture();
    const auto r = d.reflected();
    REQUIRE(r.mean() == Catch::Approx(-d.mean()));
    REQUIRE(r.p(-1.3) == Catch::Approx(d.q(1.3)));
    REQUIRE(r.q(0.7) == Catch::Approx(d.p(-0.7)));
}

TEST_CASE("equal-mass strata with centroid representatives aggregate exactly") {
    const auto d = scenario_mixture();
    for (std::vector<double> cuts : {std::vector<double>{}, std::vector<double>{0.73}}) {
        const auto strata = d.quantize_side(true, cuts, 128);
        double mass = 0.0, first_moment = 0.0;
        for (const auto& s : strata) {
            mass += s.mass;
            first_moment += s.mass * s.x;
        }
        REQUIRE(mass == Catch::Approx(0.8).margin(1e-12));
        REQUIRE(first_moment == Catch::Approx(1.2).margin(1e-10));
    }
    const auto bstrata = d.quantize_side(false, {-0.94}, 128);
    double mass = 0.0, first_moment = 0.0;
    for (const auto& s : bstrata) {
        mass += s.mass;
        first_moment += s.mass * s.x;
        REQUIRE(s.x < 0.0);
    }
    REQUIRE(mass == Catch::Approx(0.2).margin(1e-12));
    REQUIRE(first_moment == Catch::Approx(-0.2).margin(1e-10));
}

TEST_CASE("mid-quantile sampling inverts the cdf") {
    const auto d = scenario_mixture();
    for (double u : {0.05, 0.15, 0.4, 0.8, 0.97}) {
        const double x = d.quantile(u);
        if (x < 0.0) REQUIRE(d.p(x) == Catch::Approx(u).margin(1e-12));
        else REQUIRE(1.0 - d.q(x) == Catch::Approx(u).margin(1e-12));
    }
}
