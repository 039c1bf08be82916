#pragma once

// Initial-position distribution and the tail functionals the equilibrium
// equation consumes: p, q, their antiderivatives P, Q and the truncated
// first moment ell.  Two representations: an exponential mixture with an
// optional atom at zero, and an empirical (atomic) law with uniform weights.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace liqgame {

struct Stratum {
    double mass;  ///< nu-mass represented
    double x;     ///< representative position (stratum centroid)
};

class PortfolioDistribution {
public:
    /// Sellers with density seller_mass*seller_rate*exp(-seller_rate*x) on x>0,
    /// buyers with density buyer_mass*buyer_rate*exp(buyer_rate*x) on x<0.
    /// Any remaining mass sits as an atom at zero.
    static PortfolioDistribution exp_mixture(double seller_mass, double seller_rate,
                                             double buyer_mass, double buyer_rate) {
        if (seller_mass < 0.0 || buyer_mass < 0.0 || seller_mass + buyer_mass > 1.0 + 1e-12)
            throw std::invalid_argument("exp_mixture: masses must be non-negative with sum <= 1");
        if ((seller_mass > 0.0 && seller_rate <= 0.0) || (buyer_mass > 0.0 && buyer_rate <= 0.0))
            throw std::invalid_argument("exp_mixture: rates must be positive");
        PortfolioDistribution d;
        d.kind_ = Kind::ExpMixture;
        d.ms_ = seller_mass;
        d.rs_ = seller_rate;
        d.mb_ = buyer_mass;
        d.rb_ = buyer_rate;
        d.atom0_ = std::max(0.0, 1.0 - seller_mass - buyer_mass);
        return d;
    }

    static PortfolioDistribution empirical(std::vector<double> positions) {
        if (positions.empty()) throw std::invalid_argument("empirical: no positions");
        PortfolioDistribution d;
        d.kind_ = Kind::Empirical;
        d.xs_ = std::move(positions);
        std::sort(d.xs_.begin(), d.xs_.end());
        d.atom0_ = double(std::count(d.xs_.begin(), d.xs_.end(), 0.0)) / double(d.xs_.size());
        return d;
    }

    bool is_empirical() const { return kind_ == Kind::Empirical; }
    const std::vector<double>& positions() const { return xs_; }
    std::size_t player_count() const { return xs_.size(); }
    double zero_atom() const { return atom0_; }

    /// nu((-inf, x]), or nu((-inf, x)) with include_ties = false.
    double p(double x, bool include_ties = true) const {
        if (kind_ == Kind::ExpMixture) {
            if (x < 0.0) return mb_ * std::exp(rb_ * x);
            return mb_ + atom0_ * (include_ties || x > 0.0 ? 1.0 : 0.0) +
                   (x > 0.0 ? ms_ * (1.0 - std::exp(-rs_ * x)) : 0.0);
        }
        auto it = include_ties ? std::upper_bound(xs_.begin(), xs_.end(), x)
                               : std::lower_bound(xs_.begin(), xs_.end(), x);
        return double(it - xs_.begin()) / double(xs_.size());
    }

    /// nu([x, inf)), or nu((x, inf)) with include_ties = false.
    double q(double x, bool include_ties = true) const {
        if (kind_ == Kind::ExpMixture) {
            if (x > 0.0) return ms_ * std::exp(-rs_ * x);
            return ms_ + atom0_ * (include_ties || x < 0.0 ? 1.0 : 0.0) +
                   (x < 0.0 ? mb_ * (1.0 - std::exp(rb_ * x)) : 0.0);
        }
        auto it = include_ties ? std::lower_bound(xs_.begin(), xs_.end(), x)
                               : std::upper_bound(xs_.begin(), xs_.end(), x);
        return double(xs_.end() - it) / double(xs_.size());
    }

    /// Q(x) = int_0^x q(y) dy (negative for x < 0).
    double bigQ(double x) const {
        if (kind_ == Kind::ExpMixture) {
            if (x >= 0.0) return ms_ / rs_ * (x > 0.0 ? -std::expm1(-rs_ * x) : 0.0);
            // int_x^0 q with q(y) = 1 - mb*exp(rb*y) on y < 0
            return x + (mb_ > 0.0 ? mb_ / rb_ * (-std::expm1(rb_ * x)) : 0.0);
        }
        return piecewise_Q(x);
    }

    /// P(x) = -int_x^0 p(y) dy, x <= 0.  Non-positive, Lipschitz with p(0-).
    double bigP(double x) const {
        if (x >= 0.0) return 0.0;
        if (kind_ == Kind::ExpMixture) return -(mb_ > 0.0 ? mb_ / rb_ * (-std::expm1(rb_ * x)) : 0.0);
        return piecewise_P(x);
    }

    /// ell(x) = -int_[x,0) y nu(dy), x <= 0.  Non-negative.
    double ell(double x) const {
        if (x >= 0.0) return 0.0;
        if (kind_ == Kind::ExpMixture) {
            if (mb_ == 0.0) return 0.0;
            // closed form of -int_x^0 y mb rb e^{rb y} dy
            return mb_ * x * std::exp(rb_ * x) + mb_ / rb_ * (-std::expm1(rb_ * x));
        }
        double s = 0.0;
        for (double xi : xs_)
            if (xi >= x && xi < 0.0) s -= xi;
        return s / double(xs_.size());
    }

    double mean() const {
        if (kind_ == Kind::ExpMixture) return (ms_ > 0.0 ? ms_ / rs_ : 0.0) - (mb_ > 0.0 ? mb_ / rb_ : 0.0);
        double s = 0.0;
        for (double xi : xs_) s += xi;
        return s / double(xs_.size());
    }

    double abs_moment() const {
        if (kind_ == Kind::ExpMixture) return (ms_ > 0.0 ? ms_ / rs_ : 0.0) + (mb_ > 0.0 ? mb_ / rb_ : 0.0);
        double s = 0.0;
        for (double xi : xs_) s += std::abs(xi);
        return s / double(xs_.size());
    }

    /// lim_{x->inf} Q(x) = E[nu restricted to [0, inf)].
    double seller_restricted_mean() const {
        if (kind_ == Kind::ExpMixture) return ms_ > 0.0 ? ms_ / rs_ : 0.0;
        double s = 0.0;
        for (double xi : xs_)
            if (xi > 0.0) s += xi;
        return s / double(xs_.size());
    }

    double buyer_mass_total() const {
        if (kind_ == Kind::ExpMixture) return mb_;
        return double(std::count_if(xs_.begin(), xs_.end(), [](double v) { return v < 0.0; })) /
               double(xs_.size());
    }

    double seller_mass_total() const {
        if (kind_ == Kind::ExpMixture) return ms_;
        return double(std::count_if(xs_.begin(), xs_.end(), [](double v) { return v > 0.0; })) /
               double(xs_.size());
    }

    /// Exclusive upper bound of the exit-mass parameter: the smallest c with
    /// Q(c) = E[nu].  +inf sentinel when there are no buyers (then E[nu]
    /// equals lim Q and no finite bound exists); callers must cap the scan.
    double qinv_of_mean() const {
        const double m = mean();
        if (!(m > 0.0)) throw std::domain_error("qinv_of_mean: requires E[nu] > 0");
        if (buyer_mass_total() == 0.0) return std::numeric_limits<double>::infinity();
        if (kind_ == Kind::ExpMixture) {
            const double lim = ms_ / rs_;
            return -std::log1p(-m / lim) / rs_;
        }
        // Q is piecewise linear: walk segments until Q crosses the mean.
        double prev_x = 0.0, acc = 0.0;
        for (double a : sorted_positive_atoms()) {
            const double slope = q(prev_x, false);  // constant on (prev_x, a)
            const double seg = slope * (a - prev_x);
            if (acc + seg >= m) return prev_x + (m - acc) / slope;
            acc += seg;
            prev_x = a;
        }
        const double slope = q(prev_x, false);
        if (slope <= 0.0) return std::numeric_limits<double>::infinity();
        return prev_x + (m - acc) / slope;
    }

    // Active-mass variants: identical to q and p except that zero-position
    // players (who never trade) are not counted.
    double active_seller_mass(double x, bool include_ties = true) const {
        double v = q(x, include_ties);
        if (x <= 0.0) v -= atom0_;
        return v;
    }
    double active_buyer_mass(double y, bool include_ties = true) const {
        double v = p(y, include_ties);
        if (y >= 0.0) v -= atom0_;
        return v;
    }

    std::vector<double> sorted_positive_atoms() const {
        std::vector<double> a;
        for (double xi : xs_)
            if (xi > 0.0 && (a.empty() || a.back() != xi)) a.push_back(xi);
        return a;
    }
    /// Absolute values of negative atoms, ascending.
    std::vector<double> sorted_buyer_magnitudes() const {
        std::vector<double> a;
        for (auto it = xs_.rbegin(); it != xs_.rend(); ++it)
            if (*it < 0.0 && (a.empty() || a.back() != -*it)) a.push_back(-*it);
        return a;
    }

    /// Deterministic mid-quantile of the mixture law; u in (0, 1).
    double quantile(double u) const {
        if (kind_ == Kind::Empirical) {
            const std::size_t k = std::min(xs_.size() - 1, std::size_t(u * double(xs_.size())));
            return xs_[k];
        }
        if (u < mb_) return std::log(u / mb_) / rb_;
        if (u <= mb_ + atom0_) return 0.0;
        return -std::log((1.0 - u) / ms_) / rs_;
    }

    PortfolioDistribution reflected() const {
        if (kind_ == Kind::ExpMixture) {
            PortfolioDistribution d = exp_mixture(mb_, rb_, ms_, rs_);
            return d;
        }
        std::vector<double> neg(xs_.size());
        for (std::size_t i = 0; i < xs_.size(); ++i) neg[i] = -xs_[i];
        return empirical(std::move(neg));
    }

    /// Equal-mass strata of one side of the mixture with boundaries forced at
    /// the given cut points.  Representative = conditional mean, so linear
    /// responses aggregate exactly.  Only meaningful for the mixture kind.
    std::vector<Stratum> quantize_side(bool sellers, const std::vector<double>& cuts,
                                       std::size_t strata) const {
        if (kind_ != Kind::ExpMixture)
            throw std::logic_error("quantize_side: empirical laws aggregate exactly");
        const double mass = sellers ? ms_ : mb_;
        const double rate = sellers ? rs_ : rb_;
        std::vector<Stratum> out;
        if (mass <= 0.0 || strata == 0) return out;

        std::vector<double> edges{0.0};  // in |x| coordinates
        for (double c : cuts) {
            const double a = std::abs(c);
            if (a > edges.back() * (1.0 + 1e-15) && a > 0.0) edges.push_back(a);
        }
        edges.push_back(std::numeric_limits<double>::infinity());

        for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
            const double a = edges[j], b = edges[j + 1];
            const double sub_mass = mass * (std::exp(-rate * a) -
                                            (std::isinf(b) ? 0.0 : std::exp(-rate * b)));
            if (sub_mass <= 1e-14) continue;
            auto n = std::max<std::size_t>(1, std::size_t(std::lround(double(strata) * sub_mass / mass)));
            const double lo_tail = std::exp(-rate * a);
            const double hi_tail = std::isinf(b) ? 0.0 : std::exp(-rate * b);
            for (std::size_t i = 0; i < n; ++i) {
                const double ta = lo_tail + (hi_tail - lo_tail) * double(i) / double(n);
                const double tb = lo_tail + (hi_tail - lo_tail) * double(i + 1) / double(n);
                const double xa = -std::log(ta) / rate;
                const double c = tb <= 0.0 ? xa + 1.0 / rate : exp_centroid(xa, -std::log(tb) / rate, rate);
                out.push_back({mass * (ta - tb), sellers ? c : -c});
            }
        }
        return out;
    }

private:
    enum class Kind { ExpMixture, Empirical };

    static double exp_centroid(double a, double b, double r) {
        const double d = b - a;
        const double w = -std::expm1(-r * d);  // 1 - e^{-rd}
        return a + 1.0 / r - d * (1.0 - w) / w;
    }

    // q and p are piecewise constant between atoms, so sampling segment
    // midpoints integrates them exactly.
    double piecewise_Q(double x) const {
        if (x >= 0.0) {
            double acc = 0.0, lo = 0.0;
            for (double a : sorted_positive_atoms()) {
                const double hi = std::min(a, x);
                if (hi > lo) acc += q(0.5 * (lo + hi)) * (hi - lo);
                if (a >= x) return acc;
                lo = a;
            }
            if (x > lo) acc += q(0.5 * (lo + x)) * (x - lo);
            return acc;
        }
        double acc = 0.0, hi = 0.0;
        for (double m : sorted_buyer_magnitudes()) {
            const double lo = std::max(-m, x);
            if (lo < hi) acc += q(0.5 * (lo + hi)) * (hi - lo);
            if (-m <= x) return -acc;
            hi = -m;
        }
        if (x < hi) acc += q(0.5 * (x + hi)) * (hi - x);
        return -acc;
    }

    double piecewise_P(double x) const {
        double acc = 0.0, hi = 0.0;
        for (double m : sorted_buyer_magnitudes()) {
            const double lo = std::max(-m, x);
            if (lo < hi) acc += p(0.5 * (lo + hi)) * (hi - lo);
            if (-m <= x) return -acc;
            hi = -m;
        }
        if (x < hi) acc += p(0.5 * (x + hi)) * (hi - x);
        return -acc;
    }

    Kind kind_ = Kind::ExpMixture;
    double ms_ = 0.0, rs_ = 1.0, mb_ = 0.0, rb_ = 1.0, atom0_ = 1.0;
    std::vector<double> xs_;
};

}  // namespace liqgame
