#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "dermarket/der.hpp"

namespace dermarket {

/// Price-responsive demand of one asset at a fixed state:
///
///   d(λ) = clamp((r x + c - λ) / q, Ω.lo, Ω.hi)
///
/// The curve is an immutable snapshot; it does not keep a reference to the
/// owning parameters.
class BidCurve {
public:
    BidCurve(const DerParams& p, double x)
        : omega_(feasible_input_set(p, x)), marginal_(p.r * x + p.c), q_(p.q), x_(x) {}

    /// Direct construction, mostly for tests and synthetic curves.
    BidCurve(double marginal_utility_intercept, double q, Interval omega)
        : omega_(omega), marginal_(marginal_utility_intercept), q_(q) {}

    [[nodiscard]] double operator()(double price) const {
        return omega_.clamp((marginal_ - price) / q_);
    }

    /// r x + c: marginal utility at zero consumption.
    [[nodiscard]] double marginal_intercept() const { return marginal_; }
    /// Unconstrained demand at zero price, (r x + c) / q.
    [[nodiscard]] double intercept() const { return marginal_ / q_; }
    [[nodiscard]] double slope() const { return -1.0 / q_; }
    [[nodiscard]] double q() const { return q_; }
    [[nodiscard]] double state() const { return x_; }
    [[nodiscard]] const FeasibleInput& omega() const { return omega_; }

    /// Marginal utility of consuming d.
    [[nodiscard]] double marginal_utility(double d) const { return marginal_ - q_ * d; }

private:
    FeasibleInput omega_;
    double marginal_;
    double q_;
    double x_ = 0.0;
};

[[nodiscard]] inline double bid(const BidCurve& curve, double price) { return curve(price); }

struct Thresholds {
    double saturate_high = 0.0;  // at or below this price the bid is Ω.hi
    double saturate_low = 0.0;   // at or above this price the bid is Ω.lo
};

[[nodiscard]] inline Thresholds thresholds(const BidCurve& curve) {
    return {curve.marginal_utility(curve.omega().hi), curve.marginal_utility(curve.omega().lo)};
}

/// Sum of bids in index order.
[[nodiscard]] inline double aggregate_demand(std::span<const BidCurve> curves, double price) {
    double total = 0.0;
    for (const auto& c : curves) total += c(price);
    return total;
}

/// Builds curves for every asset; every state must be inside its box.
[[nodiscard]] inline std::vector<BidCurve> make_curves(std::span<const DerParams> population,
                                                        std::span<const double> x) {
    std::vector<BidCurve> curves;
    curves.reserve(population.size());
    for (std::size_t i = 0; i < population.size(); ++i) curves.emplace_back(population[i], x[i]);
    return curves;
}

}  // namespace dermarket
