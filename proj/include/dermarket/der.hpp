#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dermarket {

/// Thrown when an asset or population violates a modelling invariant.
class InvalidModel : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation is called outside its state domain.
class OutOfBox : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Closed scalar interval [lo, hi].
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    [[nodiscard]] bool contains(double v) const { return lo <= v && v <= hi; }
    [[nodiscard]] double clamp(double v) const { return std::clamp(v, lo, hi); }
    [[nodiscard]] double width() const { return hi - lo; }

    friend bool operator==(const Interval&, const Interval&) = default;
};

/// One asset: scalar storage dynamics x+ = a x + d with box limits and a
/// quadratic, state-dependent utility  v(d, x) = -q d^2 / 2 + (r x + c) d.
struct DerParams {
    double a = 1.0;      // retention per period, (0, 1]
    double x_lo = 0.0;   // energy bounds
    double x_hi = 0.0;
    double d_lo = 0.0;   // power bounds
    double d_hi = 0.0;
    double q = 1.0;      // utility curvature, > 0
    double r = 0.0;      // state coupling
    double c = 0.0;      // utility offset

    [[nodiscard]] Interval state_box() const { return {x_lo, x_hi}; }
    [[nodiscard]] Interval input_box() const { return {d_lo, d_hi}; }
    [[nodiscard]] bool in_box(double x) const { return x_lo <= x && x <= x_hi; }

    friend bool operator==(const DerParams&, const DerParams&) = default;
};

/// Feasible consumption interval (X - a x) ∩ D for a given state.
using FeasibleInput = Interval;

struct Controllability {
    bool ok = false;
    double lower_margin = 0.0;  // a x_lo + d_hi - x_lo
    double upper_margin = 0.0;  // x_hi - a x_hi - d_lo
};

/// Both strict controllability inequalities, with their slack.
[[nodiscard]] inline Controllability check_controllability(const DerParams& p) {
    Controllability out;
    out.lower_margin = p.a * p.x_lo + p.d_hi - p.x_lo;
    out.upper_margin = p.x_hi - p.a * p.x_hi - p.d_lo;
    out.ok = out.lower_margin > 0.0 && out.upper_margin > 0.0;
    return out;
}

/// Throws InvalidModel naming the first violated invariant.
inline void validate(const DerParams& p, std::size_t index = 0) {
    auto fail = [index](const std::string& what) {
        throw InvalidModel("asset " + std::to_string(index) + ": " + what);
    };
    const double fields[] = {p.a, p.x_lo, p.x_hi, p.d_lo, p.d_hi, p.q, p.r, p.c};
    for (double f : fields) {
        if (!std::isfinite(f)) fail("non-finite parameter");
    }
    if (!(p.a > 0.0 && p.a <= 1.0)) fail("requires 0 < a <= 1");
    if (!(p.x_lo < p.x_hi)) fail("requires x_lo < x_hi");
    if (!(p.d_lo < p.d_hi)) fail("requires d_lo < d_hi");
    if (!(p.q > 0.0)) fail("requires q > 0");
    const auto ctrl = check_controllability(p);
    if (ctrl.lower_margin <= 0.0) fail("not controllable: a*x_lo + d_hi > x_lo fails");
    if (ctrl.upper_margin <= 0.0) fail("not controllable: a*x_hi + d_lo < x_hi fails");
}

/// Rejects the whole population if any asset is invalid; m = 0 is rejected.
inline void validate_population(std::span<const DerParams> population) {
    if (population.empty()) throw InvalidModel("population is empty");
    for (std::size_t i = 0; i < population.size(); ++i) validate(population[i], i);
}

/// x+ = a x + d.
[[nodiscard]] inline double step(const DerParams& p, double x, double d) {
    return p.a * x + d;
}

/// [max(d_lo, x_lo - a x), min(d_hi, x_hi - a x)]. Requires x in the state box;
/// out-of-box states must use fallback_policy instead.
[[nodiscard]] inline FeasibleInput feasible_input_set(const DerParams& p, double x) {
    if (!p.in_box(x)) {
        throw OutOfBox("state " + std::to_string(x) + " outside [" + std::to_string(p.x_lo) +
                       ", " + std::to_string(p.x_hi) + "]; use fallback_policy");
    }
    return {std::max(p.d_lo, p.x_lo - p.a * x), std::min(p.d_hi, p.x_hi - p.a * x)};
}

/// Consumption for an asset outside its state box: full power below, minimum above.
[[nodiscard]] inline double fallback_policy(const DerParams& p, double x) {
    if (x < p.x_lo) return p.d_hi;
    if (x > p.x_hi) return p.d_lo;
    throw OutOfBox("fallback_policy called with in-box state " + std::to_string(x));
}

/// Per-asset energy states at one market period.
struct MarketState {
    std::vector<double> x;

    [[nodiscard]] std::size_t size() const { return x.size(); }

    [[nodiscard]] std::vector<bool> in_box(std::span<const DerParams> population) const {
        std::vector<bool> flags(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) flags[i] = population[i].in_box(x[i]);
        return flags;
    }

    friend bool operator==(const MarketState&, const MarketState&) = default;
};

}  // namespace dermarket
