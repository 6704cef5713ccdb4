#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dermarket/bidding.hpp"
#include "dermarket/der.hpp"

namespace dermarket {

/// Quadratic supply cost c(s) = β1 s²/2 + β2 s; marginal cost λ = β1 s + β2.
struct SupplyModel {
    double beta1 = 1.0;
    double beta2 = 0.0;

    friend bool operator==(const SupplyModel&, const SupplyModel&) = default;
};

inline void validate(const SupplyModel& sm) {
    if (!std::isfinite(sm.beta1) || !(sm.beta1 > 0.0)) throw InvalidModel("supply: requires beta1 > 0");
    if (!std::isfinite(sm.beta2) || !(sm.beta2 > 0.0)) throw InvalidModel("supply: requires beta2 > 0");
}

/// Profit-maximising supply at price λ.
[[nodiscard]] inline double supply_at(const SupplyModel& sm, double price) {
    return (price - sm.beta2) / sm.beta1;
}

/// Raised when no sign change of excess demand can be bracketed. Valid curves
/// never trigger it.
class ClearingFailure : public std::runtime_error {
public:
    ClearingFailure(const std::string& what, double lo, double hi)
        : std::runtime_error(what), bracket_lo(lo), bracket_hi(hi) {}
    double bracket_lo;
    double bracket_hi;
};

struct ClearingOptions {
    /// Bracket width at which bisection stops. Non-positive selects
    /// 1e-10 * max(1, |β2|).
    double tol = 0.0;
    /// Bids are evaluated on this many threads; the reduction is always
    /// sequential in asset order, so results do not depend on it.
    unsigned threads = 1;
    int max_expansions = 64;
    int max_iterations = 400;
};

[[nodiscard]] inline double effective_tolerance(const ClearingOptions& opt, const SupplyModel& sm) {
    return opt.tol > 0.0 ? opt.tol : 1e-10 * std::max(1.0, std::abs(sm.beta2));
}

struct ClearingOutcome {
    double lambda_star = 0.0;
    std::vector<double> d_star;
    double s_star = 0.0;
    double gap = 0.0;           // |Σ d - s|
    double kkt_residual = 0.0;
    int iterations = 0;         // bisection steps
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;

    [[nodiscard]] double total_demand() const {
        double t = 0.0;
        for (double d : d_star) t += d;
        return t;
    }
};

namespace detail {

inline void evaluate_bids(std::span<const BidCurve> curves, double price, std::span<double> out,
                          unsigned threads) {
    const std::size_t n = curves.size();
    if (threads <= 1 || n < 2 * static_cast<std::size_t>(threads)) {
        for (std::size_t i = 0; i < n; ++i) out[i] = curves[i](price);
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t end = std::min(n, begin + chunk);
        pool.emplace_back([&, begin, end] {
            for (std::size_t i = begin; i < end; ++i) out[i] = curves[i](price);
        });
    }
}

inline double sum(std::span<const double> v) {
    double t = 0.0;
    for (double e : v) t += e;
    return t;
}

}  // namespace detail

/// Largest violation of the optimality system of the welfare problem at the
/// reported outcome: per-asset stationarity/complementarity, feasibility,
/// price = marginal cost, and supply-demand balance.
[[nodiscard]] inline double kkt_residual(const ClearingOutcome& outcome, std::span<const BidCurve> curves,
                                         const SupplyModel& sm) {
    const double lambda = outcome.lambda_star;
    double worst = 0.0;
    double demand = 0.0;
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& cv = curves[i];
        const auto& om = cv.omega();
        const double d = outcome.d_star[i];
        demand += d;
        const double g = cv.marginal_utility(d) - lambda;
        double v = 0.0;
        if (d < om.lo) {
            v = om.lo - d;
        } else if (d > om.hi) {
            v = d - om.hi;
        } else if (om.lo == om.hi) {
            v = 0.0;
        } else if (d == om.hi) {
            v = std::max(0.0, -g);  // at the upper limit the asset must still want more
        } else if (d == om.lo) {
            v = std::max(0.0, g);
        } else {
            v = std::abs(g);
        }
        worst = std::max(worst, v);
    }
    worst = std::max(worst, std::abs(lambda - sm.beta1 * outcome.s_star - sm.beta2));
    worst = std::max(worst, std::abs(demand - outcome.s_star));
    return worst;
}

/// Competitive equilibrium of one period by bisection on the price.
///
/// Excess demand D(λ) - S(λ) is continuous and strictly decreasing, so the
/// root is unique. The initial bracket [β2 + β1 Σ Ω.lo, β2 + β1 Σ Ω.hi] holds
/// the sign change; it is widened by doubling only if corrupted curves break
/// that. After bisection the price is recomputed exactly on the linear piece
/// containing the bracket midpoint, and the exact value is kept when it does
/// not increase the imbalance.
///
/// An empty curve list clears at λ = β2 with zero supply.
[[nodiscard]] inline ClearingOutcome clear_market(std::span<const BidCurve> curves, const SupplyModel& sm,
                                                  const ClearingOptions& opt = {}) {
    const double tol = effective_tolerance(opt, sm);
    const std::size_t m = curves.size();
    ClearingOutcome out;
    out.d_star.assign(m, 0.0);

    std::vector<double> bids(m);
    auto excess = [&](double price) {
        detail::evaluate_bids(curves, price, bids, opt.threads);
        return detail::sum(bids) - supply_at(sm, price);
    };

    double sum_lo = 0.0;
    double sum_hi = 0.0;
    for (const auto& c : curves) {
        sum_lo += c.omega().lo;
        sum_hi += c.omega().hi;
    }
    double lo = sm.beta2 + sm.beta1 * sum_lo;
    double hi = sm.beta2 + sm.beta1 * sum_hi;

    if (!std::isfinite(excess(lo)) || !std::isfinite(excess(hi))) {
        throw ClearingFailure("clearing: excess demand is not finite on the initial bracket", lo, hi);
    }

    double width = std::max(hi - lo, tol);
    int expansions = 0;
    while (excess(lo) < 0.0) {
        if (++expansions > opt.max_expansions || !std::isfinite(lo)) {
            throw ClearingFailure("clearing: lower bracket end never reached nonnegative excess demand", lo, hi);
        }
        lo -= width;
        width *= 2.0;
    }
    width = std::max(hi - lo, tol);
    while (excess(hi) > 0.0) {
        if (++expansions > opt.max_expansions || !std::isfinite(hi)) {
            throw ClearingFailure("clearing: upper bracket end never reached nonpositive excess demand", lo, hi);
        }
        hi += width;
        width *= 2.0;
    }

    int iters = 0;
    while (hi - lo > tol && iters < opt.max_iterations) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (excess(mid) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        ++iters;
    }
    out.iterations = iters;
    out.bracket_lo = lo;
    out.bracket_hi = hi;

    double price = 0.5 * (lo + hi);
    const double e_mid = excess(price);

    // Exact root of the affine piece the midpoint sits on.
    double num = sm.beta2 / sm.beta1;
    double den = 1.0 / sm.beta1;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& c = curves[i];
        const double raw = (c.marginal_intercept() - price) / c.q();
        if (c.omega().lo < raw && raw < c.omega().hi) {
            num += c.marginal_intercept() / c.q();
            den += 1.0 / c.q();
        } else {
            num += bids[i];
        }
    }
    const double polished = num / den;
    if (std::isfinite(polished) && std::abs(excess(polished)) <= std::abs(e_mid)) {
        price = polished;
    }

    out.lambda_star = price;
    detail::evaluate_bids(curves, price, out.d_star, opt.threads);
    out.s_star = supply_at(sm, price);
    out.gap = std::abs(out.total_demand() - out.s_star);
    out.kkt_residual = kkt_residual(out, curves, sm);
    return out;
}

/// Welfare QP data with the rank-one Hessian Q + β1 11ᵀ kept implicit.
struct CoupledQp {
    std::vector<double> q;
    std::vector<double> r;
    std::vector<double> c;
    double beta1 = 0.0;
    double beta2 = 0.0;

    [[nodiscard]] std::size_t size() const { return q.size(); }
};

[[nodiscard]] inline CoupledQp make_coupled_qp(std::span<const DerParams> population, const SupplyModel& sm) {
    CoupledQp qp;
    qp.beta1 = sm.beta1;
    qp.beta2 = sm.beta2;
    for (const auto& p : population) {
        qp.q.push_back(p.q);
        qp.r.push_back(p.r);
        qp.c.push_back(p.c);
    }
    return qp;
}

/// Unconstrained welfare maximiser (Q + β1 11ᵀ)⁻¹ (R x + c - β2 1) in O(m)
/// via Sherman–Morrison:
///
///   d̂ = Q⁻¹v - β1 Q⁻¹1 (1ᵀQ⁻¹v) / (1 + β1 Σ 1/q_i),   v = R x + c - β2 1
[[nodiscard]] inline std::vector<double> unconstrained_maximizer(const CoupledQp& qp, std::span<const double> x) {
    const std::size_t m = qp.size();
    std::vector<double> d(m);
    double w1 = 0.0;
    double coupled = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        d[i] = (qp.r[i] * x[i] + qp.c[i] - qp.beta2) / qp.q[i];
        w1 += 1.0 / qp.q[i];
        coupled += d[i];
    }
    const double k = qp.beta1 * coupled / (1.0 + qp.beta1 * w1);
    for (std::size_t i = 0; i < m; ++i) d[i] -= k / qp.q[i];
    return d;
}

}  // namespace dermarket
