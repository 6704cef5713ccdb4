#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dermarket/bidding.hpp"
#include "dermarket/clearing.hpp"
#include "dermarket/der.hpp"
#include "dermarket/random.hpp"

namespace dermarket {

struct StepResult {
    MarketState next;
    ClearingOutcome outcome;             // over participating assets only
    std::vector<double> consumption;     // per asset, market or fallback
    std::vector<bool> participating;
};

/// One market period: in-box assets bid and are cleared together, out-of-box
/// assets follow the fallback policy and stay out of the market. With no
/// participants the price is β2 and supply is zero.
[[nodiscard]] inline StepResult closed_loop_step(std::span<const DerParams> population, const SupplyModel& sm,
                                                 const MarketState& x, const ClearingOptions& opt = {}) {
    const std::size_t m = population.size();
    StepResult res;
    res.participating = x.in_box(population);
    res.consumption.assign(m, 0.0);

    std::vector<BidCurve> curves;
    std::vector<std::size_t> who;
    for (std::size_t i = 0; i < m; ++i) {
        if (res.participating[i]) {
            curves.emplace_back(population[i], x.x[i]);
            who.push_back(i);
        } else {
            res.consumption[i] = fallback_policy(population[i], x.x[i]);
        }
    }
    res.outcome = clear_market(curves, sm, opt);
    for (std::size_t k = 0; k < who.size(); ++k) res.consumption[who[k]] = res.outcome.d_star[k];

    res.next.x.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double next = step(population[i], x.x[i], res.consumption[i]);
        // a·x + (x_lo - a·x) can round just outside the box.
        res.next.x[i] = res.participating[i] ? population[i].state_box().clamp(next) : next;
    }
    return res;
}

/// Iterates the closed loop until successive states are within `tol` (2-norm).
struct EquilibriumResult {
    bool converged = false;
    MarketState x;
    double residual = 0.0;  // last ‖x+ - x‖₂
    std::size_t iterations = 0;
    std::vector<double> residual_history;
};

[[nodiscard]] inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

[[nodiscard]] inline EquilibriumResult find_equilibrium(std::span<const DerParams> population, const SupplyModel& sm,
                                                        MarketState x0, double tol, std::size_t max_iters,
                                                        const ClearingOptions& opt = {}) {
    EquilibriumResult res;
    res.x = std::move(x0);
    for (std::size_t k = 0; k < max_iters; ++k) {
        auto next = closed_loop_step(population, sm, res.x, opt).next;
        res.residual = distance(next.x, res.x.x);
        res.residual_history.push_back(res.residual);
        res.x = std::move(next);
        res.iterations = k + 1;
        if (res.residual <= tol) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

struct ScheduleSegment {
    double beta2 = 0.0;
    std::size_t periods = 0;

    friend bool operator==(const ScheduleSegment&, const ScheduleSegment&) = default;
};

struct ScenarioConfig {
    std::vector<DerParams> population;
    SupplyModel supply;
    std::vector<ScheduleSegment> schedule;  // empty: constant supply.beta2
    std::optional<std::size_t> horizon;     // default: sum of segment lengths
    std::optional<std::vector<double>> initial_state;
    std::uint64_t seed = 0;
    ClearingOptions clearing;
    bool record_states = true;
};

/// Initial states drawn uniformly over each box, one stream per asset.
[[nodiscard]] inline MarketState seeded_initial_state(std::span<const DerParams> population, std::uint64_t seed) {
    MarketState x;
    x.x.reserve(population.size());
    for (std::size_t i = 0; i < population.size(); ++i) {
        auto rng = stream_for(seed ^ 0x5EEDF00DULL, i);
        x.x.push_back(rng.uniform(population[i].x_lo, population[i].x_hi));
    }
    return x;
}

/// Thrown by run_scenario when a period fails to clear.
class ScenarioFailure : public std::runtime_error {
public:
    ScenarioFailure(const std::string& what, std::size_t period)
        : std::runtime_error(what), period(period) {}
    std::size_t period;
};

struct TimeSeries {
    std::size_t assets = 0;
    std::vector<double> beta2;
    std::vector<double> lambda;
    std::vector<double> aggregate_demand;  // cleared market demand
    std::vector<double> supply;
    std::vector<double> kkt_residual;
    std::vector<double> gap;
    std::vector<std::vector<double>> states;  // horizon + 1 entries when recorded
    std::vector<std::pair<std::size_t, std::size_t>> segments;  // (first period, length)

    [[nodiscard]] std::size_t horizon() const { return lambda.size(); }
};

struct ResolvedSchedule {
    std::size_t horizon = 0;
    std::vector<double> beta2;  // per period
    std::vector<std::pair<std::size_t, std::size_t>> segments;
};

[[nodiscard]] inline ResolvedSchedule resolve_schedule(const ScenarioConfig& cfg) {
    ResolvedSchedule out;
    std::size_t total = 0;
    for (const auto& s : cfg.schedule) {
        if (s.periods < 1) throw InvalidModel("schedule: segment durations must be >= 1");
        total += s.periods;
    }
    if (cfg.schedule.empty()) {
        out.horizon = cfg.horizon.value_or(0);
        out.beta2.assign(out.horizon, cfg.supply.beta2);
        if (out.horizon > 0) out.segments.emplace_back(0, out.horizon);
        return out;
    }
    out.horizon = cfg.horizon.value_or(total);
    if (out.horizon > total) {
        throw InvalidModel("simulation: horizon " + std::to_string(out.horizon) + " exceeds schedule length " +
                           std::to_string(total));
    }
    std::size_t k = 0;
    for (const auto& s : cfg.schedule) {
        if (k >= out.horizon) break;
        const std::size_t len = std::min(s.periods, out.horizon - k);
        out.segments.emplace_back(k, len);
        for (std::size_t j = 0; j < len; ++j) out.beta2.push_back(s.beta2);
        k += len;
    }
    return out;
}

/// Runs the configured horizon. Deterministic in the config (including seed).
[[nodiscard]] inline TimeSeries run_scenario(const ScenarioConfig& cfg) {
    validate_population(cfg.population);
    if (!(cfg.supply.beta1 > 0.0)) throw InvalidModel("supply: requires beta1 > 0");
    const auto sched = resolve_schedule(cfg);
    const std::size_t m = cfg.population.size();

    MarketState x;
    if (cfg.initial_state) {
        if (cfg.initial_state->size() != m) {
            throw InvalidModel("initial_state has " + std::to_string(cfg.initial_state->size()) +
                               " entries for " + std::to_string(m) + " assets");
        }
        x.x = *cfg.initial_state;
    } else {
        x = seeded_initial_state(cfg.population, cfg.seed);
    }

    TimeSeries ts;
    ts.assets = m;
    ts.segments = sched.segments;
    if (cfg.record_states) ts.states.push_back(x.x);
    for (std::size_t k = 0; k < sched.horizon; ++k) {
        SupplyModel sm = cfg.supply;
        sm.beta2 = sched.beta2[k];
        StepResult res;
        try {
            res = closed_loop_step(cfg.population, sm, x, cfg.clearing);
        } catch (const ClearingFailure& e) {
            throw ScenarioFailure("period " + std::to_string(k) + ": " + e.what(), k);
        }
        ts.beta2.push_back(sm.beta2);
        ts.lambda.push_back(res.outcome.lambda_star);
        ts.aggregate_demand.push_back(res.outcome.total_demand());
        ts.supply.push_back(res.outcome.s_star);
        ts.kkt_residual.push_back(res.outcome.kkt_residual);
        ts.gap.push_back(res.outcome.gap);
        x = std::move(res.next);
        if (cfg.record_states) ts.states.push_back(x.x);
    }
    return ts;
}

enum class SegmentClass { converged, oscillating, drifting };

[[nodiscard]] inline const char* to_string(SegmentClass c) {
    switch (c) {
        case SegmentClass::converged: return "converged";
        case SegmentClass::oscillating: return "oscillating";
        case SegmentClass::drifting: return "drifting";
    }
    return "unknown";
}

struct SegmentReport {
    SegmentClass classification = SegmentClass::drifting;
    std::optional<std::size_t> settle_time;  // periods from segment start
    std::optional<double> decay_rate;        // fitted ρ̂
    double amplitude = 0.0;                  // peak-to-peak price over the tail
    double mean_price = 0.0;
    std::size_t first_period = 0;
    std::size_t length = 0;
    double beta2 = 0.0;
};

using ConvergenceReport = std::vector<SegmentReport>;

/// Prices of one segment, plus optionally the states reached after each
/// clearing (same length as prices).
struct SegmentSlice {
    std::span<const double> prices;
    std::span<const std::vector<double>> states;
};

inline constexpr std::size_t kConvergenceWindow = 5;
inline constexpr std::size_t kTailWindow = 10;
inline constexpr double kConvergedRelTol = 1e-3;
inline constexpr double kOscillationRelAmplitude = 0.01;
inline constexpr double kSettleBand = 0.01;

namespace detail {

/// ρ̂ = exp(slope) of a least-squares line through log(step sizes) for the
/// leading run of steps that stay above `floor`.
inline std::optional<double> fit_decay(std::span<const double> steps, double floor) {
    std::vector<double> ks;
    std::vector<double> ls;
    bool started = false;
    for (std::size_t k = 0; k < steps.size(); ++k) {
        if (steps[k] > floor) {
            started = true;
            ks.push_back(static_cast<double>(k));
            ls.push_back(std::log(steps[k]));
        } else if (started) {
            break;
        }
    }
    if (ks.size() < 2) return std::nullopt;
    const double n = static_cast<double>(ks.size());
    const double kbar = std::accumulate(ks.begin(), ks.end(), 0.0) / n;
    const double lbar = std::accumulate(ls.begin(), ls.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        sxy += (ks[i] - kbar) * (ls[i] - lbar);
        sxx += (ks[i] - kbar) * (ks[i] - kbar);
    }
    return std::exp(sxy / sxx);
}

}  // namespace detail

/// Converged: every price step over the last 5 periods is below
/// 1e-3·max(1, |mean|). Otherwise oscillating when the peak-to-peak price over
/// the last 10 periods exceeds 1% of |mean|, else drifting.
///
/// Settle time is the first period after which the price stays within
/// 1%·max(1, |mean|) of its final value. ρ̂ is fitted on successive state
/// steps when states are given, price steps otherwise.
[[nodiscard]] inline SegmentReport classify_segment(const SegmentSlice& slice) {
    const auto& p = slice.prices;
    const std::size_t n = p.size();
    if (n < 4) throw std::invalid_argument("classify_segment: slice needs at least 4 periods");

    SegmentReport rep;
    rep.length = n;
    rep.mean_price = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(n);
    const double scale = std::max(1.0, std::abs(rep.mean_price));

    double last_steps = 0.0;
    const std::size_t window = std::min(kConvergenceWindow, n - 1);
    for (std::size_t k = n - window; k < n; ++k) last_steps = std::max(last_steps, std::abs(p[k] - p[k - 1]));

    const std::size_t tail = std::min(kTailWindow, n);
    const auto [tmin, tmax] = std::minmax_element(p.end() - static_cast<std::ptrdiff_t>(tail), p.end());
    rep.amplitude = *tmax - *tmin;

    if (last_steps < kConvergedRelTol * scale) {
        rep.classification = SegmentClass::converged;
    } else if (rep.amplitude > kOscillationRelAmplitude * std::abs(rep.mean_price)) {
        rep.classification = SegmentClass::oscillating;
    } else {
        rep.classification = SegmentClass::drifting;
    }

    if (rep.classification == SegmentClass::converged) {
        std::size_t settle = n;
        for (std::size_t k = n; k-- > 0;) {
            if (std::abs(p[k] - p[n - 1]) > kSettleBand * scale) break;
            settle = k;
        }
        rep.settle_time = settle;

        std::vector<double> steps;
        double magnitude = 0.0;
        if (slice.states.size() == n) {
            for (std::size_t k = 1; k < n; ++k) steps.push_back(distance(slice.states[k], slice.states[k - 1]));
            for (const auto& s : slice.states)
                for (double v : s) magnitude = std::max(magnitude, std::abs(v));
        } else {
            for (std::size_t k = 1; k < n; ++k) steps.push_back(std::abs(p[k] - p[k - 1]));
            magnitude = scale;
        }
        rep.decay_rate = detail::fit_decay(steps, 1e-9 * std::max(1.0, magnitude));
    }
    return rep;
}

/// One report per schedule segment. Segments shorter than 4 periods are skipped.
[[nodiscard]] inline ConvergenceReport analyze(const TimeSeries& ts) {
    ConvergenceReport out;
    const bool have_states = ts.states.size() == ts.horizon() + 1;
    for (const auto& [first, len] : ts.segments) {
        if (len < 4) continue;
        SegmentSlice slice;
        slice.prices = std::span<const double>(ts.lambda).subspan(first, len);
        if (have_states) slice.states = std::span<const std::vector<double>>(ts.states).subspan(first + 1, len);
        auto rep = classify_segment(slice);
        rep.first_period = first;
        rep.beta2 = ts.beta2[first];
        out.push_back(rep);
    }
    return out;
}

}  // namespace dermarket
