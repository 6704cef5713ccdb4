#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dermarket/clearing.hpp"
#include "dermarket/der.hpp"
#include "dermarket/generation.hpp"
#include "dermarket/random.hpp"

namespace dermarket::testing {

inline DerParams reference_asset(double q = 0.005) {
    return {.a = 0.95, .x_lo = 2500, .x_hi = 7500, .d_lo = 0, .d_hi = 500, .q = q, .r = -0.095, .c = 500};
}

inline SupplyModel reference_supply() { return {0.04, 20.0}; }

/// Random controllable asset with moderate conditioning.
inline DerParams random_asset(SplitMix64& rng) {
    for (;;) {
        DerParams p;
        p.a = rng.uniform(0.3, 1.0);
        p.x_lo = rng.uniform(-10.0, 10.0);
        p.x_hi = p.x_lo + rng.uniform(1.0, 20.0);
        p.d_lo = rng.uniform(-5.0, 5.0);
        p.d_hi = p.d_lo + rng.uniform(0.5, 10.0);
        p.q = rng.uniform(0.2, 5.0);
        p.r = rng.uniform(-2.0, 2.0);
        p.c = rng.uniform(-10.0, 10.0);
        if (check_controllability(p).ok) return p;
    }
}

inline SupplyModel random_supply(SplitMix64& rng) { return {rng.uniform(0.05, 2.0), rng.uniform(0.5, 10.0)}; }

struct Instance {
    std::vector<DerParams> population;
    SupplyModel supply;
    std::vector<double> x;
};

inline Instance random_instance(SplitMix64& rng, std::size_t m) {
    Instance inst;
    for (std::size_t i = 0; i < m; ++i) {
        inst.population.push_back(random_asset(rng));
        const auto& p = inst.population.back();
        inst.x.push_back(rng.uniform(p.x_lo, p.x_hi));
    }
    inst.supply = random_supply(rng);
    return inst;
}

inline std::vector<Interval> feasible_boxes(const Instance& inst) {
    std::vector<Interval> boxes;
    for (std::size_t i = 0; i < inst.population.size(); ++i) {
        boxes.push_back(feasible_input_set(inst.population[i], inst.x[i]));
    }
    return boxes;
}

}  // namespace dermarket::testing
