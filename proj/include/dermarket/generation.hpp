#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dermarket/clearing.hpp"
#include "dermarket/der.hpp"
#include "dermarket/random.hpp"

namespace dermarket {

/// Uniform draw on [lo, hi]; a point mass when lo == hi.
struct UniformRule {
    double lo = 0.0;
    double hi = 0.0;

    static UniformRule point(double v) { return {v, v}; }

    double draw(SplitMix64& rng) const {
        const double u = rng.unit();  // always consumed so the stream layout is fixed
        return lo == hi ? lo : lo + (hi - lo) * u;
    }

    friend bool operator==(const UniformRule&, const UniformRule&) = default;
};

/// Population recipe. Each asset draws, in order from its own stream:
/// a, reference state x_r, d_lo, d_hi, q, initial state. Then
///   x_lo, x_hi = x_r ∓ x_halfwidth,  r = r_per_a · a,  c = c_per_xref · x_r + c_offset,
///   x(0) ~ U[x_lo, x_hi].
struct GenerationSpec {
    std::size_t m = 1;
    UniformRule a;
    UniformRule x_ref;
    double x_halfwidth = 0.0;
    UniformRule d_lo;
    UniformRule d_hi;
    UniformRule q;
    double r_per_a = 0.0;
    double c_per_xref = 0.0;
    double c_offset = 0.0;
    SupplyModel supply;
    std::uint64_t seed = 0;

    friend bool operator==(const GenerationSpec&, const GenerationSpec&) = default;
};

/// Single aggregate asset used for the unstable single-asset experiment.
[[nodiscard]] inline GenerationSpec reference_single() {
    GenerationSpec s;
    s.m = 1;
    s.a = UniformRule::point(0.95);
    s.x_ref = UniformRule::point(5000.0);
    s.x_halfwidth = 2500.0;
    s.d_lo = UniformRule::point(0.0);
    s.d_hi = UniformRule::point(500.0);
    s.q = UniformRule::point(0.005);
    s.r_per_a = -0.1;
    s.c_per_xref = 0.0;
    s.c_offset = 500.0;
    s.supply = {0.04, 20.0};
    return s;
}

/// Heterogeneous 100-asset population used for the unstable multi-asset experiment.
[[nodiscard]] inline GenerationSpec reference_population() {
    GenerationSpec s;
    s.m = 100;
    s.a = {0.9, 0.95};
    s.x_ref = {350.0, 500.0};
    s.x_halfwidth = 200.0;
    s.d_lo = UniformRule::point(0.0);
    s.d_hi = {100.0, 150.0};
    s.q = UniformRule::point(0.005);
    s.r_per_a = -2.0;
    s.c_per_xref = 2.0;
    s.c_offset = 0.0;
    s.supply = {0.008, 20.0};
    return s;
}

struct GeneratedPopulation {
    std::vector<DerParams> population;
    MarketState initial;
};

/// Pure function of the spec. Throws InvalidModel if a drawn asset breaks an
/// invariant; assets are never silently redrawn.
[[nodiscard]] inline GeneratedPopulation generate_population(const GenerationSpec& spec) {
    if (spec.m < 1) throw InvalidModel("generation: m must be >= 1");
    GeneratedPopulation out;
    out.population.reserve(spec.m);
    out.initial.x.reserve(spec.m);
    for (std::size_t i = 0; i < spec.m; ++i) {
        auto rng = stream_for(spec.seed, i);
        DerParams p;
        p.a = spec.a.draw(rng);
        const double xr = spec.x_ref.draw(rng);
        p.x_lo = xr - spec.x_halfwidth;
        p.x_hi = xr + spec.x_halfwidth;
        p.d_lo = spec.d_lo.draw(rng);
        p.d_hi = spec.d_hi.draw(rng);
        p.q = spec.q.draw(rng);
        p.r = spec.r_per_a * p.a;
        p.c = spec.c_per_xref * xr + spec.c_offset;
        try {
            validate(p, i);
        } catch (const InvalidModel& e) {
            throw InvalidModel(std::string("generation rules produce an invalid asset: ") + e.what());
        }
        out.initial.x.push_back(rng.uniform(p.x_lo, p.x_hi));
        out.population.push_back(p);
    }
    return out;
}

}  // namespace dermarket
