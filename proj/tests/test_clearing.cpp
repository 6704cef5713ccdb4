#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "dermarket/clearing.hpp"
#include "dermarket/qp_oracle.hpp"
#include "support.hpp"

using namespace dermarket;
using dermarket::testing::reference_asset;
using dermarket::testing::reference_supply;

namespace {

// Brute-force price grid: the first grid price where excess demand turns
// nonpositive.
double grid_clearing_price(const std::vector<BidCurve>& curves, const SupplyModel& sm, double lo, double hi,
                           double step) {
    for (double p = lo; p <= hi; p += step) {
        if (aggregate_demand(curves, p) - supply_at(sm, p) <= 0.0) return p;
    }
    return hi;
}

}  // namespace

TEST(Supply, Inverse) {
    EXPECT_NEAR(supply_at({0.04, 20.0}, 20.0 + 0.04 * 111.11), 111.11, 1e-9);
    EXPECT_EQ(supply_at({0.3, 7.0}, 7.0), 0.0);
    EXPECT_EQ(supply_at({1.0, 0.0}, 7.0), 7.0);
}

TEST(Supply, Validation) {
    EXPECT_THROW(validate(SupplyModel{0.0, 1.0}), InvalidModel);
    EXPECT_THROW(validate(SupplyModel{1.0, 0.0}), InvalidModel);
    EXPECT_NO_THROW(validate(reference_supply()));
}

TEST(ClearMarket, SingleAssetReference) {
    const std::vector<BidCurve> curves{BidCurve(reference_asset(), 5000.0)};
    const auto out = clear_market(curves, reference_supply());
    // 0.04 (25 - λ) = 0.005 (λ - 20)  ->  λ = 1.1 / 0.045
    EXPECT_NEAR(out.lambda_star, 1.1 / 0.045, 1e-9);
    EXPECT_NEAR(out.lambda_star, 24.4444, 1e-4);
    EXPECT_NEAR(out.d_star[0], 111.11, 1e-2);
    EXPECT_NEAR(out.s_star, out.d_star[0], 1e-9);
    EXPECT_LE(out.kkt_residual, 1e-9);

    const double grid = grid_clearing_price(curves, reference_supply(), 20.0, 25.0, 1e-5);
    EXPECT_NEAR(out.lambda_star, grid, 1e-5);
}

TEST(ClearMarket, InelasticZeroDemand) {
    std::vector<BidCurve> curves{BidCurve(5.0, 1.0, {0, 0}), BidCurve(-3.0, 2.0, {0, 0})};
    const auto out = clear_market(curves, {0.5, 12.0});
    EXPECT_EQ(out.lambda_star, 12.0);
    EXPECT_EQ(out.s_star, 0.0);
    EXPECT_EQ(out.d_star, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(out.kkt_residual, 0.0);
}

TEST(ClearMarket, EmptyMarketConvention) {
    const auto out = clear_market(std::vector<BidCurve>{}, {0.5, 12.0});
    EXPECT_EQ(out.lambda_star, 12.0);
    EXPECT_EQ(out.s_star, 0.0);
    EXPECT_TRUE(out.d_star.empty());
}

TEST(ClearMarket, NegativeSupplyPermitted) {
    std::vector<BidCurve> curves{BidCurve(0.0, 1.0, {-10, -5})};
    const auto out = clear_market(curves, {1.0, 1.0});
    EXPECT_LT(out.s_star, 0.0);
    EXPECT_LE(out.kkt_residual, 1e-12);
}

TEST(ClearMarket, GapWithinBoundWithoutPolish) {
    // Gap bound (Σ 1/q + 1/β1) tol holds for the bisection bracket itself.
    SplitMix64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        auto inst = dermarket::testing::random_instance(rng, 1 + trial % 5);
        const auto curves = make_curves(inst.population, inst.x);
        ClearingOptions opt;
        opt.tol = 1e-6;
        const auto out = clear_market(curves, inst.supply, opt);
        double bound = 1.0 / inst.supply.beta1;
        for (const auto& p : inst.population) bound += 1.0 / p.q;
        EXPECT_LE(out.bracket_hi - out.bracket_lo, opt.tol);
        EXPECT_LE(out.gap, bound * opt.tol);
    }
}

TEST(ClearMarket, ThreadsDoNotChangeResult) {
    SplitMix64 rng(4);
    auto inst = dermarket::testing::random_instance(rng, 40);
    const auto curves = make_curves(inst.population, inst.x);
    ClearingOptions serial;
    ClearingOptions parallel;
    parallel.threads = 4;
    const auto a = clear_market(curves, inst.supply, serial);
    const auto b = clear_market(curves, inst.supply, parallel);
    EXPECT_EQ(a.lambda_star, b.lambda_star);
    EXPECT_EQ(a.d_star, b.d_star);
}

TEST(ClearMarket, CorruptedCurveReportsFailure) {
    std::vector<BidCurve> curves{BidCurve(std::nan(""), 1.0, {0, 1})};
    EXPECT_THROW((void)clear_market(curves, {1.0, 1.0}), ClearingFailure);
}

TEST(KktResidual, PerturbedPriceShowsUp) {
    const std::vector<BidCurve> curves{BidCurve(reference_asset(), 5000.0)};
    auto out = clear_market(curves, reference_supply());
    out.lambda_star += 0.1;
    EXPECT_GE(kkt_residual(out, curves, reference_supply()), 0.1 - 1e-10);
}

TEST(UnconstrainedMaximizer, ScalarCase) {
    CoupledQp qp{{0.005}, {-0.095}, {500.0}, 0.04, 20.0};
    const auto d = unconstrained_maximizer(qp, std::vector<double>{5000.0});
    EXPECT_NEAR(d[0], (-0.095 * 5000.0 + 500.0 - 20.0) / 0.045, 1e-9);
}

TEST(UnconstrainedMaximizer, DecoupledWhenBeta1Zero) {
    CoupledQp qp{{1.0, 2.0}, {0.5, -1.0}, {3.0, 4.0}, 0.0, 1.0};
    const auto d = unconstrained_maximizer(qp, std::vector<double>{2.0, 1.0});
    EXPECT_DOUBLE_EQ(d[0], (0.5 * 2.0 + 3.0 - 1.0) / 1.0);
    EXPECT_DOUBLE_EQ(d[1], (-1.0 + 4.0 - 1.0) / 2.0);
}

TEST(UnconstrainedMaximizer, TwoByTwo) {
    // (I + 11ᵀ) d = [3, 0]  ->  d = [2, -1]
    CoupledQp qp{{1.0, 1.0}, {0.0, 0.0}, {3.0, 0.0}, 1.0, 0.0};
    const auto d = unconstrained_maximizer(qp, std::vector<double>{0.0, 0.0});
    EXPECT_NEAR(d[0], 2.0, 1e-14);
    EXPECT_NEAR(d[1], -1.0, 1e-14);
}

TEST(UnconstrainedMaximizer, MatchesDenseSolve) {
    SplitMix64 rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + trial % 50;
        auto inst = dermarket::testing::random_instance(rng, m);
        const auto qp = make_coupled_qp(inst.population, inst.supply);
        const auto fast = unconstrained_maximizer(qp, inst.x);
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(m));
        for (std::size_t i = 0; i < m; ++i) {
            rhs(static_cast<Eigen::Index>(i)) = qp.r[i] * inst.x[i] + qp.c[i] - qp.beta2;
        }
        const Eigen::VectorXd dense = dense_hessian(qp).partialPivLu().solve(rhs);
        double err = 0.0;
        for (std::size_t i = 0; i < m; ++i) err = std::max(err, std::abs(fast[i] - dense(static_cast<Eigen::Index>(i))));
        EXPECT_LE(err, 1e-10 * std::max(1.0, dense.cwiseAbs().maxCoeff()));
    }
}

TEST(QpOracle, InteriorPointIsUnconstrainedMaximizer) {
    CoupledQp qp{{1.0, 2.0}, {0.0, 0.0}, {3.0, 1.0}, 0.5, 1.0};
    const std::vector<double> x{0.0, 0.0};
    const auto dhat = unconstrained_maximizer(qp, x);
    std::vector<Interval> boxes{{-100, 100}, {-100, 100}};
    const auto z = qp_oracle(qp, x, boxes);
    EXPECT_NEAR(z[0], dhat[0], 1e-9);
    EXPECT_NEAR(z[1], dhat[1], 1e-9);
}

TEST(QpOracle, SingleAssetReference) {
    const auto p = reference_asset();
    const auto qp = make_coupled_qp(std::vector<DerParams>{p}, reference_supply());
    const std::vector<Interval> boxes{feasible_input_set(p, 5000.0)};
    const auto z = qp_oracle(qp, std::vector<double>{5000.0}, boxes);
    EXPECT_NEAR(z[0], 111.11, 1e-2);
    const std::vector<BidCurve> curves{BidCurve(p, 5000.0)};
    EXPECT_NEAR(z[0], clear_market(curves, reference_supply()).d_star[0], 1e-8);
}

TEST(QpOracle, RejectsOversizedProblems) {
    CoupledQp qp;
    qp.q.assign(51, 1.0);
    qp.r.assign(51, 0.0);
    qp.c.assign(51, 0.0);
    std::vector<double> x(51, 0.0);
    std::vector<Interval> boxes(51, Interval{0, 1});
    EXPECT_THROW((void)qp_oracle(qp, x, boxes), std::invalid_argument);
}

TEST(QpOracle, IterationCap) {
    CoupledQp qp{{1e-6, 1.0}, {0.0, 0.0}, {1.0, 1.0}, 1.0, 0.0};
    OracleOptions opt;
    opt.max_iterations = 10;
    std::vector<Interval> boxes{{-1e6, 1e6}, {-1e6, 1e6}};
    EXPECT_THROW((void)qp_oracle(qp, std::vector<double>{0.0, 0.0}, boxes, opt), OracleNonConvergence);
}

// Clearing and the welfare QP agree; the oracle output is the Q̃-projection
// of d̂ (variational inequality); the price equals marginal cost.
TEST(Properties, ClearingMatchesQpOracle) {
    SplitMix64 rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t m = 1 + trial % 5;
        auto inst = dermarket::testing::random_instance(rng, m);
        const auto curves = make_curves(inst.population, inst.x);
        const auto out = clear_market(curves, inst.supply);
        const auto qp = make_coupled_qp(inst.population, inst.supply);
        const auto boxes = dermarket::testing::feasible_boxes(inst);
        const auto z = qp_oracle(qp, inst.x, boxes);
        for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(out.d_star[i], z[i], 1e-6);
        EXPECT_LE(out.kkt_residual, 1e-8);
        EXPECT_NEAR(out.lambda_star, inst.supply.beta1 * out.total_demand() + inst.supply.beta2, 1e-8);

        const auto dhat = unconstrained_maximizer(qp, inst.x);
        const auto hess = dense_hessian(qp);
        Eigen::VectorXd diff(static_cast<Eigen::Index>(m));
        for (std::size_t i = 0; i < m; ++i) diff(static_cast<Eigen::Index>(i)) = dhat[i] - z[i];
        for (int s = 0; s < 20; ++s) {
            Eigen::VectorXd y(static_cast<Eigen::Index>(m));
            for (std::size_t i = 0; i < m; ++i) {
                y(static_cast<Eigen::Index>(i)) = rng.uniform(boxes[i].lo, boxes[i].hi) - z[i];
            }
            EXPECT_LE(diff.dot(hess * y), 1e-8);
        }
    }
}

TEST(Properties, ExcessDemandStrictlyDecreasing) {
    SplitMix64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        auto inst = dermarket::testing::random_instance(rng, 1 + trial % 6);
        const auto curves = make_curves(inst.population, inst.x);
        double prev = std::numeric_limits<double>::infinity();
        for (double p = -50; p <= 50; p += 0.5) {
            const double e = aggregate_demand(curves, p) - supply_at(inst.supply, p);
            EXPECT_LT(e, prev);
            prev = e;
        }
    }
}
