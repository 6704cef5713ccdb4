#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <gmpxx.h>
#include <gtest/gtest.h>

#include "dermarket/simulator.hpp"
#include "dermarket/stability.hpp"
#include "support.hpp"

using namespace dermarket;
using dermarket::testing::reference_asset;
using dermarket::testing::reference_supply;

TEST(CertifySingle, ReferenceUnstable) {
    const auto cert = certify_single(reference_asset(), reference_supply());
    EXPECT_NEAR(cert.margins[0], -1.1611, 1e-4);
    EXPECT_FALSE(cert.certified);
}

TEST(CertifySingle, ReferenceStabilised) {
    const auto cert = certify_single(reference_asset(0.2), reference_supply());
    EXPECT_NEAR(cert.margins[0], 0.5542, 1e-4);
    EXPECT_TRUE(cert.certified);
    EXPECT_DOUBLE_EQ(cert.contraction_factor, 0.95);
}

TEST(CertifySingle, Decoupled) {
    const DerParams p{.a = 0.5, .x_lo = 0, .x_hi = 10, .d_lo = 0, .d_hi = 10, .q = 1, .r = 0, .c = 5};
    const auto cert = certify_single(p, {1.0, 1.0});
    EXPECT_EQ(cert.margins[0], 0.5);
    EXPECT_TRUE(cert.certified);
}

TEST(LambdaApprox, TwoUnitAssets) {
    const std::vector<double> q{1.0, 1.0};
    const auto ap = lambda_approx(q, 1.0);
    EXPECT_DOUBLE_EQ(ap.w1, 2.0);
    EXPECT_DOUBLE_EQ(ap.w2, 2.0);
    EXPECT_NEAR(ap.phi[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(ap.phi[1], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(ap.epsilon, 1.0 / 3.0, 1e-15);
    ASSERT_TRUE(ap.dense_error.has_value());
    EXPECT_NEAR(*ap.dense_error, 1.0 / 3.0, 1e-14);
}

TEST(LambdaApprox, NoCoupling) {
    const std::vector<double> q{0.5, 2.0, 4.0};
    const auto ap = lambda_approx(q, 0.0);
    EXPECT_EQ(ap.epsilon, 0.0);
    EXPECT_EQ(ap.phi, (std::vector<double>{2.0, 0.5, 0.25}));
}

TEST(LambdaApprox, HundredReferenceAssets) {
    const std::vector<double> q(100, 0.005);
    const auto ap = lambda_approx(q, 0.008);
    EXPECT_NEAR(ap.w1, 20000.0, 1e-8);
    EXPECT_NEAR(ap.w2, 4e6, 1e-4);
    EXPECT_NEAR(ap.epsilon, 16000.0 / 161.0, 1e-9);  // 99.38
    EXPECT_NEAR(ap.phi[0], 200.0 - 16000.0 / 161.0, 1e-9);  // 100.62
    EXPECT_FALSE(ap.dense_error.has_value());
}

TEST(LambdaApprox, DenseErrorIsTight) {
    SplitMix64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + trial % 50;
        std::vector<double> q(m);
        for (auto& v : q) v = rng.uniform(0.1, 10.0);
        const auto ap = lambda_approx(q, rng.uniform(0.001, 1.0));
        ASSERT_TRUE(ap.dense_error.has_value());
        EXPECT_NEAR(*ap.dense_error, ap.epsilon, 1e-10 * ap.epsilon);
    }
}

TEST(LambdaApprox, EpsilonBelowHalfMaxInverseQ) {
    for (double q : {0.005, 0.5, 1.5}) {
        double prev = 0.0;
        for (std::size_t m : {10u, 100u, 1000u, 10000u}) {
            const auto ap = lambda_approx(std::vector<double>(m, q), 0.008, 0);
            EXPECT_GE(ap.epsilon, prev);
            EXPECT_LE(ap.epsilon, 0.5 / q);
            prev = ap.epsilon;
        }
    }
}

TEST(CertifyMulti, SingleAssetAgreesWithExactVerdict) {
    for (double q : {0.005, 0.2}) {
        const std::vector<DerParams> pop{reference_asset(q)};
        const auto exact = certify_single(pop[0], reference_supply());
        const auto approx = certify_multi(pop, reference_supply());
        EXPECT_EQ(exact.certified, approx.certified);
        const double b1 = reference_supply().beta1;
        EXPECT_NEAR(approx.phi[0], 1.0 / q - b1 / (2.0 * q * (q + b1)), 1e-12);
    }
}

TEST(CertifyMulti, WorstAssetAndFactor) {
    std::vector<DerParams> pop{reference_asset(0.2), reference_asset(0.2)};
    pop[1].r = -0.5;
    const auto cert = certify_multi(pop, reference_supply());
    EXPECT_EQ(cert.worst, 1u);
    for (std::size_t i = 0; i < pop.size(); ++i) {
        EXPECT_DOUBLE_EQ(cert.factors[i], std::max(std::abs(cert.margins[i]), pop[i].a));
    }
}

TEST(DoubleProjection, ClampComposition) {
    const auto r = double_projection(1.0, -1.0, 1.0, -2.0, 2.0, 0.0, 3.0);
    EXPECT_EQ(r.lhs, 1.0);
    EXPECT_EQ(r.rhs, 1.0);
}

TEST(DoubleProjection, InteriorInput) {
    const auto r = double_projection(0.5, 0.0, 10.0, -2.0, 2.0, 4.0, 1.0);
    EXPECT_EQ(r.lhs, 3.0);
    EXPECT_TRUE(r.equal());
}

TEST(DoubleProjection, ExactRationalSweep) {
    SplitMix64 rng(77);
    int fails = 0;
    for (int trial = 0; trial < 20000; ++trial) {
        const auto p = dermarket::testing::random_asset(rng);
        const double x = rng.uniform(p.x_lo, p.x_hi);
        const double d = rng.uniform(-30.0, 30.0);
        const auto r = double_projection<mpq_class>(p.a, p.x_lo, p.x_hi, p.d_lo, p.d_hi, x, d);
        if (!r.equal()) ++fails;
    }
    EXPECT_EQ(fails, 0);
}

TEST(DoubleProjection, DoubleArithmeticWithinRounding) {
    SplitMix64 rng(78);
    for (int trial = 0; trial < 20000; ++trial) {
        const auto p = dermarket::testing::random_asset(rng);
        const double x = rng.uniform(p.x_lo, p.x_hi);
        const double d = rng.uniform(-30.0, 30.0);
        const auto r = double_projection(p.a, p.x_lo, p.x_hi, p.d_lo, p.d_hi, x, d);
        const double scale = std::max({1.0, std::abs(p.a * x), std::abs(p.x_lo), std::abs(p.x_hi), std::abs(p.d_lo),
                                       std::abs(p.d_hi)});
        EXPECT_NEAR(r.lhs, r.rhs, 4.0 * std::numeric_limits<double>::epsilon() * scale);
    }
}

TEST(EmpiricalContraction, Identity) {
    std::vector<Interval> box{{0, 1}, {-3, 5}};
    auto id = [](std::span<const double> x) { return std::vector<double>(x.begin(), x.end()); };
    EXPECT_NEAR(empirical_contraction(id, box, 100, 1), 1.0, 1e-12);
}

TEST(ApproximateMap, DecoupledTargetMatchesUnconstrainedWithinEpsilon) {
    SplitMix64 rng(19);
    for (int trial = 0; trial < 100; ++trial) {
        auto inst = dermarket::testing::random_instance(rng, 2 + trial % 30);
        const ApproximateMap map(inst.population, inst.supply);
        const auto qp = make_coupled_qp(inst.population, inst.supply);
        const auto exact = unconstrained_maximizer(qp, inst.x);
        const auto approx = map.decoupled_target(inst.x);
        std::vector<double> q;
        for (const auto& p : inst.population) q.push_back(p.q);
        const double eps = lambda_approx(q, inst.supply.beta1, 0).epsilon;
        double rx2 = 0.0;
        double scale = 0.0;
        for (std::size_t i = 0; i < inst.x.size(); ++i) {
            rx2 += std::pow(inst.population[i].r * inst.x[i], 2);
            scale = std::max(scale, std::abs(exact[i]));
        }
        EXPECT_LE(distance(exact, approx), eps * std::sqrt(rx2) + 1e-12 * std::max(1.0, scale));
    }
}

TEST(ApproximateMap, CertifiedPopulationsContract) {
    SplitMix64 rng(23);
    int certified = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto inst = dermarket::testing::random_instance(rng, 2 + trial % 10);
        const auto cert = certify_multi(inst.population, inst.supply);
        if (!cert.certified) continue;
        ++certified;
        const ApproximateMap map(inst.population, inst.supply);
        const auto ratio = empirical_contraction(map, state_boxes(inst.population), 200, 1000 + trial);
        EXPECT_LE(ratio, cert.contraction_factor + 1e-9);
    }
    EXPECT_GT(certified, 10);
}

TEST(TrueMap, SingleAssetCertifiedContracts) {
    SplitMix64 rng(29);
    int certified = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto inst = dermarket::testing::random_instance(rng, 1);
        const auto cert = certify_single(inst.population[0], inst.supply);
        if (!cert.certified) continue;
        ++certified;
        auto map = [&](std::span<const double> x) {
            return closed_loop_step(inst.population, inst.supply, MarketState{{x.begin(), x.end()}}).next.x;
        };
        EXPECT_LE(empirical_contraction(map, state_boxes(inst.population), 200, trial), cert.contraction_factor + 1e-9);
    }
    EXPECT_GT(certified, 10);
}
