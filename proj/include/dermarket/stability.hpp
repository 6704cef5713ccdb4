#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dermarket/clearing.hpp"
#include "dermarket/der.hpp"
#include "dermarket/random.hpp"

namespace dermarket {

/// Sufficient-condition stability certificate for the closed-loop market.
///
/// `margins[i]` is the slope of asset i's unsaturated closed-loop response,
/// a + r/(q+β1) for a single asset and a_i + φ_i r_i for a population.
/// `factors[i]` = max(|margins[i]|, a_i) bounds the per-asset Lipschitz
/// constant over both the linear and saturated regions. The verdict is the
/// plain |margin| < 1 test on every asset.
struct Certificate {
    enum class Kind { single, decoupled };

    Kind kind = Kind::decoupled;
    std::vector<double> margins;
    std::vector<double> factors;
    std::vector<double> phi;
    double w1 = 0.0;
    double w2 = 0.0;
    double epsilon = 0.0;
    bool certified = false;
    std::size_t worst = 0;            // index with the largest |margin|
    double contraction_factor = 0.0;  // max factors
};

struct LambdaApprox {
    std::vector<double> phi;  // diagonal of Λ⁻¹
    double w1 = 0.0;          // Σ 1/q_i
    double w2 = 0.0;          // Σ 1/q_i²
    double epsilon = 0.0;     // ½ β1 w2 / (1 + β1 w1)
    std::optional<double> dense_error;  // ‖Q̃⁻¹ - Λ⁻¹‖₂ when computed
};

/// Spectral norm of (Q + β1 11ᵀ)⁻¹ - diag(phi), formed densely.
[[nodiscard]] inline double dense_approximation_error(std::span<const double> q, double beta1,
                                                      std::span<const double> phi) {
    const auto m = static_cast<Eigen::Index>(q.size());
    Eigen::MatrixXd hess = Eigen::MatrixXd::Constant(m, m, beta1);
    for (Eigen::Index i = 0; i < m; ++i) hess(i, i) += q[static_cast<std::size_t>(i)];
    Eigen::MatrixXd diff = hess.ldlt().solve(Eigen::MatrixXd::Identity(m, m));
    for (Eigen::Index i = 0; i < m; ++i) diff(i, i) -= phi[static_cast<std::size_t>(i)];
    diff = 0.5 * (diff + diff.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(diff, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().cwiseAbs().maxCoeff();
}

/// Diagonal surrogate for the coupled inverse Hessian:
///   Λ⁻¹ = Q⁻¹ - ½ β1 w2 / (1 + β1 w1) I.
/// For m <= dense_check_limit the true spectral error is also computed.
[[nodiscard]] inline LambdaApprox lambda_approx(std::span<const double> q, double beta1,
                                                std::size_t dense_check_limit = 50) {
    LambdaApprox out;
    for (double qi : q) {
        out.w1 += 1.0 / qi;
        out.w2 += 1.0 / (qi * qi);
    }
    out.epsilon = 0.5 * beta1 * out.w2 / (1.0 + beta1 * out.w1);
    out.phi.reserve(q.size());
    for (double qi : q) out.phi.push_back(1.0 / qi - out.epsilon);
    if (!q.empty() && q.size() <= dense_check_limit) {
        out.dense_error = dense_approximation_error(q, beta1, out.phi);
    }
    return out;
}

/// Single-asset certificate with the exact coupling 1/(q + β1).
[[nodiscard]] inline Certificate certify_single(const DerParams& p, const SupplyModel& sm) {
    Certificate cert;
    cert.kind = Certificate::Kind::single;
    const double q = p.q;
    cert.w1 = 1.0 / q;
    cert.w2 = 1.0 / (q * q);
    cert.epsilon = 0.5 * sm.beta1 * cert.w2 / (1.0 + sm.beta1 * cert.w1);
    cert.phi = {1.0 / (q + sm.beta1)};
    const double margin = p.a + p.r / (q + sm.beta1);
    cert.margins = {margin};
    cert.factors = {std::max(std::abs(margin), p.a)};
    cert.certified = std::abs(margin) < 1.0;
    cert.worst = 0;
    cert.contraction_factor = cert.factors.front();
    return cert;
}

[[nodiscard]] inline Certificate certify_multi(std::span<const DerParams> population, const SupplyModel& sm) {
    std::vector<double> q;
    q.reserve(population.size());
    for (const auto& p : population) q.push_back(p.q);
    const auto approx = lambda_approx(q, sm.beta1, 0);

    Certificate cert;
    cert.kind = Certificate::Kind::decoupled;
    cert.phi = approx.phi;
    cert.w1 = approx.w1;
    cert.w2 = approx.w2;
    cert.epsilon = approx.epsilon;
    cert.certified = true;
    double worst_abs = -1.0;
    for (std::size_t i = 0; i < population.size(); ++i) {
        const auto& p = population[i];
        const double margin = p.a + approx.phi[i] * p.r;
        cert.margins.push_back(margin);
        cert.factors.push_back(std::max(std::abs(margin), p.a));
        if (!(std::abs(margin) < 1.0)) cert.certified = false;
        if (std::abs(margin) > worst_abs) {
            worst_abs = std::abs(margin);
            cert.worst = i;
        }
        cert.contraction_factor = std::max(cert.contraction_factor, cert.factors.back());
    }
    return cert;
}

namespace detail {
template <typename T>
T clamp_to(const T& v, const T& lo, const T& hi) {
    if (v < lo) return lo;
    if (hi < v) return hi;
    return v;
}
}  // namespace detail

template <typename T>
struct DoubleProjection {
    T lhs;  // a x + Proj_{(X - a x) ∩ D}(d)
    T rhs;  // Proj_X(a x + Proj_D(d))
    [[nodiscard]] bool equal() const { return lhs == rhs; }
};

/// Both sides of the scalar double-projection identity. T may be an exact
/// rational type; with double the two sides can differ by rounding.
/// Requires (X - a x) ∩ D to be nonempty.
template <typename T>
[[nodiscard]] DoubleProjection<T> double_projection(const T& a, const T& x_lo, const T& x_hi, const T& d_lo,
                                                    const T& d_hi, const T& x, const T& d) {
    const T ax = a * x;
    const T shift_lo = x_lo - ax;
    const T shift_hi = x_hi - ax;
    const T lo = shift_lo < d_lo ? d_lo : shift_lo;
    const T hi = d_hi < shift_hi ? d_hi : shift_hi;
    const T inner = detail::clamp_to<T>(d, lo, hi);
    const T lhs = ax + inner;
    const T pd = detail::clamp_to<T>(d, d_lo, d_hi);
    const T moved = ax + pd;
    const T rhs = detail::clamp_to<T>(moved, x_lo, x_hi);
    return {lhs, rhs};
}

/// Decoupled approximate closed-loop map
///   x ↦ A x + Proj_Ω(x)(Λ⁻¹ R x + Q̃⁻¹ c̃).
/// Every state must be inside its box.
class ApproximateMap {
public:
    ApproximateMap(std::vector<DerParams> population, const SupplyModel& sm)
        : population_(std::move(population)) {
        std::vector<double> q;
        for (const auto& p : population_) q.push_back(p.q);
        phi_ = lambda_approx(q, sm.beta1, 0).phi;
        const auto qp = make_coupled_qp(population_, sm);
        const std::vector<double> zero(population_.size(), 0.0);
        offset_ = unconstrained_maximizer(qp, zero);
    }

    [[nodiscard]] std::vector<double> operator()(std::span<const double> x) const {
        std::vector<double> next(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto& p = population_[i];
            const double target = phi_[i] * p.r * x[i] + offset_[i];
            next[i] = p.state_box().clamp(step(p, x[i], feasible_input_set(p, x[i]).clamp(target)));
        }
        return next;
    }

    [[nodiscard]] std::vector<double> decoupled_target(std::span<const double> x) const {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = phi_[i] * population_[i].r * x[i] + offset_[i];
        return out;
    }

private:
    std::vector<DerParams> population_;
    std::vector<double> phi_;
    std::vector<double> offset_;
};

/// Largest observed ‖f(x) - f(y)‖₂ / ‖x - y‖₂ over `pairs` independent
/// uniform pairs in the box product.
template <typename Map>
[[nodiscard]] double empirical_contraction(const Map& map, std::span<const Interval> box, std::size_t pairs,
                                           std::uint64_t seed) {
    SplitMix64 rng(seed);
    const std::size_t m = box.size();
    std::vector<double> x(m);
    std::vector<double> y(m);
    double worst = 0.0;
    for (std::size_t k = 0; k < pairs; ++k) {
        double dist2 = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            x[i] = rng.uniform(box[i].lo, box[i].hi);
            y[i] = rng.uniform(box[i].lo, box[i].hi);
            dist2 += (x[i] - y[i]) * (x[i] - y[i]);
        }
        if (dist2 == 0.0) continue;
        const auto fx = map(std::span<const double>(x));
        const auto fy = map(std::span<const double>(y));
        double img2 = 0.0;
        for (std::size_t i = 0; i < m; ++i) img2 += (fx[i] - fy[i]) * (fx[i] - fy[i]);
        worst = std::max(worst, std::sqrt(img2 / dist2));
    }
    return worst;
}

[[nodiscard]] inline std::vector<Interval> state_boxes(std::span<const DerParams> population) {
    std::vector<Interval> out;
    out.reserve(population.size());
    for (const auto& p : population) out.push_back(p.state_box());
    return out;
}

}  // namespace dermarket
