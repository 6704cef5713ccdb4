#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dermarket/clearing.hpp"

namespace dermarket {

/// Independent check of the clearing result: projected-gradient descent on
/// the welfare QP with a densely materialised Hessian. Intended for small
/// populations only.
struct OracleOptions {
    std::size_t max_size = 50;
    long max_iterations = 1'000'000;
    double step_tol = 1e-12;  // relative successive-iterate distance
};

class OracleNonConvergence : public std::runtime_error {
public:
    OracleNonConvergence(const std::string& what, double last_step)
        : std::runtime_error(what), last_step(last_step) {}
    double last_step;
};

[[nodiscard]] inline Eigen::MatrixXd dense_hessian(const CoupledQp& qp) {
    const auto m = static_cast<Eigen::Index>(qp.size());
    Eigen::MatrixXd h = Eigen::MatrixXd::Constant(m, m, qp.beta1);
    for (Eigen::Index i = 0; i < m; ++i) h(i, i) += qp.q[static_cast<std::size_t>(i)];
    return h;
}

/// Minimises ½ dᵀQ̃d - dᵀ(Rx + c̃) over the box product with step 1/L,
/// L = max q_i + β1 m. The minimiser is the Q̃-weighted projection of the
/// unconstrained maximiser onto the boxes.
[[nodiscard]] inline std::vector<double> qp_oracle(const CoupledQp& qp, std::span<const double> x,
                                                   std::span<const Interval> boxes,
                                                   const OracleOptions& opt = {}) {
    const std::size_t m = qp.size();
    if (m > opt.max_size) {
        throw std::invalid_argument("qp_oracle: population of " + std::to_string(m) + " exceeds oracle cap " +
                                    std::to_string(opt.max_size));
    }
    const auto n = static_cast<Eigen::Index>(m);
    const Eigen::MatrixXd hess = dense_hessian(qp);
    Eigen::VectorXd lin(n);
    Eigen::VectorXd d(n);
    double lipschitz = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        lin(k) = qp.r[i] * x[i] + qp.c[i] - qp.beta2;
        d(k) = 0.5 * (boxes[i].lo + boxes[i].hi);
        lipschitz = std::max(lipschitz, qp.q[i]);
    }
    lipschitz += qp.beta1 * static_cast<double>(m);
    const double step = 1.0 / lipschitz;

    double last = 0.0;
    for (long it = 0; it < opt.max_iterations; ++it) {
        Eigen::VectorXd next = d - step * (hess * d - lin);
        for (std::size_t i = 0; i < m; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            next(k) = boxes[i].clamp(next(k));
        }
        last = (next - d).norm();
        d = next;
        if (last < opt.step_tol * std::max(1.0, d.norm())) {
            return {d.data(), d.data() + n};
        }
    }
    throw OracleNonConvergence("qp_oracle: iteration cap exceeded", last);
}

}  // namespace dermarket
