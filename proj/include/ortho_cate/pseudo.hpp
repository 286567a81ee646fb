#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ortho_cate/errors.hpp"
#include "ortho_cate/weights.hpp"

namespace ortho_cate {

// Rows whose second-stage weight is this close to zero are excluded from
// the second stage; exact zeros arise analytically (ps-dr untreated,
// control-dr treated).
inline constexpr double kZeroWeightTol = 1e-12;

// Out-of-fold nuisance values (pi_hat, q0_hat, q1_hat) plus the derived
// single outcome prediction q_hat = pi*q1 + (1-pi)*q0.
struct NuisanceEstimates {
    std::vector<double> pi_hat;
    std::vector<double> q0_hat;
    std::vector<double> q1_hat;
    std::vector<double> q_hat;

    static NuisanceEstimates make(std::vector<double> pi, std::vector<double> q0,
                                  std::vector<double> q1) {
        if (pi.size() != q0.size() || pi.size() != q1.size())
            throw LengthMismatch("nuisance vectors differ in length");
        NuisanceEstimates eta;
        eta.q_hat.resize(pi.size());
        for (std::size_t i = 0; i < pi.size(); ++i) {
            if (!(pi[i] > 0.0 && pi[i] < 1.0))
                throw PropensityOutOfRange("pi_hat[" + std::to_string(i) + "] = " +
                                           std::to_string(pi[i]));
            if (!std::isfinite(q0[i]) || !std::isfinite(q1[i]))
                throw NonFiniteValue("nuisance estimate at row " + std::to_string(i));
            eta.q_hat[i] = pi[i] * q1[i] + (1.0 - pi[i]) * q0[i];
        }
        eta.pi_hat = std::move(pi);
        eta.q0_hat = std::move(q0);
        eta.q1_hat = std::move(q1);
        return eta;
    }

    std::size_t n() const { return pi_hat.size(); }
};

// Universal orthogonal pseudo-outcome:
//   lambda(pi) / [(a-pi) lambda'(pi) + lambda(pi)]
//     * [ a/pi (y - q1) - (1-a)/(1-pi) (y - q0) ] + q1 - q0.
// Callers must filter zero-weight rows first; a near-zero denominator on a
// surviving row is an error rather than a silent huge value.
inline double pseudo_outcome(double y, int a, double pi, double q0, double q1,
                             const WeightKind& kind) {
    const double denom = second_stage_weight(a, pi, kind);
    if (std::abs(denom) < kZeroWeightTol)
        throw ZeroDenominator("(a-pi) lambda'(pi) + lambda(pi) vanishes at a=" +
                              std::to_string(a) + ", pi=" + std::to_string(pi));
    const WeightStack st = eval_weight_stack(kind, pi);
    const double ad = static_cast<double>(a);
    const double bracket =
        ad / pi * (y - q1) - (1.0 - ad) / (1.0 - pi) * (y - q0);
    return st.value / denom * bracket + q1 - q0;
}

// Inverse-probability-weighted pseudo-outcome a*y/pi - (1-a)*y/(1-pi).
inline double ipw_pseudo_outcome(double y, int a, double pi) {
    detail::check_propensity(pi);
    const double ad = static_cast<double>(a);
    return ad * y / pi - (1.0 - ad) * y / (1.0 - pi);
}

}  // namespace ortho_cate
