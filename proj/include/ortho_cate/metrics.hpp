#pragma once

#include <span>
#include <vector>

#include "ortho_cate/errors.hpp"
#include "ortho_cate/linalg.hpp"

namespace ortho_cate {

inline double mse(std::span<const double> tau_hat, std::span<const double> tau) {
    if (tau_hat.size() != tau.size()) throw LengthMismatch("mse inputs differ");
    if (tau_hat.empty()) throw Empty("mse needs at least one pair");
    std::vector<double> sq(tau_hat.size());
    for (std::size_t i = 0; i < tau.size(); ++i) {
        const double e = tau_hat[i] - tau[i];
        sq[i] = e * e;
    }
    return pairwise_sum(sq) / static_cast<double>(sq.size());
}

inline double mse_treated(std::span<const double> tau_hat,
                          std::span<const double> tau, std::span<const int> a) {
    if (tau_hat.size() != tau.size() || tau.size() != a.size())
        throw LengthMismatch("mse_treated inputs differ");
    std::vector<double> sq;
    sq.reserve(tau.size());
    for (std::size_t i = 0; i < tau.size(); ++i) {
        if (a[i] != 1) continue;
        const double e = tau_hat[i] - tau[i];
        sq.push_back(e * e);
    }
    if (sq.empty()) throw NoTreated("no treated rows");
    return pairwise_sum(sq) / static_cast<double>(sq.size());
}

// Propensity-overlap-weighted MSE:
//   sum pi(1-pi) (tau_hat - tau)^2 / sum pi(1-pi).
inline double mse_pow(std::span<const double> tau_hat, std::span<const double> tau,
                      std::span<const double> pi) {
    if (tau_hat.size() != tau.size() || tau.size() != pi.size())
        throw LengthMismatch("mse_pow inputs differ");
    if (tau_hat.empty()) throw Empty("mse_pow needs at least one pair");
    std::vector<double> num(tau.size()), den(tau.size());
    for (std::size_t i = 0; i < tau.size(); ++i) {
        if (!(pi[i] > 0.0 && pi[i] < 1.0))
            throw PropensityOutOfRange("pi[" + std::to_string(i) + "]");
        const double w = pi[i] * (1.0 - pi[i]);
        const double e = tau_hat[i] - tau[i];
        num[i] = w * e * e;
        den[i] = w;
    }
    return pairwise_sum(num) / pairwise_sum(den);
}

}  // namespace ortho_cate
