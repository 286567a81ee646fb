#pragma once

// Shared helpers for the unit and acceptance suites: oracle constructions,
// an independent IPW-risk probe, and grid minimizers used to cross-check
// the weighted risks.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ortho_cate/ortho_cate.hpp"

namespace test_support {

using namespace ortho_cate;

// True nuisances of a synthetic dataset packaged as estimates.
inline NuisanceEstimates oracle_nuisances(const SyntheticDataset& sd) {
    return NuisanceEstimates::make(sd.pi0, sd.q0_mean, sd.q1_mean);
}

// Bounded smooth nuisance direction: each component is a damped sinusoid of
// a random linear index of x. All components are shrunk by the overlap
// factor pi0(1-pi0), which keeps pi0 + t*dpi inside (0, 1) and keeps the
// sample probe scaled where the inverse-propensity factors would otherwise
// amplify its finite-n noise floor.
inline NuisanceDirection smooth_direction(const SyntheticDataset& sd,
                                          std::uint64_t seed, double scale) {
    const std::size_t n = sd.data.n();
    const std::size_t d = sd.data.d_x();
    Rng rng(seed);
    std::vector<double> w_pi(d), w_q0(d), w_q1(d);
    for (std::size_t j = 0; j < d; ++j) {
        w_pi[j] = rng.normal() / std::sqrt(static_cast<double>(d));
        w_q0[j] = rng.normal() / std::sqrt(static_cast<double>(d));
        w_q1[j] = rng.normal() / std::sqrt(static_cast<double>(d));
    }
    const double p1 = rng.uniform(0.0, 6.28), p2 = rng.uniform(0.0, 6.28),
                 p3 = rng.uniform(0.0, 6.28);
    NuisanceDirection dir;
    dir.dpi.resize(n);
    dir.dq0.resize(n);
    dir.dq1.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = sd.data.x.row(i);
        const double overlap = sd.pi0[i] * (1.0 - sd.pi0[i]);
        dir.dpi[i] = scale * overlap * std::sin(dot(row, w_pi) + p1);
        dir.dq0[i] = scale * overlap * std::sin(dot(row, w_q0) + p2);
        dir.dq1[i] = scale * overlap * std::sin(dot(row, w_q1) + p3);
    }
    return dir;
}

// Same finite-difference construction as orthogonality_probe, applied to the
// plain IPW risk (which is not orthogonal in the propensity direction).
inline double ipw_risk_probe(const SyntheticDataset& sd,
                             std::span<const double> g_star,
                             std::span<const double> g_dir,
                             std::span<const double> pi_dir, double t) {
    const std::size_t n = sd.data.n();
    auto risk = [&](std::span<const double> g, std::span<const double> pi) {
        std::vector<double> terms(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double phi = ipw_pseudo_outcome(sd.data.y[i], sd.data.a[i], pi[i]);
            const double e = phi - g[i];
            terms[i] = e * e;
        }
        return mean(terms);
    };
    std::vector<double> g_plus(n), g_minus(n), pi_t(n);
    for (std::size_t i = 0; i < n; ++i) {
        g_plus[i] = g_star[i] + t * g_dir[i];
        g_minus[i] = g_star[i] - t * g_dir[i];
        pi_t[i] = sd.pi0[i] + t * pi_dir[i];
    }
    auto g_grad = [&](std::span<const double> pi) {
        return (risk(g_plus, pi) - risk(g_minus, pi)) / (2.0 * t);
    };
    return (g_grad(pi_t) - g_grad(sd.pi0)) / t;
}

// Minimizer over the constant grid of the orthogonal sample risk with oracle
// nuisances: argmin_g sum w (phi - g)^2.
inline double grid_argmin_orthogonal(const SyntheticDataset& sd,
                                     const WeightKind& kind,
                                     std::span<const double> grid) {
    double sw = 0.0, swphi = 0.0, swphi2 = 0.0;
    for (std::size_t i = 0; i < sd.data.n(); ++i) {
        const double w = second_stage_weight(sd.data.a[i], sd.pi0[i], kind);
        if (std::abs(w) < kZeroWeightTol) continue;
        const double phi = pseudo_outcome(sd.data.y[i], sd.data.a[i], sd.pi0[i],
                                          sd.q0_mean[i], sd.q1_mean[i], kind);
        sw += w;
        swphi += w * phi;
        swphi2 += w * phi * phi;
    }
    double best = grid[0], best_val = std::numeric_limits<double>::infinity();
    for (double g : grid) {
        const double val = swphi2 - 2.0 * g * swphi + g * g * sw;
        if (val < best_val) {
            best_val = val;
            best = g;
        }
    }
    return best;
}

// Minimizer over the constant grid of the infeasible weighted risk
// sum lambda(pi) ((y1 - y0) - g)^2, which uses both potential outcomes.
inline double grid_argmin_infeasible(const SyntheticDataset& sd,
                                     const WeightKind& kind,
                                     std::span<const double> grid) {
    double sw = 0.0, swt = 0.0, swt2 = 0.0;
    for (std::size_t i = 0; i < sd.data.n(); ++i) {
        const double lam = eval_weight_stack(kind, sd.pi0[i]).value;
        const double te = sd.y1[i] - sd.y0[i];
        sw += lam;
        swt += lam * te;
        swt2 += lam * te * te;
    }
    double best = grid[0], best_val = std::numeric_limits<double>::infinity();
    for (double g : grid) {
        const double val = swt2 - 2.0 * g * swt + g * g * sw;
        if (val < best_val) {
            best_val = val;
            best = g;
        }
    }
    return best;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i)
        out[i] = lo + (hi - lo) * static_cast<double>(i) /
                          static_cast<double>(count - 1);
    return out;
}

// Orthogonal learner with oracle nuisances and a constant-function second
// stage (full-neighborhood knn); returns the fitted constant.
inline double oracle_constant_fit(const SyntheticDataset& sd, const WeightKind& kind,
                                  std::uint64_t seed) {
    OrthogonalFitConfig config;
    config.weight_kind = kind;
    config.k_folds = 2;
    config.second_stage_specs = {LearnerSpec::knn(1 << 30)};
    config.seed = seed;
    config.oracle_nuisances = oracle_nuisances(sd);
    const CateModel model = fit_orthogonal_learner(sd.data, config);
    Matrix probe(1, sd.data.d_v());
    for (std::size_t j = 0; j < probe.cols; ++j) probe(0, j) = 0.0;
    return predict_cate(model, probe)[0];
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace test_support
