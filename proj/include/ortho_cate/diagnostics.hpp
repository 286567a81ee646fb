#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ortho_cate/core.hpp"
#include "ortho_cate/dgp.hpp"
#include "ortho_cate/errors.hpp"
#include "ortho_cate/linalg.hpp"
#include "ortho_cate/pseudo.hpp"
#include "ortho_cate/rng.hpp"
#include "ortho_cate/weights.hpp"

namespace ortho_cate {

// Per-observation constants of the oracle error bound, in squared form.
struct BoundConstants {
    double c1 = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;
};

inline BoundConstants bound_constants(double y, int a, double pi_bar,
                                      double q0_bar, double q1_bar, double g_star,
                                      const WeightKind& kind) {
    const WeightStack st = eval_weight_stack(kind, pi_bar);
    const double ad = static_cast<double>(a);
    const double e1 = y - q1_bar;
    const double e0 = y - q0_bar;
    const double om = 1.0 - pi_bar;
    const double effect_gap = q1_bar - q0_bar - g_star;

    const double c1_lin =
        st.value * (ad / (pi_bar * pi_bar * pi_bar) * e1 -
                    (1.0 - ad) / (om * om * om) * e0) -
        st.d1 * (ad / (pi_bar * pi_bar) * e1 + (1.0 - ad) / (om * om) * e0) +
        0.5 * st.d2 * (ad / pi_bar * e1 - (1.0 - ad) / om * e0 - effect_gap) +
        0.5 * st.d3 * (ad - pi_bar) * effect_gap;
    const double c2_lin = st.value * ad / (pi_bar * pi_bar) - st.d1 * ad / pi_bar +
                          (ad - pi_bar) * st.d2;
    const double c3_lin = st.value * (1.0 - ad) / (om * om) +
                          st.d1 * (1.0 - ad) / om - (ad - pi_bar) * st.d2;
    return {c1_lin * c1_lin, c2_lin * c2_lin, c3_lin * c3_lin};
}

// Normalized weighted empirical risk:
//   sum_i w_i (phi_i - g_i)^2 / sum_i lambda(pi_i),
// with zero-weight rows contributing nothing to the numerator.
inline double empirical_risk(const Dataset& data, const NuisanceEstimates& eta,
                             const WeightKind& kind,
                             std::span<const double> g_values) {
    if (eta.n() != data.n() || g_values.size() != data.n())
        throw LengthMismatch("empirical_risk inputs differ in length");
    std::vector<double> num(data.n(), 0.0), lam(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) {
        lam[i] = eval_weight_stack(kind, eta.pi_hat[i]).value;
        const double w = second_stage_weight(data.a[i], eta.pi_hat[i], kind);
        if (std::abs(w) < kZeroWeightTol) continue;
        const double phi = pseudo_outcome(data.y[i], data.a[i], eta.pi_hat[i],
                                          eta.q0_hat[i], eta.q1_hat[i], kind);
        const double e = phi - g_values[i];
        num[i] = w * e * e;
    }
    const double normalizer = pairwise_sum(lam);
    if (!(normalizer > 0.0)) throw ZeroNormalizer("sum of lambda(pi) is zero");
    return pairwise_sum(num) / normalizer;
}

struct RemainderTerms {
    double rem1 = 0.0;
    double rem2 = 0.0;
    double rem3 = 0.0;
};

// Sample means of the three bound remainders, with the constants evaluated
// on the star hull at eta_bar = t*eta_hat + (1-t)*eta0 (t = 0 is the truth).
inline RemainderTerms remainder_terms(const SyntheticDataset& synth,
                                      const NuisanceEstimates& eta_hat,
                                      std::span<const double> g_star_values,
                                      const WeightKind& kind, double t) {
    const std::size_t n = synth.data.n();
    if (eta_hat.n() != n || g_star_values.size() != n)
        throw LengthMismatch("remainder_terms inputs differ in length");
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidParams("t must be in [0, 1]");
    std::vector<double> r1(n), r2(n), r3(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double pi_bar = t * eta_hat.pi_hat[i] + (1.0 - t) * synth.pi0[i];
        const double q0_bar = t * eta_hat.q0_hat[i] + (1.0 - t) * synth.q0_mean[i];
        const double q1_bar = t * eta_hat.q1_hat[i] + (1.0 - t) * synth.q1_mean[i];
        const BoundConstants c =
            bound_constants(synth.data.y[i], synth.data.a[i], pi_bar, q0_bar,
                            q1_bar, g_star_values[i], kind);
        const double dpi = eta_hat.pi_hat[i] - synth.pi0[i];
        const double dq1 = eta_hat.q1_hat[i] - synth.q1_mean[i];
        const double dq0 = eta_hat.q0_hat[i] - synth.q0_mean[i];
        r1[i] = c.c1 * dpi * dpi * dpi * dpi;
        r2[i] = c.c2 * dpi * dpi * dq1 * dq1;
        r3[i] = c.c3 * dpi * dpi * dq0 * dq0;
    }
    return {mean(r1), mean(r2), mean(r3)};
}

// Curvature ratio E[w (g - g*)^2] / E[(g - g*)^2] for one direction.
inline double alpha_ratio(std::span<const int> a, std::span<const double> pi,
                          const WeightKind& kind, std::span<const double> g_values,
                          std::span<const double> g_star_values) {
    if (a.size() != pi.size() || g_values.size() != a.size() ||
        g_star_values.size() != a.size())
        throw LengthMismatch("alpha_ratio inputs differ in length");
    std::vector<double> num(a.size()), den(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = g_values[i] - g_star_values[i];
        num[i] = second_stage_weight(a[i], pi[i], kind) * diff * diff;
        den[i] = diff * diff;
    }
    const double d = pairwise_sum(den);
    if (!(d > 0.0)) throw DegenerateDirection("g equals g* everywhere");
    return pairwise_sum(num) / d;
}

struct NuisanceDirection {
    std::vector<double> dpi;
    std::vector<double> dq0;
    std::vector<double> dq1;
};

namespace detail {

// Risk functional used for derivative probing. On rows where the observation
// weight vanishes identically (ps-dr untreated, control-dr treated) the
// squared loss w (phi - g)^2 degenerates, but expanding it as
//   lambda^2 B^2 / w + 2 lambda B (q1 - q0 - g) + w (q1 - q0 - g)^2
// shows a surviving g-linear term, with B the inverse-probability residual
// contrast. Dropping that term would break the Neyman-orthogonality of the
// probed gradient; the value-level empirical_risk keeps its zero-row
// convention because the dropped term is g-independent only there.
inline double eif_risk(const Dataset& data, const NuisanceEstimates& eta,
                       const WeightKind& kind, std::span<const double> g_values) {
    std::vector<double> num(data.n(), 0.0), lam(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) {
        const WeightStack st = eval_weight_stack(kind, eta.pi_hat[i]);
        lam[i] = st.value;
        const double w = second_stage_weight(data.a[i], eta.pi_hat[i], kind);
        if (std::abs(w) >= kZeroWeightTol) {
            const double phi =
                pseudo_outcome(data.y[i], data.a[i], eta.pi_hat[i], eta.q0_hat[i],
                               eta.q1_hat[i], kind);
            const double e = phi - g_values[i];
            num[i] = w * e * e;
        } else {
            const double ad = static_cast<double>(data.a[i]);
            const double bracket =
                ad / eta.pi_hat[i] * (data.y[i] - eta.q1_hat[i]) -
                (1.0 - ad) / (1.0 - eta.pi_hat[i]) * (data.y[i] - eta.q0_hat[i]);
            num[i] = 2.0 * st.value * bracket *
                     (eta.q1_hat[i] - eta.q0_hat[i] - g_values[i]);
        }
    }
    const double normalizer = pairwise_sum(lam);
    if (!(normalizer > 0.0)) throw ZeroNormalizer("sum of lambda(pi) is zero");
    return pairwise_sum(num) / normalizer;
}

inline NuisanceEstimates perturb(const SyntheticDataset& synth,
                                 const NuisanceDirection& dir, double t) {
    const std::size_t n = synth.data.n();
    std::vector<double> pi(n), q0(n), q1(n);
    for (std::size_t i = 0; i < n; ++i) {
        pi[i] = synth.pi0[i] + t * dir.dpi[i];
        q0[i] = synth.q0_mean[i] + t * dir.dq0[i];
        q1[i] = synth.q1_mean[i] + t * dir.dq1[i];
    }
    return NuisanceEstimates::make(std::move(pi), std::move(q0), std::move(q1));
}

}  // namespace detail

// Finite-difference estimate of the cross derivative D_eta D_g of the
// orthogonal risk at (g*, eta0): the g-gradient is a central difference with
// step t, and its change under the nuisance perturbation eta0 + t*dir is
// divided by t. Vanishes as t -> 0 when the risk is Neyman-orthogonal.
inline double orthogonality_probe(const SyntheticDataset& synth,
                                  const WeightKind& kind,
                                  std::span<const double> g_star_values,
                                  std::span<const double> g_dir_values,
                                  const NuisanceDirection& eta_dir, double t) {
    const std::size_t n = synth.data.n();
    if (g_star_values.size() != n || g_dir_values.size() != n ||
        eta_dir.dpi.size() != n || eta_dir.dq0.size() != n || eta_dir.dq1.size() != n)
        throw LengthMismatch("orthogonality_probe inputs differ in length");
    if (t < 1e-8) throw StepTooSmall("t = " + std::to_string(t));

    std::vector<double> g_plus(n), g_minus(n);
    for (std::size_t i = 0; i < n; ++i) {
        g_plus[i] = g_star_values[i] + t * g_dir_values[i];
        g_minus[i] = g_star_values[i] - t * g_dir_values[i];
    }
    const NuisanceDirection zero{std::vector<double>(n, 0.0),
                                 std::vector<double>(n, 0.0),
                                 std::vector<double>(n, 0.0)};
    const NuisanceEstimates eta0 = detail::perturb(synth, zero, 0.0);
    const NuisanceEstimates eta_t = detail::perturb(synth, eta_dir, t);

    auto g_gradient = [&](const NuisanceEstimates& eta) {
        return (detail::eif_risk(synth.data, eta, kind, g_plus) -
                detail::eif_risk(synth.data, eta, kind, g_minus)) /
               (2.0 * t);
    };
    return (g_gradient(eta_t) - g_gradient(eta0)) / t;
}

// Lower-bound heuristic for the curvature constant alpha: the minimum
// alpha_ratio over 64 seeded smooth directions plus the coordinate
// directions of the second-stage basis (each V column and the constant).
inline double estimate_alpha_hat(std::span<const int> a, std::span<const double> pi,
                                 const WeightKind& kind, const Matrix& v,
                                 std::span<const double> g_star_values,
                                 std::uint64_t seed, int n_random = 64) {
    const std::size_t n = a.size();
    double lowest = std::numeric_limits<double>::infinity();
    std::vector<double> g(n);
    auto consider = [&](const std::vector<double>& dir) {
        double norm = 0.0;
        for (double x : dir) norm += x * x;
        if (!(norm > 0.0)) return;
        for (std::size_t i = 0; i < n; ++i) g[i] = g_star_values[i] + dir[i];
        lowest = std::min(lowest, alpha_ratio(a, pi, kind, g, g_star_values));
    };

    std::vector<double> dir(n, 1.0);
    consider(dir);  // constant direction
    for (std::size_t j = 0; j < v.cols; ++j) {
        for (std::size_t i = 0; i < n; ++i) dir[i] = v(i, j);
        consider(dir);
    }
    Rng rng(seed);
    for (int s = 0; s < n_random; ++s) {
        std::vector<double> wvec(v.cols);
        for (double& w : wvec) w = rng.normal();
        const double phase = rng.uniform(0.0, 6.283185307179586);
        for (std::size_t i = 0; i < n; ++i)
            dir[i] = std::sin(dot(v.row(i), wvec) + phase);
        consider(dir);
    }
    return lowest;
}

// The assembled bound for a given (delta1, delta2, delta3) split; finite only
// when the deltas sum below alpha_hat / 2.
struct BoundReport {
    double r_g = 0.0;
    double rem1 = 0.0;
    double rem2 = 0.0;
    double rem3 = 0.0;
    double alpha_hat = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
    double total_bound = std::numeric_limits<double>::infinity();
};

inline BoundReport assemble_bound_report(double r_g, const RemainderTerms& rems,
                                         double alpha_hat, double delta1 = -1.0,
                                         double delta2 = -1.0, double delta3 = -1.0) {
    BoundReport rep;
    rep.r_g = r_g;
    rep.rem1 = rems.rem1;
    rep.rem2 = rems.rem2;
    rep.rem3 = rems.rem3;
    rep.alpha_hat = alpha_hat;
    rep.delta1 = delta1 > 0.0 ? delta1 : alpha_hat / 8.0;
    rep.delta2 = delta2 > 0.0 ? delta2 : alpha_hat / 8.0;
    rep.delta3 = delta3 > 0.0 ? delta3 : alpha_hat / 8.0;
    const double slack = alpha_hat / 2.0 - rep.delta1 - rep.delta2 - rep.delta3;
    if (slack > 0.0 && rep.delta1 > 0.0 && rep.delta2 > 0.0 && rep.delta3 > 0.0)
        rep.total_bound = (r_g + rems.rem1 / rep.delta1 + rems.rem2 / rep.delta2 +
                           rems.rem3 / rep.delta3) /
                          slack;
    return rep;
}

}  // namespace ortho_cate
