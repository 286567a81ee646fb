#pragma once

#include <cmath>
#include <cstdio>
#include <string>

#include "ortho_cate/errors.hpp"
#include "ortho_cate/parse_util.hpp"

namespace ortho_cate {

enum class WeightFamily {
    constant,               // DR-Learner
    propensity,             // propensity-score-weighted DR-Learner
    overlap,                // R-Learner
    one_minus_propensity,   // DR-Learner restricted to the control group
    smoothed_indicator,     // sigmoid-smoothed overlap-region indicator
};

// The weight function lambda(pi) that indexes a learner, together with the
// parameters of the smoothed-indicator family.
struct WeightKind {
    WeightFamily family = WeightFamily::constant;
    double alpha = 0.1;       // smoothed_indicator only, in (0, 0.5)
    double steepness = 50.0;  // smoothed_indicator only, > 0

    static WeightKind constant() { return {WeightFamily::constant}; }
    static WeightKind propensity() { return {WeightFamily::propensity}; }
    static WeightKind overlap() { return {WeightFamily::overlap}; }
    static WeightKind one_minus_propensity() {
        return {WeightFamily::one_minus_propensity};
    }
    static WeightKind smoothed_indicator(double alpha, double steepness) {
        if (!(alpha > 0.0 && alpha < 0.5))
            throw InvalidParams("smoothed indicator alpha must be in (0, 0.5)");
        if (!(steepness > 0.0))
            throw InvalidParams("smoothed indicator steepness must be > 0");
        WeightKind k{WeightFamily::smoothed_indicator};
        k.alpha = alpha;
        k.steepness = steepness;
        return k;
    }
};

// lambda and its first three derivatives, evaluated at one propensity value.
struct WeightStack {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    double d3 = 0.0;
};

namespace detail {

inline void check_propensity(double pi) {
    if (!(pi > 0.0 && pi < 1.0))
        throw PropensityOutOfRange("pi = " + std::to_string(pi));
}

// Logistic s(z) and derivative building blocks:
//   s'   = s(1-s)
//   s''  = s(1-s)(1-2s)
//   s''' = s(1-s)(1-6s+6s^2)
struct LogisticDerivs {
    double s0, s1, s2, s3;
};

inline LogisticDerivs logistic_derivs(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    const double s1 = s * (1.0 - s);
    return {s, s1, s1 * (1.0 - 2.0 * s), s1 * (1.0 - 6.0 * s + 6.0 * s * s)};
}

}  // namespace detail

// Analytic derivatives, exact for the polynomial families. The smoothed
// indicator is lambda(pi) = s(k(pi-alpha)) * s(k(1-alpha-pi)) with s the
// logistic function, differentiated by the product rule.
inline WeightStack eval_weight_stack(const WeightKind& kind, double pi) {
    detail::check_propensity(pi);
    switch (kind.family) {
        case WeightFamily::constant:
            return {1.0, 0.0, 0.0, 0.0};
        case WeightFamily::propensity:
            return {pi, 1.0, 0.0, 0.0};
        case WeightFamily::overlap:
            return {pi * (1.0 - pi), 1.0 - 2.0 * pi, -2.0, 0.0};
        case WeightFamily::one_minus_propensity:
            return {1.0 - pi, -1.0, 0.0, 0.0};
        case WeightFamily::smoothed_indicator: {
            const double k = kind.steepness;
            const auto f = detail::logistic_derivs(k * (pi - kind.alpha));
            const auto g = detail::logistic_derivs(k * (1.0 - kind.alpha - pi));
            // d^n f / d pi^n = k^n S_n(z); d^n g / d pi^n = (-k)^n S_n(w)
            const double f0 = f.s0, f1 = k * f.s1, f2 = k * k * f.s2,
                         f3 = k * k * k * f.s3;
            const double g0 = g.s0, g1 = -k * g.s1, g2 = k * k * g.s2,
                         g3 = -k * k * k * g.s3;
            WeightStack st;
            st.value = f0 * g0;
            st.d1 = f1 * g0 + f0 * g1;
            st.d2 = f2 * g0 + 2.0 * f1 * g1 + f0 * g2;
            st.d3 = f3 * g0 + 3.0 * f2 * g1 + 3.0 * f1 * g2 + f0 * g3;
            return st;
        }
    }
    throw InvalidParams("unknown weight family");
}

// Second-stage observation weight {a - pi} lambda'(pi) + lambda(pi). The
// polynomial families use the algebraically simplified forms, which are the
// identities the learners rely on (Constant -> 1, Propensity -> a,
// Overlap -> (a-pi)^2, OneMinusPropensity -> 1-a) and keep them exact in
// floating point.
inline double second_stage_weight(int a, double pi, const WeightKind& kind) {
    detail::check_propensity(pi);
    const double ad = static_cast<double>(a);
    switch (kind.family) {
        case WeightFamily::constant:
            return 1.0;
        case WeightFamily::propensity:
            return ad;
        case WeightFamily::overlap: {
            const double r = ad - pi;
            return r * r;
        }
        case WeightFamily::one_minus_propensity:
            return 1.0 - ad;
        case WeightFamily::smoothed_indicator: {
            const WeightStack st = eval_weight_stack(kind, pi);
            return (ad - pi) * st.d1 + st.value;
        }
    }
    throw InvalidParams("unknown weight family");
}

inline std::string to_string(const WeightKind& kind) {
    switch (kind.family) {
        case WeightFamily::constant: return "dr";
        case WeightFamily::propensity: return "ps-dr";
        case WeightFamily::overlap: return "r";
        case WeightFamily::one_minus_propensity: return "control-dr";
        case WeightFamily::smoothed_indicator: {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "smoothed{alpha=%g,steepness=%g}",
                          kind.alpha, kind.steepness);
            return buf;
        }
    }
    return "?";
}

// Accepts `dr | ps-dr | r | control-dr | smoothed{alpha=..,steepness=..}`.
inline WeightKind parse_weight_kind(const std::string& text) {
    if (text == "dr") return WeightKind::constant();
    if (text == "ps-dr") return WeightKind::propensity();
    if (text == "r") return WeightKind::overlap();
    if (text == "control-dr") return WeightKind::one_minus_propensity();
    const detail::BracedSpec b = detail::parse_braced(text);
    if (b.name == "smoothed")
        return WeightKind::smoothed_indicator(b.get("alpha", 0.1),
                                              b.get("steepness", 50.0));
    throw InvalidParams("unknown weight kind '" + text + "'");
}

}  // namespace ortho_cate
