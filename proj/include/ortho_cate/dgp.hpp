#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ortho_cate/core.hpp"
#include "ortho_cate/errors.hpp"
#include "ortho_cate/linalg.hpp"
#include "ortho_cate/rng.hpp"

namespace ortho_cate {

enum class SetupId : int { setup1 = 1, setup2 = 2, setup3 = 3 };

// Setup 1's propensity as printed is 1/exp(1 + x2+x3+x4+x5), which is not a
// probability for negative exponents; the default clamps it into
// [alpha, 1-alpha]. The logistic mode replaces it by
// 1/(1 + exp(1 + x2+x3+x4+x5)) for sensitivity runs.
enum class Setup1PropensityMode { clamped_inverse_exp, logistic };

struct DgpParams {
    std::size_t d = 20;
    double sigma = 0.5;                       // noise sd, setups 1-2
    std::optional<double> alpha_clip;         // default 0.01 (setup 1), 0.1 (setup 2)
    double theta = 1.0;                       // setup 3 treatment effect constant
    double r2_y = 0.5;                        // setup 3
    double r2_d = 0.5;                        // setup 3
    std::size_t n = 0;
    std::uint64_t seed = 0;
    Setup1PropensityMode setup1_propensity = Setup1PropensityMode::clamped_inverse_exp;

    double effective_alpha(SetupId setup) const {
        if (alpha_clip) return *alpha_clip;
        return setup == SetupId::setup2 ? 0.1 : 0.01;
    }

    void validate(SetupId setup) const {
        if (d < 6) throw InvalidParams("d must be >= 6");
        if (n < 1) throw InvalidParams("n must be >= 1");
        if (!(sigma >= 0.0)) throw InvalidParams("sigma must be >= 0");
        const double alpha = effective_alpha(setup);
        if (!(alpha > 0.0 && alpha < 0.5))
            throw InvalidParams("alpha_clip must be in (0, 0.5)");
        if (!(r2_y > 0.0 && r2_y < 1.0) || !(r2_d > 0.0 && r2_d < 1.0))
            throw InvalidParams("r2 values must be in (0, 1)");
    }
};

// A Dataset plus everything only the simulator knows: true propensity, true
// CATE, both potential outcomes and the true conditional outcome means.
struct SyntheticDataset {
    Dataset data;
    std::vector<double> pi0;
    std::vector<double> tau;
    std::vector<double> y0;
    std::vector<double> y1;
    std::vector<double> q0_mean;  // E(Y^0 | X)
    std::vector<double> q1_mean;  // E(Y^1 | X)
    SetupId setup_id = SetupId::setup1;
    DgpParams params;
};

namespace detail {

inline double sum_first(std::span<const double> x, std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t j = from; j < to; ++j) s += x[j];
    return s;
}

inline double expit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Setup3Constants {
    std::vector<double> beta;
    double c_y = 0.0;
    double c_d = 0.0;
    Matrix chol;  // lower Cholesky factor of the AR(0.5) covariance

    static Setup3Constants make(const DgpParams& params) {
        const std::size_t d = params.d;
        Setup3Constants k;
        k.beta.resize(d);
        for (std::size_t j = 0; j < d; ++j)
            k.beta[j] = 1.0 / static_cast<double>((j + 1) * (j + 1));
        Matrix cov(d, d);
        double bsb = 0.0;
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) {
                const double v = std::pow(0.5, std::abs(static_cast<long>(r) -
                                                        static_cast<long>(c)));
                cov(r, c) = v;
                bsb += k.beta[r] * v * k.beta[c];
            }
        k.c_y = std::sqrt(params.r2_y / ((1.0 - params.r2_y) * bsb));
        const double pi2_3 = 3.14159265358979323846 * 3.14159265358979323846 / 3.0;
        k.c_d = std::sqrt(pi2_3 * params.r2_d / ((1.0 - params.r2_d) * bsb));
        if (!cholesky_in_place(cov))
            throw InvalidParams("setup 3 covariance is not positive definite");
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = r + 1; c < d; ++c) cov(r, c) = 0.0;
        k.chol = std::move(cov);
        return k;
    }

    double index(std::span<const double> x) const {
        double s = 0.0;
        for (std::size_t j = 0; j < beta.size(); ++j) s += x[j] * beta[j];
        return s;
    }
};

inline double setup1_baseline(std::span<const double> x) {
    const double s = sum_first(x, 0, 5);
    // 2 log(1 + e^s), stable for large s
    return 2.0 * (s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)));
}

inline double setup1_propensity(std::span<const double> x, const DgpParams& p) {
    const double s = 1.0 + sum_first(x, 1, 5);
    if (p.setup1_propensity == Setup1PropensityMode::logistic)
        return 1.0 / (1.0 + std::exp(s));
    const double alpha = p.effective_alpha(SetupId::setup1);
    return std::clamp(std::exp(-s), alpha, 1.0 - alpha);
}

inline double setup2_baseline(std::span<const double> x) {
    const double pi = 3.14159265358979323846;
    return std::sin(pi * x[0] * x[1]) + 2.0 * (x[2] - 0.5) * (x[2] - 0.5) + x[3] +
           0.5 * x[4] + x[5];
}

inline double setup2_propensity(std::span<const double> x, const DgpParams& p) {
    const double pi = 3.14159265358979323846;
    const double alpha = p.effective_alpha(SetupId::setup2);
    return std::max(alpha, std::min(std::sin(pi * x[0] * x[1] * x[2] * x[3]),
                                    1.0 - alpha));
}

}  // namespace detail

inline double true_cate(SetupId setup, const DgpParams& params,
                        std::span<const double> x_row) {
    params.validate(setup);
    switch (setup) {
        case SetupId::setup1:
            return 1.0;
        case SetupId::setup2:
            return (x_row[0] + x_row[1] + x_row[2]) / 2.0;
        case SetupId::setup3: {
            const auto k = detail::Setup3Constants::make(params);
            return params.theta + k.c_y * k.index(x_row);
        }
    }
    throw InvalidParams("unknown setup");
}

inline double true_propensity(SetupId setup, const DgpParams& params,
                              std::span<const double> x_row) {
    params.validate(setup);
    switch (setup) {
        case SetupId::setup1:
            return detail::setup1_propensity(x_row, params);
        case SetupId::setup2:
            return detail::setup2_propensity(x_row, params);
        case SetupId::setup3: {
            const auto k = detail::Setup3Constants::make(params);
            return detail::expit(k.c_d * k.index(x_row));
        }
    }
    throw InvalidParams("unknown setup");
}

// (E(Y^0|X), E(Y^1|X)) under the setup's outcome model.
inline std::pair<double, double> true_outcome_means(SetupId setup,
                                                    const DgpParams& params,
                                                    std::span<const double> x_row) {
    params.validate(setup);
    switch (setup) {
        case SetupId::setup1: {
            const double b = detail::setup1_baseline(x_row);
            return {b - 0.5, b + 0.5};
        }
        case SetupId::setup2: {
            const double b = detail::setup2_baseline(x_row);
            const double t = true_cate(setup, params, x_row);
            return {b - 0.5 * t, b + 0.5 * t};
        }
        case SetupId::setup3: {
            const auto k = detail::Setup3Constants::make(params);
            return {0.0, params.theta + k.c_y * k.index(x_row)};
        }
    }
    throw InvalidParams("unknown setup");
}

inline SyntheticDataset generate(SetupId setup, const DgpParams& params) {
    params.validate(setup);
    const std::size_t n = params.n;
    const std::size_t d = params.d;

    SyntheticDataset out;
    out.setup_id = setup;
    out.params = params;
    out.data.x = Matrix(n, d);
    out.data.y.resize(n);
    out.data.a.resize(n);
    out.data.feature_names.resize(d);
    for (std::size_t j = 0; j < d; ++j)
        out.data.feature_names[j] = "x" + std::to_string(j + 1);
    out.data.v_columns.resize(d);
    for (std::size_t j = 0; j < d; ++j) out.data.v_columns[j] = j;
    out.pi0.resize(n);
    out.tau.resize(n);
    out.y0.resize(n);
    out.y1.resize(n);
    out.q0_mean.resize(n);
    out.q1_mean.resize(n);

    Rng rng(params.seed);
    if (setup == SetupId::setup3) {
        const auto k = detail::Setup3Constants::make(params);
        std::vector<double> z(d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) z[j] = rng.normal();
            for (std::size_t r = 0; r < d; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c <= r; ++c) s += k.chol(r, c) * z[c];
                out.data.x(i, r) = s;
            }
            const double v = rng.uniform();
            const double zeta = rng.normal();
            const double idx = k.index(out.data.x.row(i));
            const double pi = detail::expit(k.c_d * idx);
            const int a = detail::expit(k.c_d * idx) > v ? 1 : 0;
            out.pi0[i] = pi;
            out.tau[i] = params.theta + k.c_y * idx;
            out.q0_mean[i] = 0.0;
            out.q1_mean[i] = params.theta + k.c_y * idx;
            out.y0[i] = zeta;
            out.y1[i] = params.theta + k.c_y * idx + zeta;
            out.data.a[i] = a;
            out.data.y[i] = a == 1 ? out.y1[i] : out.y0[i];
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j)
                out.data.x(i, j) = setup == SetupId::setup1 ? rng.normal()
                                                            : rng.uniform();
            const auto row = out.data.x.row(i);
            const double delta = rng.normal();
            const double u = rng.uniform();
            const double b = setup == SetupId::setup1 ? detail::setup1_baseline(row)
                                                      : detail::setup2_baseline(row);
            const double tau = setup == SetupId::setup1
                                   ? 1.0
                                   : (row[0] + row[1] + row[2]) / 2.0;
            const double pi = setup == SetupId::setup1
                                  ? detail::setup1_propensity(row, params)
                                  : detail::setup2_propensity(row, params);
            out.pi0[i] = pi;
            out.tau[i] = tau;
            out.q0_mean[i] = b - 0.5 * tau;
            out.q1_mean[i] = b + 0.5 * tau;
            out.y0[i] = b - 0.5 * tau + params.sigma * delta;
            out.y1[i] = b + 0.5 * tau + params.sigma * delta;
            const int a = u < pi ? 1 : 0;
            out.data.a[i] = a;
            out.data.y[i] = a == 1 ? out.y1[i] : out.y0[i];
        }
    }
    return out;
}

inline void synthetic_to_csv(const SyntheticDataset& sd, const std::string& path) {
    std::ofstream outf(path);
    if (!outf) throw InvalidParams("cannot open file for writing: " + path);
    outf << "y,a";
    for (const std::string& name : sd.data.feature_names) outf << ',' << name;
    outf << ",pi0,tau,y0,y1\n";
    for (std::size_t i = 0; i < sd.data.n(); ++i) {
        outf << detail::format_double(sd.data.y[i]) << ',' << sd.data.a[i];
        for (std::size_t j = 0; j < sd.data.d_x(); ++j)
            outf << ',' << detail::format_double(sd.data.x(i, j));
        outf << ',' << detail::format_double(sd.pi0[i]) << ','
             << detail::format_double(sd.tau[i]) << ','
             << detail::format_double(sd.y0[i]) << ','
             << detail::format_double(sd.y1[i]) << '\n';
    }
}

}  // namespace ortho_cate
