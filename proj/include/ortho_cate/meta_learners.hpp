#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ortho_cate/base_learners.hpp"
#include "ortho_cate/core.hpp"
#include "ortho_cate/errors.hpp"
#include "ortho_cate/pseudo.hpp"
#include "ortho_cate/weights.hpp"

namespace ortho_cate {

enum class LearnerTemplate { t_learner, ipw, orthogonal };

// Configuration of the cross-fitted two-stage procedure. When
// oracle_nuisances is set, nuisance fitting is skipped and the supplied
// per-row values are used everywhere (test and benchmark oracle runs).
struct OrthogonalFitConfig {
    WeightKind weight_kind = WeightKind::constant();
    int k_folds = 5;
    std::vector<LearnerSpec> propensity_specs{LearnerSpec::logistic(1e-3)};
    std::vector<LearnerSpec> outcome_specs{LearnerSpec::ridge(1e-3, 2)};
    std::vector<LearnerSpec> second_stage_specs{LearnerSpec::ridge(1e-2, 1)};
    double eps = 0.01;
    std::uint64_t seed = 0;
    bool restrict_to_treated = false;
    std::optional<NuisanceEstimates> oracle_nuisances;

    void validate() const {
        if (k_folds < 2) throw InvalidParams("K must be >= 2");
        if (propensity_specs.empty() || outcome_specs.empty() ||
            second_stage_specs.empty())
            throw InvalidParams("spec lists must be nonempty");
        if (!(eps > 0.0 && eps < 0.5)) throw InvalidParams("eps must be in (0, 0.5)");
    }
};

struct ArmPairModel {
    RegressionModel q1;
    RegressionModel q0;
};

using CatePredictor = std::variant<RegressionModel, ArmPairModel>;

// Fitted CATE model: per-fold second-stage regressors plus the provenance
// needed to reproduce the fit. Prediction averages the fold models.
struct CateModel {
    LearnerTemplate learner_template = LearnerTemplate::orthogonal;
    std::vector<CatePredictor> fold_models;
    FoldAssignment folds;
    WeightKind weight_kind = WeightKind::constant();
    std::vector<LearnerSpec> second_stage_choices;  // one per fold model
    double eps = 0.01;
    std::uint64_t seed = 0;
    std::size_t d_v = 0;
    std::vector<std::size_t> v_columns;
    bool restricted_to_treated = false;
};

namespace detail {

// Balanced deal of each arm's shuffled rows across folds, so every fold and
// every training part keeps both arms whenever the arm counts allow it.
inline FoldAssignment stratified_kfold(std::span<const int> a, int k,
                                       std::uint64_t seed) {
    const std::size_t n = a.size();
    if (k < 2 || static_cast<std::size_t>(k) > n)
        throw InvalidK("need 2 <= K <= n");
    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    fa.fold_of.assign(n, 0);
    for (int arm = 0; arm <= 1; ++arm) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < n; ++i)
            if (a[i] == arm) rows.push_back(i);
        Rng rng(derive_seed(seed, 0xA0 + static_cast<std::uint64_t>(arm)));
        for (std::size_t i = rows.size(); i-- > 1;) {
            const std::size_t j = rng.below(i + 1);
            std::swap(rows[i], rows[j]);
        }
        for (std::size_t p = 0; p < rows.size(); ++p)
            fa.fold_of[rows[p]] = static_cast<int>(p % static_cast<std::size_t>(k));
    }
    return fa;
}

inline std::vector<std::size_t> rows_of_fold(const FoldAssignment& fa, int fold,
                                             bool complement) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < fa.n(); ++i)
        if ((fa.fold_of[i] == fold) != complement) rows.push_back(i);
    return rows;
}

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), x.cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < x.cols; ++j) out(r, j) = x(rows[r], j);
    return out;
}

template <typename T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(v[r]);
    return out;
}

// Spec selection guarded for small samples: with a single candidate or too
// few rows for out-of-fold scoring, the first spec stands.
inline LearnerSpec choose_spec(const std::vector<LearnerSpec>& specs,
                               const Matrix& x, std::span<const double> y,
                               std::span<const double> w, int k,
                               std::uint64_t seed) {
    if (specs.size() == 1 || x.rows < 4) return specs[0];
    const int k_sel = std::max(2, std::min<int>(k, static_cast<int>(x.rows / 2)));
    const FoldAssignment folds = kfold_assign(x.rows, k_sel, seed);
    return select_by_validation(specs, x, y, w, folds);
}

inline RegressionModel fit_selected_regressor(const std::vector<LearnerSpec>& specs,
                                              const Matrix& x,
                                              std::span<const double> y,
                                              std::span<const double> w, int k,
                                              std::uint64_t seed) {
    const LearnerSpec spec = choose_spec(specs, x, y, w, k, seed);
    return fit_regressor(spec, x, y, w);
}

}  // namespace detail

// Out-of-fold propensity estimates: for each fold, the model is fitted on
// the other K-1 folds and scores only the held-out rows.
inline std::vector<double> crossfit_propensity(const Dataset& data,
                                               const OrthogonalFitConfig& config,
                                               const FoldAssignment& folds) {
    std::vector<double> pi_hat(data.n(), 0.0);
    for (int f = 0; f < folds.k; ++f) {
        const auto train = detail::rows_of_fold(folds, f, true);
        const auto held = detail::rows_of_fold(folds, f, false);
        const auto a_train = detail::gather<int>(data.a, train);
        if (std::find(a_train.begin(), a_train.end(), 0) == a_train.end() ||
            std::find(a_train.begin(), a_train.end(), 1) == a_train.end())
            throw SingleArmInFold("training part for fold " + std::to_string(f) +
                                  " has a single arm");
        const Matrix x_train = detail::gather_rows(data.x, train);
        std::vector<double> a_real(a_train.size());
        for (std::size_t i = 0; i < a_train.size(); ++i)
            a_real[i] = static_cast<double>(a_train[i]);
        const std::vector<double> ones(a_train.size(), 1.0);
        const LearnerSpec spec = detail::choose_spec(
            config.propensity_specs, x_train, a_real, ones, config.k_folds,
            derive_seed(config.seed, 0x50 + static_cast<std::uint64_t>(f)));
        const PropensityModel model = fit_propensity(spec, x_train, a_train, config.eps);
        const Matrix x_held = detail::gather_rows(data.x, held);
        const std::vector<double> p = predict_propensity(model, x_held);
        for (std::size_t r = 0; r < held.size(); ++r) pi_hat[held[r]] = p[r];
    }
    return pi_hat;
}

// Out-of-fold estimates of (pi, Q0, Q1). Outcome models are fitted per arm
// on the training part.
inline NuisanceEstimates crossfit_nuisances(const Dataset& data,
                                            const OrthogonalFitConfig& config,
                                            const FoldAssignment& folds) {
    std::vector<double> pi_hat = crossfit_propensity(data, config, folds);
    std::vector<double> q0(data.n(), 0.0), q1(data.n(), 0.0);
    for (int f = 0; f < folds.k; ++f) {
        const auto train = detail::rows_of_fold(folds, f, true);
        const auto held = detail::rows_of_fold(folds, f, false);
        const Matrix x_held = detail::gather_rows(data.x, held);
        for (int arm = 0; arm <= 1; ++arm) {
            std::vector<std::size_t> arm_rows;
            for (std::size_t i : train)
                if (data.a[i] == arm) arm_rows.push_back(i);
            if (arm_rows.empty())
                throw SingleArmInFold("no arm-" + std::to_string(arm) +
                                      " rows when training for fold " +
                                      std::to_string(f));
            const Matrix x_arm = detail::gather_rows(data.x, arm_rows);
            const auto y_arm = detail::gather<double>(data.y, arm_rows);
            const std::vector<double> ones(arm_rows.size(), 1.0);
            const RegressionModel model = detail::fit_selected_regressor(
                config.outcome_specs, x_arm, y_arm, ones, config.k_folds,
                derive_seed(config.seed,
                            0x100 + 2 * static_cast<std::uint64_t>(f) +
                                static_cast<std::uint64_t>(arm)));
            const std::vector<double> pred = predict(model, x_held);
            auto& dst = arm == 0 ? q0 : q1;
            for (std::size_t r = 0; r < held.size(); ++r) dst[held[r]] = pred[r];
        }
    }
    return NuisanceEstimates::make(std::move(pi_hat), std::move(q0), std::move(q1));
}

namespace detail {

inline void check_both_arms(const Dataset& data) {
    bool any0 = false, any1 = false;
    for (int a : data.a) (a == 1 ? any1 : any0) = true;
    if (!any0 || !any1) throw SingleArm("dataset needs both treatment arms");
}

inline NuisanceEstimates resolve_nuisances(const Dataset& data,
                                           const OrthogonalFitConfig& config,
                                           const FoldAssignment& folds) {
    if (config.oracle_nuisances) {
        if (config.oracle_nuisances->n() != data.n())
            throw LengthMismatch("oracle nuisances cover a different n");
        return *config.oracle_nuisances;
    }
    return crossfit_nuisances(data, config, folds);
}

}  // namespace detail

// Plug-in outcome regression: Q1 fitted on the treated rows, Q0 on the
// untreated rows, tau_hat = Q1 - Q0. Targets the CATE on all of X, so a
// proper conditioning subset is rejected.
inline CateModel fit_t_learner(const Dataset& data,
                               const std::vector<LearnerSpec>& specs, int k,
                               std::uint64_t seed) {
    data.validate();
    detail::check_both_arms(data);
    if (specs.empty()) throw InvalidParams("spec list is empty");
    if (!data.v_is_all_columns())
        throw VSubsetNotSupported("the T-Learner targets the CATE on all of X");

    CateModel model;
    model.learner_template = LearnerTemplate::t_learner;
    model.seed = seed;
    model.d_v = data.d_x();
    model.v_columns = data.v_columns;

    ArmPairModel pair;
    for (int arm = 0; arm <= 1; ++arm) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < data.n(); ++i)
            if (data.a[i] == arm) rows.push_back(i);
        const Matrix x_arm = detail::gather_rows(data.x, rows);
        const auto y_arm = detail::gather<double>(data.y, rows);
        const std::vector<double> ones(rows.size(), 1.0);
        RegressionModel fitted = detail::fit_selected_regressor(
            specs, x_arm, y_arm, ones, k,
            derive_seed(seed, 0x7E0 + static_cast<std::uint64_t>(arm)));
        (arm == 0 ? pair.q0 : pair.q1) = std::move(fitted);
        model.second_stage_choices.push_back((arm == 0 ? pair.q0 : pair.q1).spec);
    }
    model.fold_models.emplace_back(std::move(pair));
    return model;
}

// Cross-fitted IPW-Learner: out-of-fold propensities, then a unit-weight
// second-stage regression of the IPW pseudo-outcome on V in each held-out
// fold.
inline CateModel fit_ipw_learner(const Dataset& data,
                                 const OrthogonalFitConfig& config) {
    data.validate();
    config.validate();
    detail::check_both_arms(data);

    const FoldAssignment folds = detail::stratified_kfold(
        data.a, config.k_folds, derive_seed(config.seed, 0xF01D));
    std::vector<double> pi_hat;
    if (config.oracle_nuisances) {
        if (config.oracle_nuisances->n() != data.n())
            throw LengthMismatch("oracle nuisances cover a different n");
        pi_hat = config.oracle_nuisances->pi_hat;
    } else {
        pi_hat = crossfit_propensity(data, config, folds);
    }

    const Matrix v = v_matrix(data);
    CateModel model;
    model.learner_template = LearnerTemplate::ipw;
    model.folds = folds;
    model.eps = config.eps;
    model.seed = config.seed;
    model.d_v = data.d_v();
    model.v_columns = data.v_columns;

    for (int f = 0; f < folds.k; ++f) {
        const auto held = detail::rows_of_fold(folds, f, false);
        std::vector<double> phi(held.size());
        for (std::size_t r = 0; r < held.size(); ++r) {
            const std::size_t i = held[r];
            phi[r] = ipw_pseudo_outcome(data.y[i], data.a[i], pi_hat[i]);
        }
        const Matrix v_held = detail::gather_rows(v, held);
        const std::vector<double> ones(held.size(), 1.0);
        const LearnerSpec spec = detail::choose_spec(
            config.second_stage_specs, v_held, phi, ones, config.k_folds,
            derive_seed(config.seed, 0x200 + static_cast<std::uint64_t>(f)));
        model.second_stage_choices.push_back(spec);
        model.fold_models.emplace_back(fit_regressor(spec, v_held, phi, ones));
    }
    return model;
}

// Weighted orthogonal two-stage learner (DR / psDR / R / control-DR /
// smoothed, by weight kind). For each fold: nuisances come from the other
// K-1 folds, the held-out fold supplies pseudo-outcomes and second-stage
// observation weights, rows with vanishing weight drop out, and a weighted
// regression of the pseudo-outcome on V is fitted.
inline CateModel fit_orthogonal_learner(const Dataset& data,
                                        const OrthogonalFitConfig& config) {
    data.validate();
    config.validate();
    detail::check_both_arms(data);

    const bool restrict_treated =
        config.restrict_to_treated ||
        config.weight_kind.family == WeightFamily::propensity;

    const FoldAssignment folds = detail::stratified_kfold(
        data.a, config.k_folds, derive_seed(config.seed, 0xF01D));
    const NuisanceEstimates eta = detail::resolve_nuisances(data, config, folds);
    const Matrix v = v_matrix(data);

    CateModel model;
    model.learner_template = LearnerTemplate::orthogonal;
    model.folds = folds;
    model.weight_kind = config.weight_kind;
    model.eps = config.eps;
    model.seed = config.seed;
    model.d_v = data.d_v();
    model.v_columns = data.v_columns;
    model.restricted_to_treated = restrict_treated;

    for (int f = 0; f < folds.k; ++f) {
        const auto held = detail::rows_of_fold(folds, f, false);
        std::vector<std::size_t> kept;
        std::vector<double> phi, w;
        for (std::size_t i : held) {
            if (restrict_treated && data.a[i] != 1) continue;
            const double wi = second_stage_weight(data.a[i], eta.pi_hat[i],
                                                  config.weight_kind);
            if (std::abs(wi) < kZeroWeightTol) continue;
            kept.push_back(i);
            w.push_back(wi);
            phi.push_back(pseudo_outcome(data.y[i], data.a[i], eta.pi_hat[i],
                                         eta.q0_hat[i], eta.q1_hat[i],
                                         config.weight_kind));
        }
        if (kept.empty())
            throw EmptySecondStage("every weight vanished in fold " +
                                   std::to_string(f));
        const Matrix v_kept = detail::gather_rows(v, kept);
        const LearnerSpec spec = detail::choose_spec(
            config.second_stage_specs, v_kept, phi, w, config.k_folds,
            derive_seed(config.seed, 0x300 + static_cast<std::uint64_t>(f)));
        model.second_stage_choices.push_back(spec);
        model.fold_models.emplace_back(fit_regressor(spec, v_kept, phi, w));
    }
    return model;
}

// Average of the per-fold model predictions.
inline std::vector<double> predict_cate(const CateModel& model, const Matrix& v) {
    if (v.cols != model.d_v)
        throw DimensionMismatch("model expects d_v = " + std::to_string(model.d_v) +
                                ", got " + std::to_string(v.cols));
    std::vector<double> out(v.rows, 0.0);
    for (const CatePredictor& fm : model.fold_models) {
        if (const auto* reg = std::get_if<RegressionModel>(&fm)) {
            const std::vector<double> p = predict(*reg, v);
            for (std::size_t i = 0; i < v.rows; ++i) out[i] += p[i];
        } else {
            const auto& pair = std::get<ArmPairModel>(fm);
            const std::vector<double> p1 = predict(pair.q1, v);
            const std::vector<double> p0 = predict(pair.q0, v);
            for (std::size_t i = 0; i < v.rows; ++i) out[i] += p1[i] - p0[i];
        }
    }
    const double scale = 1.0 / static_cast<double>(model.fold_models.size());
    for (double& o : out) o *= scale;
    return out;
}

}  // namespace ortho_cate
