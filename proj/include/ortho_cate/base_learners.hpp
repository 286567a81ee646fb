#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "ortho_cate/core.hpp"
#include "ortho_cate/errors.hpp"
#include "ortho_cate/linalg.hpp"
#include "ortho_cate/parse_util.hpp"

namespace ortho_cate {

enum class LearnerFamily { ridge_linear, knn_regression, boosted_stumps, logistic_ridge };

// Self-contained learner roster standing in for a stacked model library.
struct LearnerSpec {
    LearnerFamily family = LearnerFamily::ridge_linear;
    double l2 = 0.0;           // ridge_linear, logistic_ridge
    int degree = 1;            // ridge_linear: 1 or 2
    int k = 5;                 // knn_regression
    int rounds = 100;          // boosted_stumps
    double learning_rate = 0.1;  // boosted_stumps, in (0, 1]
    int max_bins = 32;         // boosted_stumps

    static LearnerSpec ridge(double l2, int degree = 1) {
        if (l2 < 0.0) throw InvalidParams("ridge l2 must be >= 0");
        if (degree != 1 && degree != 2) throw InvalidParams("ridge degree must be 1 or 2");
        LearnerSpec s;
        s.family = LearnerFamily::ridge_linear;
        s.l2 = l2;
        s.degree = degree;
        return s;
    }
    static LearnerSpec knn(int k) {
        if (k < 1) throw InvalidParams("knn k must be >= 1");
        LearnerSpec s;
        s.family = LearnerFamily::knn_regression;
        s.k = k;
        return s;
    }
    static LearnerSpec stumps(int rounds, double lr, int max_bins = 32) {
        if (rounds < 1) throw InvalidParams("stumps rounds must be >= 1");
        if (!(lr > 0.0 && lr <= 1.0)) throw InvalidParams("stumps lr must be in (0, 1]");
        if (max_bins < 2) throw InvalidParams("stumps max_bins must be >= 2");
        LearnerSpec s;
        s.family = LearnerFamily::boosted_stumps;
        s.rounds = rounds;
        s.learning_rate = lr;
        s.max_bins = max_bins;
        return s;
    }
    static LearnerSpec logistic(double l2) {
        if (l2 < 0.0) throw InvalidParams("logistic l2 must be >= 0");
        LearnerSpec s;
        s.family = LearnerFamily::logistic_ridge;
        s.l2 = l2;
        return s;
    }
};

inline std::string to_string(const LearnerSpec& s) {
    char buf[96];
    switch (s.family) {
        case LearnerFamily::ridge_linear:
            std::snprintf(buf, sizeof(buf), "ridge{l2=%g,degree=%d}", s.l2, s.degree);
            break;
        case LearnerFamily::knn_regression:
            std::snprintf(buf, sizeof(buf), "knn{k=%d}", s.k);
            break;
        case LearnerFamily::boosted_stumps:
            std::snprintf(buf, sizeof(buf), "stumps{rounds=%d,lr=%g,bins=%d}",
                          s.rounds, s.learning_rate, s.max_bins);
            break;
        case LearnerFamily::logistic_ridge:
            std::snprintf(buf, sizeof(buf), "logistic{l2=%g}", s.l2);
            break;
    }
    return buf;
}

// Accepts e.g. `ridge{l2=0.1,degree=2}`, `knn{k=25}`, `stumps{rounds=200,lr=0.1}`,
// `logistic{l2=0.5}`.
inline LearnerSpec parse_learner_spec(const std::string& text) {
    const detail::BracedSpec b = detail::parse_braced(text);
    if (b.name == "ridge")
        return LearnerSpec::ridge(b.get("l2", 0.0), static_cast<int>(b.get("degree", 1)));
    if (b.name == "knn") return LearnerSpec::knn(static_cast<int>(b.get("k", 5)));
    if (b.name == "stumps")
        return LearnerSpec::stumps(static_cast<int>(b.get("rounds", 100)),
                                   b.get("lr", 0.1),
                                   static_cast<int>(b.get("bins", 32)));
    if (b.name == "logistic") return LearnerSpec::logistic(b.get("l2", 0.0));
    throw InvalidParams("unknown learner spec '" + text + "'");
}

// ---------------------------------------------------------------------------
// Polynomial feature expansion (shared by ridge fit and predict).

inline std::size_t expanded_dim(std::size_t d, int degree) {
    return degree == 1 ? d : d + d * (d + 1) / 2;
}

// Writes [x..., {x_i * x_j for i <= j}...] into out.
inline void expand_row(std::span<const double> x, int degree, std::span<double> out) {
    std::size_t p = 0;
    for (double v : x) out[p++] = v;
    if (degree == 2)
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = i; j < x.size(); ++j) out[p++] = x[i] * x[j];
}

// ---------------------------------------------------------------------------
// Fitted states.

struct RidgeFit {
    int degree = 1;
    std::size_t d_in = 0;
    std::vector<double> coef;  // intercept first, then expanded features

    double predict_row(std::span<const double> x) const {
        std::vector<double> z(expanded_dim(d_in, degree));
        expand_row(x, degree, z);
        double s = coef[0];
        for (std::size_t j = 0; j < z.size(); ++j) s += coef[j + 1] * z[j];
        return s;
    }
};

struct KnnFit {
    Matrix x;
    std::vector<double> y;
    std::vector<double> w;
    int k = 1;

    double predict_row(std::span<const double> q) const {
        std::vector<std::pair<double, std::size_t>> dist(x.rows);
        for (std::size_t i = 0; i < x.rows; ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.cols; ++j) {
                const double diff = x(i, j) - q[j];
                d2 += diff * diff;
            }
            dist[i] = {d2, i};
        }
        const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), x.rows);
        std::nth_element(dist.begin(), dist.begin() + (kk - 1), dist.end());
        double sw = 0.0, swy = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < kk; ++i) {
            const std::size_t idx = dist[i].second;
            sw += w[idx];
            swy += w[idx] * y[idx];
            sy += y[idx];
        }
        return sw > 0.0 ? swy / sw : sy / static_cast<double>(kk);
    }
};

struct StumpsFit {
    struct Node {
        std::size_t feature = 0;
        int split_bin = 0;  // bins < split_bin go left
        double left = 0.0;
        double right = 0.0;
    };
    double base = 0.0;
    double learning_rate = 0.1;
    int n_bins = 32;
    std::vector<double> bin_lo;     // per feature
    std::vector<double> bin_width;  // per feature; 0 marks a constant feature
    std::vector<Node> nodes;

    int bin_of(std::size_t feature, double x) const {
        if (bin_width[feature] <= 0.0) return 0;
        const int b = static_cast<int>((x - bin_lo[feature]) / bin_width[feature]);
        return std::clamp(b, 0, n_bins - 1);
    }

    double predict_row(std::span<const double> x) const {
        double s = base;
        for (const Node& node : nodes) {
            const int b = bin_of(node.feature, x[node.feature]);
            s += learning_rate * (b < node.split_bin ? node.left : node.right);
        }
        return s;
    }
};

struct LogisticFit {
    std::size_t d_in = 0;
    std::vector<double> coef;  // intercept first

    double linear_predictor(std::span<const double> x) const {
        double z = coef[0];
        for (std::size_t j = 0; j < x.size(); ++j) z += coef[j + 1] * x[j];
        return z;
    }
};

class RegressionModel {
public:
    LearnerSpec spec;
    std::variant<RidgeFit, KnnFit, StumpsFit> state;

    std::size_t d_in() const {
        if (const auto* r = std::get_if<RidgeFit>(&state)) return r->d_in;
        if (const auto* k = std::get_if<KnnFit>(&state)) return k->x.cols;
        return std::get<StumpsFit>(state).bin_lo.size();
    }

    double predict_row(std::span<const double> x) const {
        if (const auto* r = std::get_if<RidgeFit>(&state)) return r->predict_row(x);
        if (const auto* k = std::get_if<KnnFit>(&state)) return k->predict_row(x);
        return std::get<StumpsFit>(state).predict_row(x);
    }
};

// Fitted propensity model; predictions always live in [eps, 1-eps].
class PropensityModel {
public:
    LearnerSpec spec;
    double eps = 0.01;
    std::variant<LogisticFit, RegressionModel> state;

    double predict_row(std::span<const double> x) const {
        double p;
        if (const auto* lf = std::get_if<LogisticFit>(&state)) {
            if (x.size() != lf->d_in)
                throw DimensionMismatch("propensity model expects " +
                                        std::to_string(lf->d_in) + " features");
            p = 1.0 / (1.0 + std::exp(-lf->linear_predictor(x)));
        } else {
            p = std::get<RegressionModel>(state).predict_row(x);
        }
        return std::clamp(p, eps, 1.0 - eps);
    }
};

namespace detail {

// Ridge solves a weighted quadratic and tolerates signed weights (steep
// smoothed-indicator learners produce negative second-stage weights on the
// sigmoid shoulders); the neighborhood and histogram learners need
// nonnegative mass.
inline void check_fit_inputs(const Matrix& x, std::span<const double> y,
                             std::span<const double> w, bool allow_signed) {
    if (x.rows != y.size() || x.rows != w.size())
        throw LengthMismatch("x rows, y, w lengths differ");
    if (x.rows == 0) throw InvalidParams("empty training set");
    double sw = 0.0;
    for (double wi : w) {
        if (!allow_signed && wi < 0.0)
            throw InvalidParams("negative observation weight");
        sw += wi;
    }
    if (!(sw > 0.0)) throw InvalidParams("sum of weights must be positive");
}

// Knn and stumps cannot produce anything but a constant when every carrying
// row sits at the same point.
inline void check_not_degenerate(const Matrix& x, std::span<const double> w) {
    std::size_t first = x.rows;
    for (std::size_t i = 0; i < x.rows; ++i)
        if (w[i] > 0.0) {
            first = i;
            break;
        }
    for (std::size_t i = first + 1; i < x.rows; ++i) {
        if (w[i] <= 0.0) continue;
        for (std::size_t j = 0; j < x.cols; ++j)
            if (x(i, j) != x(first, j)) return;
    }
    throw DegenerateDesign("all weight is on identical feature rows");
}

inline RidgeFit fit_ridge(const LearnerSpec& spec, const Matrix& x,
                          std::span<const double> y, std::span<const double> w) {
    const std::size_t d = x.cols;
    const std::size_t pe = expanded_dim(d, spec.degree);
    const std::size_t p = pe + 1;  // + intercept
    Matrix g(p, p);
    std::vector<double> b(p, 0.0);
    std::vector<double> z(p, 0.0);
    bool signed_weights = false;
    for (std::size_t i = 0; i < x.rows; ++i) {
        if (w[i] == 0.0) continue;
        if (w[i] < 0.0) signed_weights = true;
        z[0] = 1.0;
        expand_row(x.row(i), spec.degree, std::span<double>(z).subspan(1));
        for (std::size_t r = 0; r < p; ++r) {
            const double wz = w[i] * z[r];
            b[r] += wz * y[i];
            for (std::size_t c = 0; c <= r; ++c) g(r, c) += wz * z[c];
        }
    }
    for (std::size_t r = 0; r < p; ++r)
        for (std::size_t c = r + 1; c < p; ++c) g(r, c) = g(c, r);
    for (std::size_t j = 1; j < p; ++j) g(j, j) += spec.l2;  // intercept unpenalized
    RidgeFit fit;
    fit.degree = spec.degree;
    fit.d_in = d;
    try {
        fit.coef = solve_spd(g, b);
    } catch (const DegenerateDesign&) {
        if (signed_weights)
            throw DegenerateDesign(
                "weighted design is indefinite: the negative observation "
                "weights outweigh the positive curvature (steep smoothed "
                "indicators at small n); lower the steepness, raise l2, or "
                "use more data");
        throw;
    }
    return fit;
}

inline KnnFit fit_knn(const LearnerSpec& spec, const Matrix& x,
                      std::span<const double> y, std::span<const double> w) {
    check_not_degenerate(x, w);
    KnnFit fit;
    fit.x = x;
    fit.y.assign(y.begin(), y.end());
    fit.w.assign(w.begin(), w.end());
    fit.k = spec.k;
    return fit;
}

inline StumpsFit fit_stumps(const LearnerSpec& spec, const Matrix& x,
                            std::span<const double> y, std::span<const double> w) {
    check_not_degenerate(x, w);
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    const int nb = spec.max_bins;

    StumpsFit fit;
    fit.learning_rate = spec.learning_rate;
    fit.n_bins = nb;
    fit.bin_lo.resize(d);
    fit.bin_width.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        double lo = x(0, j), hi = x(0, j);
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, x(i, j));
            hi = std::max(hi, x(i, j));
        }
        fit.bin_lo[j] = lo;
        fit.bin_width[j] = hi > lo ? (hi - lo) / nb : 0.0;
    }

    // Per-row bin indices, computed once.
    std::vector<int> bins(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) bins[i * d + j] = fit.bin_of(j, x(i, j));

    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sw += w[i];
        swy += w[i] * y[i];
    }
    fit.base = swy / sw;

    std::vector<double> f(n, fit.base);
    std::vector<double> bw(nb), bs(nb);
    for (int round = 0; round < spec.rounds; ++round) {
        double best_gain = 0.0;
        StumpsFit::Node best;
        bool found = false;
        for (std::size_t j = 0; j < d; ++j) {
            if (fit.bin_width[j] <= 0.0) continue;
            std::fill(bw.begin(), bw.end(), 0.0);
            std::fill(bs.begin(), bs.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const int b = bins[i * d + j];
                bw[b] += w[i];
                bs[b] += w[i] * (y[i] - f[i]);
            }
            double wl = 0.0, sl = 0.0;
            const double wt = sw;
            double st = 0.0;
            for (int b = 0; b < nb; ++b) st += bs[b];
            const double base_gain = st * st / wt;
            for (int b = 1; b < nb; ++b) {
                wl += bw[b - 1];
                sl += bs[b - 1];
                const double wr = wt - wl;
                const double sr = st - sl;
                if (wl <= 0.0 || wr <= 0.0) continue;
                const double gain = sl * sl / wl + sr * sr / wr - base_gain;
                if (gain > best_gain) {
                    best_gain = gain;
                    best.feature = j;
                    best.split_bin = b;
                    best.left = sl / wl;
                    best.right = sr / wr;
                    found = true;
                }
            }
        }
        if (!found) break;
        fit.nodes.push_back(best);
        for (std::size_t i = 0; i < n; ++i) {
            const int b = bins[i * d + best.feature];
            f[i] += spec.learning_rate * (b < best.split_bin ? best.left : best.right);
        }
    }
    return fit;
}

inline LogisticFit fit_logistic(const LearnerSpec& spec, const Matrix& x,
                                std::span<const int> a) {
    const std::size_t n = x.rows;
    const std::size_t p = x.cols + 1;
    LogisticFit fit;
    fit.d_in = x.cols;
    fit.coef.assign(p, 0.0);

    auto objective = [&](const std::vector<double>& beta) {
        double nll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = beta[0];
            for (std::size_t j = 0; j < x.cols; ++j) z += beta[j + 1] * x(i, j);
            // log(1 + e^z) - a*z, computed stably
            nll += (z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) -
                   a[i] * z;
        }
        double pen = 0.0;
        for (std::size_t j = 1; j < p; ++j) pen += beta[j] * beta[j];
        return nll + 0.5 * spec.l2 * pen;
    };

    double obj = objective(fit.coef);
    std::vector<double> pvec(n), grad(p), z(p);
    for (int iter = 0; iter < 100; ++iter) {
        Matrix h(p, p);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double zi = fit.coef[0];
            for (std::size_t j = 0; j < x.cols; ++j) zi += fit.coef[j + 1] * x(i, j);
            const double pi = 1.0 / (1.0 + std::exp(-zi));
            pvec[i] = pi;
            const double wi = std::max(pi * (1.0 - pi), 1e-10);
            z[0] = 1.0;
            for (std::size_t j = 0; j < x.cols; ++j) z[j + 1] = x(i, j);
            const double resid = static_cast<double>(a[i]) - pi;
            for (std::size_t r = 0; r < p; ++r) {
                grad[r] += z[r] * resid;
                const double wz = wi * z[r];
                for (std::size_t c = 0; c <= r; ++c) h(r, c) += wz * z[c];
            }
        }
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t c = r + 1; c < p; ++c) h(r, c) = h(c, r);
        for (std::size_t j = 1; j < p; ++j) {
            h(j, j) += spec.l2;
            grad[j] -= spec.l2 * fit.coef[j];
        }
        const std::vector<double> step = solve_spd(h, grad);
        double gnorm = 0.0;
        for (double gv : grad) gnorm = std::max(gnorm, std::abs(gv));
        if (gnorm < 1e-9 * (1.0 + static_cast<double>(n))) break;

        double scale = 1.0;
        std::vector<double> trial = fit.coef;
        bool improved = false;
        for (int half = 0; half < 30; ++half) {
            for (std::size_t j = 0; j < p; ++j)
                trial[j] = fit.coef[j] + scale * step[j];
            const double trial_obj = objective(trial);
            if (trial_obj <= obj + 1e-12) {
                fit.coef = trial;
                improved = trial_obj < obj - 1e-12 * (1.0 + std::abs(obj));
                obj = trial_obj;
                break;
            }
            scale *= 0.5;
        }
        if (!improved) break;
    }
    return fit;
}

}  // namespace detail

// Weighted least-squares fit of the spec's hypothesis class. The spec's
// intrinsic regularizer (ridge penalty, neighborhood size, boosting rounds
// and shrinkage) realizes the penalty term of the risk.
inline RegressionModel fit_regressor(const LearnerSpec& spec, const Matrix& x,
                                     std::span<const double> y,
                                     std::span<const double> w) {
    detail::check_fit_inputs(x, y, w,
                             spec.family == LearnerFamily::ridge_linear);
    RegressionModel model;
    model.spec = spec;
    switch (spec.family) {
        case LearnerFamily::ridge_linear:
            model.state = detail::fit_ridge(spec, x, y, w);
            return model;
        case LearnerFamily::knn_regression:
            model.state = detail::fit_knn(spec, x, y, w);
            return model;
        case LearnerFamily::boosted_stumps:
            model.state = detail::fit_stumps(spec, x, y, w);
            return model;
        case LearnerFamily::logistic_ridge:
            throw InvalidParams("logistic_ridge is a propensity learner; use fit_propensity");
    }
    throw InvalidParams("unknown learner family");
}

inline std::vector<double> predict(const RegressionModel& model, const Matrix& x) {
    if (x.cols != model.d_in())
        throw DimensionMismatch("model expects " + std::to_string(model.d_in()) +
                                " features, got " + std::to_string(x.cols));
    std::vector<double> out(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) out[i] = model.predict_row(x.row(i));
    return out;
}

// Probability model for P(A=1|X), predictions clipped to [eps, 1-eps].
// Non-logistic specs fit the binary labels as a regression and rely on the
// clipping.
inline PropensityModel fit_propensity(const LearnerSpec& spec, const Matrix& x,
                                      std::span<const int> a, double eps) {
    if (!(eps > 0.0 && eps < 0.5)) throw InvalidParams("eps must be in (0, 0.5)");
    if (x.rows != a.size()) throw LengthMismatch("x rows and a length differ");
    if (x.rows == 0) throw InvalidParams("empty training set");
    bool any0 = false, any1 = false;
    for (int ai : a) {
        if (ai == 0) any0 = true;
        else if (ai == 1) any1 = true;
        else throw NonBinaryTreatment("a contains " + std::to_string(ai));
    }
    if (!any0 || !any1) throw SingleClass("both treatment classes are required");

    PropensityModel model;
    model.spec = spec;
    model.eps = eps;
    if (spec.family == LearnerFamily::logistic_ridge) {
        model.state = detail::fit_logistic(spec, x, a);
    } else {
        std::vector<double> yd(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) yd[i] = static_cast<double>(a[i]);
        const std::vector<double> ones(a.size(), 1.0);
        model.state = fit_regressor(spec, x, yd, ones);
    }
    return model;
}

inline std::vector<double> predict_propensity(const PropensityModel& model,
                                              const Matrix& x) {
    std::vector<double> out(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) out[i] = model.predict_row(x.row(i));
    return out;
}

// Picks the spec with the smallest weighted out-of-fold squared error; ties
// break toward the earlier list position. Logistic specs join the comparison
// through their Brier score when the targets are binary; a spec that fails
// to fit is excluded.
inline LearnerSpec select_by_validation(const std::vector<LearnerSpec>& specs,
                                        const Matrix& x, std::span<const double> y,
                                        std::span<const double> w,
                                        const FoldAssignment& folds) {
    if (specs.empty()) throw InvalidParams("spec list is empty");
    if (folds.n() != x.rows) throw LengthMismatch("folds cover a different n");
    if (specs.size() == 1) return specs[0];

    double best_score = std::numeric_limits<double>::infinity();
    int best_index = -1;
    for (std::size_t s = 0; s < specs.size(); ++s) {
        double score = 0.0;
        bool failed = false;
        for (int f = 0; f < folds.k && !failed; ++f) {
            std::vector<std::size_t> train_rows, test_rows;
            for (std::size_t i = 0; i < x.rows; ++i)
                (folds.fold_of[i] == f ? test_rows : train_rows).push_back(i);
            Matrix xt(train_rows.size(), x.cols);
            std::vector<double> yt(train_rows.size()), wt(train_rows.size());
            for (std::size_t r = 0; r < train_rows.size(); ++r) {
                for (std::size_t j = 0; j < x.cols; ++j) xt(r, j) = x(train_rows[r], j);
                yt[r] = y[train_rows[r]];
                wt[r] = w[train_rows[r]];
            }
            try {
                std::vector<double> pred;
                Matrix xv(test_rows.size(), x.cols);
                for (std::size_t r = 0; r < test_rows.size(); ++r)
                    for (std::size_t j = 0; j < x.cols; ++j)
                        xv(r, j) = x(test_rows[r], j);
                if (specs[s].family == LearnerFamily::logistic_ridge) {
                    std::vector<int> at(train_rows.size());
                    for (std::size_t r = 0; r < train_rows.size(); ++r) {
                        const double yv = yt[r];
                        if (yv != 0.0 && yv != 1.0)
                            throw InvalidParams("logistic spec needs binary targets");
                        at[r] = static_cast<int>(yv);
                    }
                    const PropensityModel m =
                        fit_propensity(specs[s], xt, at, 1e-6);
                    pred = predict_propensity(m, xv);
                } else {
                    const RegressionModel m = fit_regressor(specs[s], xt, yt, wt);
                    pred = predict(m, xv);
                }
                for (std::size_t r = 0; r < test_rows.size(); ++r) {
                    const double e = y[test_rows[r]] - pred[r];
                    score += w[test_rows[r]] * e * e;
                }
            } catch (const Error&) {
                failed = true;
            }
        }
        if (!failed && score < best_score) {
            best_score = score;
            best_index = static_cast<int>(s);
        }
    }
    if (best_index < 0) throw AllSpecsFailed("every candidate spec failed to fit");
    return specs[static_cast<std::size_t>(best_index)];
}

}  // namespace ortho_cate
