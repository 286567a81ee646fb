#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ortho_cate/base_learners.hpp"
#include "ortho_cate/rng.hpp"

using namespace ortho_cate;

namespace {

Matrix column(const std::vector<double>& values) {
    Matrix x(values.size(), 1);
    for (std::size_t i = 0; i < values.size(); ++i) x(i, 0) = values[i];
    return x;
}

Matrix random_matrix(Rng& rng, std::size_t n, std::size_t d) {
    Matrix x(n, d);
    for (double& v : x.data) v = rng.normal();
    return x;
}

// Dense symmetric solve used as an independent oracle for the ridge fit.
std::vector<double> gauss_solve(Matrix a, std::vector<double> b) {
    const std::size_t n = a.rows;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(pivot, j));
        std::swap(b[col], b[pivot]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * x[j];
        x[ii] = s / a(ii, ii);
    }
    return x;
}

}  // namespace

TEST_CASE("ridge interpolates a line", "[baselearners]") {
    const Matrix x = column({1.0, 2.0, 3.0});
    const std::vector<double> y = {2.0, 4.0, 6.0};
    const std::vector<double> w(3, 1.0);
    const RegressionModel m = fit_regressor(LearnerSpec::ridge(0.0, 1), x, y, w);
    REQUIRE(predict(m, column({4.0}))[0] == Catch::Approx(8.0).margin(1e-9));
}

TEST_CASE("full-neighborhood knn is the weighted mean", "[baselearners]") {
    const Matrix x = column({0.0, 1.0, 2.0, 5.0});
    const std::vector<double> y = {1.0, 3.0, 5.0, 11.0};
    const std::vector<double> w = {1.0, 2.0, 1.0, 4.0};
    const RegressionModel m = fit_regressor(LearnerSpec::knn(4), x, y, w);
    const double expected = (1.0 + 6.0 + 5.0 + 44.0) / 8.0;
    REQUIRE(predict(m, column({-10.0}))[0] == Catch::Approx(expected).margin(1e-12));
    REQUIRE(predict(m, column({100.0}))[0] == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("a single carrying weight pins the fit through that point",
          "[baselearners]") {
    const Matrix x = column({2.0, -1.0, 4.0});
    const std::vector<double> y = {6.0, 100.0, -50.0};
    const std::vector<double> w = {1.0, 0.0, 0.0};
    const RegressionModel m = fit_regressor(LearnerSpec::ridge(0.0, 1), x, y, w);
    REQUIRE(predict(m, column({2.0}))[0] == Catch::Approx(6.0).margin(1e-6));
}

TEST_CASE("degree-2 ridge recovers a parabola", "[baselearners]") {
    std::vector<double> xs, ys;
    for (double v = -1.0; v <= 1.0001; v += 0.1) {
        xs.push_back(v);
        ys.push_back(v * v);
    }
    const std::vector<double> w(xs.size(), 1.0);
    const RegressionModel m =
        fit_regressor(LearnerSpec::ridge(1e-10, 2), column(xs), ys, w);
    REQUIRE(predict(m, column({0.5}))[0] == Catch::Approx(0.25).margin(1e-6));
}

TEST_CASE("constant targets give constant predictions", "[baselearners]") {
    Rng rng(4);
    const Matrix x = random_matrix(rng, 40, 3);
    const std::vector<double> y(40, 2.5);
    const std::vector<double> w(40, 1.0);
    for (const LearnerSpec& spec :
         {LearnerSpec::ridge(0.1, 1), LearnerSpec::knn(7),
          LearnerSpec::stumps(50, 0.5)}) {
        const RegressionModel m = fit_regressor(spec, x, y, w);
        Rng prng(5);
        const Matrix probe = random_matrix(prng, 10, 3);
        for (double p : predict(m, probe))
            REQUIRE(p == Catch::Approx(2.5).margin(1e-9));
    }
}

TEST_CASE("prediction is deterministic", "[baselearners]") {
    Rng rng(9);
    const Matrix x = random_matrix(rng, 60, 4);
    std::vector<double> y(60), w(60, 1.0);
    for (std::size_t i = 0; i < 60; ++i) y[i] = rng.normal();
    for (const LearnerSpec& spec :
         {LearnerSpec::ridge(0.5, 2), LearnerSpec::knn(3),
          LearnerSpec::stumps(80, 0.2)}) {
        const RegressionModel m = fit_regressor(spec, x, y, w);
        const Matrix probe = random_matrix(rng, 5, 4);
        REQUIRE(predict(m, probe) == predict(m, probe));
    }
}

TEST_CASE("ridge matches the closed-form normal equations", "[baselearners]") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 30;
        const std::size_t d = 3;
        const Matrix x = random_matrix(rng, n, d);
        std::vector<double> y(n), w(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.normal();
            w[i] = rng.uniform(0.1, 2.0);
        }
        const double l2 = 0.3;
        const RegressionModel m = fit_regressor(LearnerSpec::ridge(l2, 1), x, y, w);
        const auto& fit = std::get<RidgeFit>(m.state);

        // oracle: (Z'WZ + l2*D)^{-1} Z'Wy with Z = [1, x], D = diag(0,1,..,1)
        const std::size_t p = d + 1;
        Matrix g(p, p);
        std::vector<double> b(p, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> z(p, 1.0);
            for (std::size_t j = 0; j < d; ++j) z[j + 1] = x(i, j);
            for (std::size_t r = 0; r < p; ++r) {
                b[r] += w[i] * z[r] * y[i];
                for (std::size_t c = 0; c < p; ++c) g(r, c) += w[i] * z[r] * z[c];
            }
        }
        for (std::size_t j = 1; j < p; ++j) g(j, j) += l2;
        const std::vector<double> oracle = gauss_solve(g, b);
        for (std::size_t j = 0; j < p; ++j)
            REQUIRE(fit.coef[j] == Catch::Approx(oracle[j]).margin(1e-8));
    }
}

// Knn is excluded here: duplicating a row changes the neighborhood
// cardinality, so the equivalence cannot hold for it.
TEST_CASE("duplicating a row equals doubling its weight", "[baselearners]") {
    Rng rng(13);
    const std::size_t n = 50;
    const Matrix x = random_matrix(rng, n, 2);
    std::vector<double> y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.normal();
        w[i] = rng.uniform(0.5, 1.5);
    }
    // doubled weight on row 0
    std::vector<double> w2 = w;
    w2[0] *= 2.0;
    // duplicated row 0
    Matrix xd(n + 1, 2);
    std::vector<double> yd(n + 1), wd(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        xd(i, 0) = x(i, 0);
        xd(i, 1) = x(i, 1);
        yd[i] = y[i];
        wd[i] = w[i];
    }
    xd(n, 0) = x(0, 0);
    xd(n, 1) = x(0, 1);
    yd[n] = y[0];
    wd[n] = w[0];

    Rng prng(14);
    const Matrix probe = random_matrix(prng, 8, 2);
    for (const LearnerSpec& spec :
         {LearnerSpec::ridge(0.2, 2), LearnerSpec::stumps(60, 0.3)}) {
        const RegressionModel doubled = fit_regressor(spec, x, y, w2);
        const RegressionModel duplicated = fit_regressor(spec, xd, yd, wd);
        const auto pa = predict(doubled, probe);
        const auto pb = predict(duplicated, probe);
        for (std::size_t i = 0; i < pa.size(); ++i)
            REQUIRE(pa[i] == Catch::Approx(pb[i]).margin(1e-9 * (1.0 + std::abs(pa[i]))));
    }
}

TEST_CASE("propensity predictions never leave the clipping band", "[baselearners]") {
    Rng rng(17);
    for (const LearnerSpec& spec :
         {LearnerSpec::logistic(0.0), LearnerSpec::logistic(1.0),
          LearnerSpec::ridge(1e-6, 1), LearnerSpec::knn(1),
          LearnerSpec::stumps(100, 1.0)}) {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t n = 40;
            Matrix x = random_matrix(rng, n, 2);
            std::vector<int> a(n);
            // perfectly separable: a = 1 exactly when x0 > 0
            for (std::size_t i = 0; i < n; ++i) a[i] = x(i, 0) > 0.0 ? 1 : 0;
            if (std::count(a.begin(), a.end(), 1) == 0 ||
                std::count(a.begin(), a.end(), 0) == 0)
                continue;
            const double eps = 0.01;
            const PropensityModel m = fit_propensity(spec, x, a, eps);
            const Matrix probe = random_matrix(rng, 30, 2);
            for (double p : predict_propensity(m, probe)) {
                REQUIRE(p >= eps);
                REQUIRE(p <= 1.0 - eps);
            }
        }
    }
}

TEST_CASE("near-constant logistic ridge shrinks to the base rate", "[baselearners]") {
    Rng rng(19);
    const std::size_t n = 400;
    const Matrix x = random_matrix(rng, n, 3);
    std::vector<int> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = rng.bernoulli(0.3);
    const double base = static_cast<double>(std::count(a.begin(), a.end(), 1)) /
                        static_cast<double>(n);
    const PropensityModel m = fit_propensity(LearnerSpec::logistic(1e5), x, a, 0.001);
    const Matrix probe = random_matrix(rng, 20, 3);
    for (double p : predict_propensity(m, probe))
        REQUIRE(p == Catch::Approx(base).margin(0.05));
}

TEST_CASE("single-class data is rejected", "[baselearners]") {
    Rng rng(23);
    const Matrix x = random_matrix(rng, 10, 2);
    const std::vector<int> ones(10, 1);
    CHECK_THROWS_AS(fit_propensity(LearnerSpec::logistic(0.1), x, ones, 0.01),
                    SingleClass);
}

TEST_CASE("degenerate designs are rejected for knn and stumps", "[baselearners]") {
    Matrix x(4, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = -2.0;
    }
    const std::vector<double> y = {1.0, 2.0, 3.0, 4.0};
    const std::vector<double> w(4, 1.0);
    CHECK_THROWS_AS(fit_regressor(LearnerSpec::knn(2), x, y, w), DegenerateDesign);
    CHECK_THROWS_AS(fit_regressor(LearnerSpec::stumps(10, 0.5), x, y, w),
                    DegenerateDesign);
    // ridge with a penalty shrugs it off
    REQUIRE_NOTHROW(fit_regressor(LearnerSpec::ridge(0.1, 1), x, y, w));
}

TEST_CASE("predict validates the feature count", "[baselearners]") {
    const Matrix x = column({1.0, 2.0, 3.0});
    const std::vector<double> y = {1.0, 2.0, 3.0};
    const std::vector<double> w(3, 1.0);
    const RegressionModel m = fit_regressor(LearnerSpec::ridge(0.1, 1), x, y, w);
    Matrix wide(1, 2);
    CHECK_THROWS_AS(predict(m, wide), DimensionMismatch);
}

TEST_CASE("validation selection prefers the right inductive bias", "[baselearners]") {
    int ridge_wins = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const std::size_t n = 200;
        const Matrix x = random_matrix(rng, n, 2);
        std::vector<double> y(n), w(n, 1.0);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = 1.0 + 2.0 * x(i, 0) - x(i, 1) + 0.1 * rng.normal();
        const std::vector<LearnerSpec> specs = {LearnerSpec::ridge(1e-3, 1),
                                                LearnerSpec::knn(1)};
        const FoldAssignment folds = kfold_assign(n, 5, seed);
        const LearnerSpec chosen = select_by_validation(specs, x, y, w, folds);
        if (chosen.family == LearnerFamily::ridge_linear) ++ridge_wins;
    }
    REQUIRE(ridge_wins > 10);
}

TEST_CASE("validation selection tie-break and edge cases", "[baselearners]") {
    Rng rng(3);
    const std::size_t n = 30;
    const Matrix x = random_matrix(rng, n, 1);
    std::vector<double> y(n), w(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) y[i] = rng.normal();
    const FoldAssignment folds = kfold_assign(n, 3, 5);

    const LearnerSpec single =
        select_by_validation({LearnerSpec::knn(2)}, x, y, w, folds);
    REQUIRE(single.family == LearnerFamily::knn_regression);

    // identical specs with different tags resolve to the first
    const LearnerSpec tie = select_by_validation(
        {LearnerSpec::ridge(0.5, 1), LearnerSpec::ridge(0.5, 1)}, x, y, w, folds);
    REQUIRE(tie.l2 == 0.5);

    // a spec that always fails is excluded; all failing is an error
    const LearnerSpec rescued = select_by_validation(
        {LearnerSpec::logistic(0.1), LearnerSpec::ridge(0.5, 1)}, x, y, w, folds);
    REQUIRE(rescued.family == LearnerFamily::ridge_linear);
    CHECK_THROWS_AS(
        select_by_validation({LearnerSpec::logistic(0.1), LearnerSpec::logistic(1.0)},
                             x, y, w, folds),
        AllSpecsFailed);
}

TEST_CASE("learner specs parse and print", "[baselearners]") {
    const LearnerSpec r = parse_learner_spec("ridge{l2=0.1,degree=2}");
    REQUIRE(r.family == LearnerFamily::ridge_linear);
    REQUIRE(r.l2 == 0.1);
    REQUIRE(r.degree == 2);
    REQUIRE(parse_learner_spec("knn{k=25}").k == 25);
    const LearnerSpec s = parse_learner_spec("stumps{rounds=200,lr=0.1}");
    REQUIRE(s.rounds == 200);
    REQUIRE(s.learning_rate == 0.1);
    REQUIRE(s.max_bins == 32);
    REQUIRE(parse_learner_spec("logistic{l2=0.5}").l2 == 0.5);
    REQUIRE(parse_learner_spec(to_string(s)).rounds == 200);
    CHECK_THROWS_AS(parse_learner_spec("forest{trees=10}"), InvalidParams);
    CHECK_THROWS_AS(parse_learner_spec("ridge{l2=-1}"), InvalidParams);
    CHECK_THROWS_AS(parse_learner_spec("stumps{rounds=0,lr=0.1}"), InvalidParams);
}
