#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "softscore/errors.hpp"
#include "softscore/imputation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace softscore;
using namespace testsupport;
using namespace oracles;

TEST_CASE("knn matches the brute-force oracle on a hand-built cohort")
{
    const auto def = toy_definition();
    const auto cohort = six_records();
    for (int k : {1, 2, 3, 4, 5}) {
        CAPTURE(k);
        const auto got = impute(cohort, def, ImputationMethod::knn(k));
        const auto want = brute_knn(cohort, def, static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            for (std::size_t v = 0; v < 4; ++v) {
                REQUIRE(got[i].values[v]);
                CHECK(*got[i].values[v] == *want[i].values[v]);
            }
        }
    }
    // Worked by hand for k = 1: r1 (missing sbp) is nearest to r5 once distances are standardized.
    CHECK(*impute(cohort, def, ImputationMethod::knn(1))[1].values[1] == 85.0);
}

TEST_CASE("knn with k = n - 1 is the observer mean")
{
    const auto def = toy_definition();
    const auto cohort = six_records();
    const auto knn = impute(cohort, def, ImputationMethod::knn(static_cast<int>(cohort.size()) - 1));
    const auto mean = impute(cohort, def, ImputationMethod::mean());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        for (std::size_t v = 0; v < 4; ++v) CHECK(std::abs(*knn[i].values[v] - *mean[i].values[v]) <= 1e-12);
    }
    // sbp observed values: 90, 70, 60, 110, 85
    CHECK(*mean[1].values[1] == doctest::Approx(83.0).epsilon(1e-15));
}

TEST_CASE("imputation basics")
{
    const auto def = toy_definition();
    SUBCASE("complete cohort is unchanged")
    {
        Cohort full = {record("a", 1, 1, {1.0, 2.0, 3.0, 0.0}), record("b", 1, -1, {4.0, 5.0, 6.0, 1.0})};
        for (auto m : {ImputationMethod::knn(), ImputationMethod::mean(), ImputationMethod::normal()}) {
            const auto out = impute(full, def, m);
            for (std::size_t i = 0; i < full.size(); ++i) CHECK(out[i].values == full[i].values);
        }
    }
    SUBCASE("single neighbour copies its value")
    {
        Cohort two = {record("a", 1, 1, {120.0, 80.0, 9.0, 1.0}), record("b", 1, -1, {130.0, none, 12.0, 0.0})};
        CHECK(*impute(two, def, ImputationMethod::knn(1))[1].values[1] == 80.0);
    }
    SUBCASE("normal values")
    {
        const auto out = impute(six_records(), def, ImputationMethod::normal());
        CHECK(*out[1].values[1] == 100.0);
        CHECK(*out[2].values[0] == 110.0);
        CHECK(*out[3].values[2] == 15.0);
        CHECK(*out[4].values[3] == 0.0);
    }
    SUBCASE("errors")
    {
        auto c = six_records();
        CHECK_THROWS_AS(impute(c, def, ImputationMethod::knn(6)), ValidationError);
        for (auto& r : c) r.values[0].reset();
        CHECK_THROWS_AS(impute(c, def, ImputationMethod::mean()), ValidationError);
        CHECK_THROWS_AS(impute(c, def, ImputationMethod::knn(1)), ValidationError);
        CHECK_THROWS_AS(ImputationMethod::parse("ppca"), ValidationError);
        CHECK_THROWS_AS(ImputationMethod::parse("knn", 0), ValidationError);
        CHECK(ImputationMethod::parse("knn").k == 5);

        std::vector<RawVariable> vars = {variable("x", VariableKind::Max, 0, 10, std::nullopt)};
        const auto bare = ScoreDefinition::build("bare", vars, {}, {step(0, 1, {kAllAges}, {5}, 1)});
        Cohort holes = {record("a", 1, 1, {1.0}), record("b", 1, -1, {none})};
        CHECK_THROWS_AS(impute(holes, bare, ImputationMethod::normal()), ValidationError);
    }
    SUBCASE("deterministic, idempotent, within the observed range")
    {
        Rng rng(5);
        const auto c = random_cohort(def, 80, rng, 0.25);
        for (auto m : {ImputationMethod::knn(), ImputationMethod::mean()}) {
            const auto once = impute(c, def, m);
            const auto twice = impute(once, def, m);
            for (std::size_t i = 0; i < c.size(); ++i) {
                CHECK(once[i].values == twice[i].values);
                CHECK(once[i].values == impute(c, def, m)[i].values);
            }
            for (std::size_t v = 0; v < 4; ++v) {
                double lo = 1e300, hi = -1e300;
                for (const auto& r : c)
                    if (r.values[v]) lo = std::min(lo, *r.values[v]), hi = std::max(hi, *r.values[v]);
                for (const auto& r : once) {
                    CHECK(*r.values[v] >= lo);
                    CHECK(*r.values[v] <= hi);
                }
            }
        }
    }
}

TEST_CASE("ridge logistic regression")
{
    Rng rng(8);
    const std::size_t n = 300, p = 3;
    std::vector<double> x(n * p);
    std::vector<int> y(n);
    double pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = -1.0;
        for (std::size_t j = 0; j < p; ++j) {
            x[i * p + j] = rng.normal();
            s += (j + 1.0) * 0.7 * x[i * p + j];
        }
        y[i] = rng.uniform() < mortality_probability(s) ? 1 : -1;
        pos += y[i] == 1;
    }

    SUBCASE("first-order optimality and monotone objective")
    {
        const auto fit = ridge_logistic_fit(x, p, y, 1.0);
        const auto g = ridge_gradient(x, p, y, 1.0, fit.beta, fit.intercept);
        double norm = 0.0;
        for (double v : g) norm += v * v;
        CHECK(std::sqrt(norm) < 1e-6);
        for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
            CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1]);
        }
        CHECK(fit.beta[2] > fit.beta[0]);
    }
    SUBCASE("huge penalty: weights vanish, intercept is the prevalence log-odds")
    {
        const auto fit = ridge_logistic_fit(x, p, y, 1e6);
        for (double b : fit.beta) CHECK(std::abs(b) < 1e-3);
        CHECK(fit.intercept == doctest::Approx(std::log(pos / (n - pos))).epsilon(1e-4));
    }
    SUBCASE("separable pair stays finite")
    {
        const auto fit = ridge_logistic_fit(std::vector<double>{1.0, -1.0}, 1, std::vector<int>{1, -1}, 1.0);
        CHECK(std::isfinite(fit.beta[0]));
        CHECK(fit.beta[0] > 0.0);
        CHECK(fit.beta[0] < 10.0);
    }
    SUBCASE("gradient matches finite differences")
    {
        const std::vector<double> beta = {0.3, -0.2, 0.5};
        const auto g = ridge_gradient(x, p, y, 2.0, beta, 0.1);
        const double h = 1e-6;
        for (std::size_t j = 0; j < p; ++j) {
            auto hi = beta, lo = beta;
            hi[j] += h;
            lo[j] -= h;
            const double fd = (ridge_objective(x, p, y, 2.0, hi, 0.1) - ridge_objective(x, p, y, 2.0, lo, 0.1)) / (2 * h);
            CHECK(relative_error(g[j], fd) < 1e-6);
        }
    }
    CHECK_THROWS_AS(ridge_logistic_fit(x, p, std::vector<int>(n, -1), 1.0), ValidationError);
}

TEST_CASE("ridge baseline on raw variables")
{
    const auto def = toy_definition();
    Rng rng(9);
    auto c = random_cohort(def, 200, rng, 0.0);
    for (auto& r : c) r.outcome = *r.values[0] > 150.0 ? Outcome::Died : Outcome::Survived;
    const auto model = fit_ridge_baseline(c, 0.5);
    CHECK(model.model.beta[0] > 1.0);
    std::size_t right = 0;
    for (const auto& r : c) right += (model.score(r) > 0) == (r.outcome == Outcome::Died);
    CHECK(right > 180);
    c[0].values[1].reset();
    CHECK_THROWS_AS(fit_ridge_baseline(c, 0.5), ValidationError);
}
