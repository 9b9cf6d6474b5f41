#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "softscore/errors.hpp"
#include "softscore/io.hpp"
#include "softscore/synthetic.hpp"
#include "support.hpp"

using namespace softscore;
using namespace testsupport;

namespace {

GeneratorConfig toy_config(std::size_t n, std::uint64_t seed, double missing)
{
    GeneratorConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    cfg.def = toy_definition();
    cfg.true_params = cfg.def.initial_parameters(0.3);
    for (auto& w : cfg.true_params.weights) w *= 0.4;
    cfg.target_prevalence = 0.07;
    cfg.missing_rate = missing;
    cfg.value_distributions = {
        {{"young", ValueDistribution::normal(150, 30)}, {"old", ValueDistribution::normal(110, 25)}},
        {{kAllAges, ValueDistribution::normal(90, 20)}},
        {{kAllAges, ValueDistribution::uniform(3, 15)}},
        {{kAllAges, ValueDistribution::bernoulli(0.1)}},
    };
    return cfg;
}

}  // namespace

TEST_CASE("generated values respect ranges and missingness")
{
    const auto cfg = toy_config(3000, 1, 0.0);
    const auto out = generate(cfg);
    REQUIRE(out.cohort.size() == 3000);
    REQUIRE(out.true_probability.size() == 3000);
    for (const auto& r : out.cohort) {
        CHECK(cfg.def.band_index(r.age_months));
        for (std::size_t v = 0; v < 4; ++v) {
            REQUIRE(r.values[v]);
            const auto& var = cfg.def.variables()[v];
            CHECK(*r.values[v] >= var.range_lo);
            CHECK(*r.values[v] <= var.range_hi);
        }
        CHECK((*r.values[3] == 0.0 || *r.values[3] == 1.0));
    }

    const auto masked = generate(toy_config(3000, 1, 0.2));
    double holes = 0;
    for (const auto& r : masked.cohort)
        for (const auto& v : r.values) holes += !v;
    const double rate = holes / (3000.0 * 4);
    // binomial sd of the rate is about 0.0037
    CHECK(std::abs(rate - 0.2) < 0.015);
}

TEST_CASE("true probabilities come from the masked record")
{
    const auto cfg = toy_config(500, 2, 0.3);
    const auto out = generate(cfg);
    auto params = cfg.true_params;
    params.intercept = out.intercept;
    for (std::size_t i = 0; i < out.cohort.size(); ++i) {
        CHECK(out.true_probability[i] == mortality_probability(soft_score(out.cohort[i], cfg.def, params)));
    }
}

TEST_CASE("target prevalence")
{
    const auto out = generate(toy_config(10000, 3, 0.2));
    double mean_p = 0.0, deaths = 0.0;
    for (std::size_t i = 0; i < out.cohort.size(); ++i) {
        mean_p += out.true_probability[i];
        deaths += out.cohort[i].outcome == Outcome::Died;
    }
    mean_p /= 10000.0;
    CHECK(mean_p == doctest::Approx(0.07).epsilon(1e-9));
    const double se = std::sqrt(0.07 * 0.93 / 10000.0);
    CHECK(std::abs(deaths / 10000.0 - mean_p) < 3 * se);

    const std::vector<double> scores = {-1.0, 0.0, 2.0, 0.5};
    const double b = intercept_for_prevalence(scores, 0.3);
    double m = 0.0;
    for (double s : scores) m += mortality_probability(b + s);
    CHECK(m / 4 == doctest::Approx(0.3).epsilon(1e-10));
}

TEST_CASE("same seed, same cohort")
{
    const auto cfg = toy_config(400, 4, 0.2);
    const auto a = generate(cfg), b = generate(cfg);
    CHECK(io::format_cohort_csv(a.cohort, cfg.def) == io::format_cohort_csv(b.cohort, cfg.def));
    CHECK(truth_csv(a) == truth_csv(b));
    auto other = cfg;
    other.seed = 5;
    CHECK(io::format_cohort_csv(generate(other).cohort, cfg.def) != io::format_cohort_csv(a.cohort, cfg.def));
}

TEST_CASE("fixed intercept")
{
    auto cfg = toy_config(200, 6, 0.0);
    cfg.target_prevalence.reset();
    cfg.intercept = -2.5;
    CHECK(generate(cfg).intercept == -2.5);
}

TEST_CASE("config validation and JSON loading")
{
    auto cfg = toy_config(10, 1, 0.0);
    cfg.missing_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = toy_config(10, 1, 0.0);
    cfg.intercept = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = toy_config(10, 1, 0.0);
    cfg.value_distributions[0].clear();
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = toy_config(10, 1, 0.0);
    cfg.value_distributions[1][kAllAges] = ValueDistribution::normal(90, -1);
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    const auto path = data_dir() / "demo_generator.json";
    auto doc = io::load_json(path);
    const auto loaded = generator_config_from_json(doc, path.parent_path());
    CHECK(loaded.n == 2000);
    CHECK(loaded.def.features().size() == 10);
    CHECK(loaded.missing_rate == 0.2);

    doc["extra"] = 1;
    CHECK_THROWS_AS(generator_config_from_json(doc, path.parent_path()), ValidationError);
    doc.erase("extra");
    doc["true_params"]["slopes"]["nope#1"] = 1.0;
    CHECK_THROWS_AS(generator_config_from_json(doc, path.parent_path()), ValidationError);
}
