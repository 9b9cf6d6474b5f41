#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "softscore/score_model.hpp"

namespace softscore {

struct ValueDistribution {
    enum class Kind { Normal, Uniform, Bernoulli };
    Kind kind = Kind::Normal;
    double first = 0.0;   // mean, lo, or p
    double second = 1.0;  // sd or hi

    static ValueDistribution normal(double mean, double sd) { return {Kind::Normal, mean, sd}; }
    static ValueDistribution uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
    static ValueDistribution bernoulli(double p) { return {Kind::Bernoulli, p, 0.0}; }
};

struct GeneratorConfig {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    ScoreDefinition def;
    ScoreParameters true_params;
    // Exactly one of intercept / target_prevalence. A target prevalence is met
    // by solving for the intercept on the drawn covariates.
    std::optional<double> intercept;
    std::optional<double> target_prevalence;
    // Per variable: band label (or kAllAges) -> distribution.
    std::vector<std::map<std::string, ValueDistribution>> value_distributions;
    // Relative frequency per age band; uniform when empty.
    std::vector<double> age_weights;
    // Age range used when the definition has no age bands.
    int min_age_months = 0;
    int max_age_months = 216;
    double missing_rate = 0.0;

    // Throws ValidationError.
    void validate() const;
};

struct SyntheticCohort {
    Cohort cohort;
    std::vector<double> true_probability;
    double intercept = 0.0;
};

// Draw order per subject: age band, age, each variable's value, each
// variable's missingness; outcomes are drawn afterwards in subject order.
SyntheticCohort generate(const GeneratorConfig& config);

// Solves mean(sigmoid(b + s_i)) = prevalence for b by bisection.
double intercept_for_prevalence(const std::vector<double>& scores, double prevalence);

// Relative paths in the document resolve against base_dir.
GeneratorConfig generator_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

// id,true_probability
std::string truth_csv(const SyntheticCohort& cohort);

}  // namespace softscore
