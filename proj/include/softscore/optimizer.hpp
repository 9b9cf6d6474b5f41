#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softscore/score_model.hpp"

namespace softscore {

enum class ParamKind { Slopes, Thresholds, Weights, Intercept };

const char* param_kind_name(ParamKind kind);

// Parses "a,t,w" style lists. Throws ValidationError on unknown or repeated names.
std::vector<ParamKind> parse_param_kinds(const std::string& list);

struct OptimizerConfig {
    // Parameter kinds to optimize, in the order one outer cycle visits them.
    std::vector<ParamKind> order = {ParamKind::Slopes, ParamKind::Weights};
    double alpha = 0.2;
    double beta = 0.5;
    std::optional<double> beta_thresholds;  // line-search shrink factor for t; beta when unset
    std::vector<double> prior_mu = {0.0};   // a single entry is broadcast
    double prior_lambda = 0.25;
    double a_init = 0.01;
    int max_outer_iters = 500;
    double rel_tol = 1e-6;
    std::uint64_t seed = 0;
    // Unpenalized additive offset updated once per outer cycle.
    bool fit_intercept = true;
    int max_halvings = 60;

    bool optimizes(ParamKind kind) const;
    double prior_mean(std::size_t j) const { return prior_mu.size() == 1 ? prior_mu.front() : prior_mu.at(j); }
    // Throws ValidationError.
    void validate(std::size_t weight_count) const;
};

struct TraceStep {
    int outer_iteration = 0;
    ParamKind kind = ParamKind::Slopes;
    std::size_t block = 0;
    double objective_before = 0.0;
    double objective_after = 0.0;
    double step = 0.0;
};

struct FitTrace {
    std::vector<TraceStep> steps;            // accepted block steps only
    std::vector<double> cycle_objectives;    // objective after each outer cycle
    double initial_objective = 0.0;
    double final_objective = 0.0;
    int iterations = 0;
    std::string convergence;                 // "relative_tolerance" or "max_iterations"
    int stalled_steps = 0;                   // line searches that gave up (h = 0)
    std::vector<std::string> warnings;
};

struct FitResult {
    ScoreParameters params;
    FitTrace trace;
};

// Sum over patients of log(1 + exp(-y (b + w'z))). Requires a non-empty cohort.
double negative_log_likelihood(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                               const ScoreDefinition& def);

// sum_j log w_j + lambda * ||log w - mu||^2. Throws ValidationError for w_j <= 0.
double log_weight_prior(std::span<const double> weights, const OptimizerConfig& config);

// Negative log-likelihood plus the lognormal weight prior.
double penalized_objective(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                           const ScoreDefinition& def, const OptimizerConfig& config);

std::vector<double> gradient_slopes(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                                    const ScoreDefinition& def);
std::vector<double> gradient_thresholds(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                                        const ScoreDefinition& def);
// Gradient of penalized_objective in v = log w. An empty cohort leaves only the prior.
std::vector<double> gradient_log_weights(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                                         const ScoreDefinition& def, const OptimizerConfig& config);
double gradient_intercept(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                          const ScoreDefinition& def);

using Objective = std::function<double(std::span<const double>)>;

// Largest h in {1, beta, beta^2, ...} with f(x + h d) <= f(x) - alpha h ||d||^2;
// 0 after max_halvings failed reductions.
double backtracking_step(const Objective& f, std::span<const double> x, std::span<const double> direction,
                         double alpha, double beta, int max_halvings = 60);

// General sufficient-decrease form: f(x + h d) <= f_x - alpha h * decrease, where
// decrease = -grad'd (equal to ||d||^2 for the steepest-descent direction).
double armijo_backtrack(const Objective& f, std::span<const double> x, std::span<const double> direction,
                        double f_x, double decrease, double alpha, double beta, int max_halvings = 60);

std::vector<double> project_slopes(std::span<const double> slopes);

// Least-squares projection onto non-decreasing sequences (pool adjacent violators).
std::vector<double> isotonic_nondecreasing(std::span<const double> values);

// Per block and age band, projects thresholds onto the step order of the definition.
std::vector<double> project_thresholds(std::span<const double> thresholds, const ScoreDefinition& def);

// True when every block and band respects the (non-strict) step order.
bool thresholds_ordered(std::span<const double> thresholds, const ScoreDefinition& def);

// Starts from the definition (a = a_init, hard thresholds, point weights, zero intercept).
FitResult fit(std::span<const PatientRecord> cohort, const ScoreDefinition& def, const OptimizerConfig& config);
FitResult fit_from(std::span<const PatientRecord> cohort, const ScoreDefinition& def, const OptimizerConfig& config,
                   ScoreParameters initial);

}  // namespace softscore
