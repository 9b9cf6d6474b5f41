#pragma once

#include <span>
#include <string>
#include <vector>

#include "softscore/score_model.hpp"

namespace softscore {

struct ImputationMethod {
    enum class Kind { Knn, Mean, Normal };
    Kind kind = Kind::Knn;
    int k = 5;

    static ImputationMethod knn(int k = 5) { return {Kind::Knn, k}; }
    static ImputationMethod mean() { return {Kind::Mean, 0}; }
    static ImputationMethod normal() { return {Kind::Normal, 0}; }
    // "knn", "mean", or "normal". Throws ValidationError.
    static ImputationMethod parse(const std::string& name, int k = 5);
};

// Per-variable z-score parameters over observed values (sd = 1 when constant).
struct Standardization {
    std::vector<double> mean;
    std::vector<double> sd;
};

Standardization standardization(std::span<const PatientRecord> cohort, std::size_t variables);

// sqrt(sum of squared standardized differences over commonly observed
// variables) divided by the number of such variables; +inf when none.
double knn_distance(const PatientRecord& a, const PatientRecord& b, const Standardization& z);

// Returns a copy with every missing value filled. Binary variables are rounded
// to {0, 1} after averaging. Throws ValidationError when a variable is observed
// nowhere, when fewer than k other records observe it, or when normal-value
// imputation lacks a reference value.
Cohort impute(std::span<const PatientRecord> cohort, const ScoreDefinition& def, const ImputationMethod& method);

// L2-penalized logistic regression on a row-major design (n x p) with an
// unpenalized intercept: sum log(1 + exp(-y (b + x'beta))) + lambda ||beta||^2.
struct RidgeFit {
    std::vector<double> beta;
    double intercept = 0.0;
    std::vector<double> objective_trace;  // objective at every accepted iterate (non-increasing)
    int iterations = 0;
};

double ridge_objective(std::span<const double> x, std::size_t p, std::span<const int> labels, double lambda,
                       std::span<const double> beta, double intercept);

// Gradient: p coefficient entries then the intercept.
std::vector<double> ridge_gradient(std::span<const double> x, std::size_t p, std::span<const int> labels,
                                   double lambda, std::span<const double> beta, double intercept);

RidgeFit ridge_logistic_fit(std::span<const double> x, std::size_t p, std::span<const int> labels, double lambda);

// Raw-variable baseline: standardizes a complete cohort and fits the ridge model.
struct RidgeBaseline {
    Standardization scaling;
    RidgeFit model;
    double score(const PatientRecord& record) const;
};

RidgeBaseline fit_ridge_baseline(std::span<const PatientRecord> cohort, double lambda);

}  // namespace softscore
