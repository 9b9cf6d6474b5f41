#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "softscore/score_model.hpp"

namespace softscore::detail {

// Cohort resolved against a definition: raw values, observation mask, and
// threshold slot per (patient, feature), stored row-major.
struct Design {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> y;
    std::vector<double> x;
    std::vector<std::uint8_t> observed;
    std::vector<std::size_t> slot;

    Design(const ScoreDefinition& def, std::span<const PatientRecord> cohort);

    std::size_t at(std::size_t i, std::size_t j) const { return i * m + j; }
};

// z for one entry under params.
double feature_value(const Design& d, const ScoreDefinition& def, const ScoreParameters& params, std::size_t i,
                     std::size_t j);

std::vector<double> feature_matrix(const Design& d, const ScoreDefinition& def, const ScoreParameters& params);

std::vector<double> scores_from(const Design& d, std::span<const double> z, const ScoreParameters& params);

double nll_from_scores(const Design& d, std::span<const double> scores);

// dNLL/ds_i = -y_i * sigmoid(-y_i s_i)
std::vector<double> score_residuals(const Design& d, std::span<const double> scores);

// dz/da and dz/dt for a transformed entry.
double dz_dslope(const Feature& f, double a, double x, double t);
double dz_dthreshold(const Feature& f, double a, double x, double t);

}  // namespace softscore::detail
