#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "softscore/score_model.hpp"

namespace softscore::io {

using json = nlohmann::json;

// Score definition documents. Unknown keys are rejected at every level.
ScoreDefinition definition_from_json(const json& doc);
json definition_to_json(const ScoreDefinition& def);
ScoreDefinition load_definition(const std::filesystem::path& path);

struct CohortReadResult {
    Cohort records;
    std::vector<std::string> warnings;
};

// Cohort CSV: header "id,age_months,outcome" then one column per variable.
// Empty cells are missing. Columns must name exactly the definition's variables.
CohortReadResult parse_cohort_csv(std::string_view text, const ScoreDefinition& def);
CohortReadResult load_cohort(const std::filesystem::path& path, const ScoreDefinition& def);
std::string format_cohort_csv(const Cohort& cohort, const ScoreDefinition& def);

// Parameters keyed by feature id (and band label for thresholds).
json parameters_to_json(const ScoreParameters& params, const ScoreDefinition& def);
ScoreParameters parameters_from_json(const json& doc, const ScoreDefinition& def);

// Shortest representation that round-trips to the same double.
std::string format_double(double value);

json load_json(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace softscore::io
