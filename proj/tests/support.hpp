#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "softscore/random.hpp"
#include "softscore/score_model.hpp"

namespace testsupport {

using namespace softscore;

inline Feature step(std::size_t var, int index, std::vector<std::string> bands, std::vector<double> thresholds,
                    double weight, std::optional<std::string> or_group = std::nullopt)
{
    Feature f;
    f.variable = var;
    f.step_index = index;
    f.threshold_bands = std::move(bands);
    f.thresholds = std::move(thresholds);
    f.weight = weight;
    f.or_group = std::move(or_group);
    return f;
}

inline Feature indicator(std::size_t var, double weight)
{
    Feature f;
    f.variable = var;
    f.weight = weight;
    return f;
}

inline RawVariable variable(std::string name, VariableKind kind, double lo, double hi, std::optional<double> normal)
{
    return RawVariable{std::move(name), kind, "", lo, hi, normal};
}

// Two age bands, two-step heart rate and blood pressure blocks, a shared GCS
// threshold, and a pupil indicator. No OR-groups.
//   features: hr#1 hr#2 sbp#1 sbp#2 gcs#1 pupils
inline ScoreDefinition toy_definition()
{
    std::vector<RawVariable> vars = {
        variable("hr", VariableKind::Max, 0, 300, 110),
        variable("sbp", VariableKind::Min, 20, 250, 100),
        variable("gcs", VariableKind::Min, 3, 15, 15),
        variable("pupils", VariableKind::Binary, 0, 1, 0),
    };
    std::vector<AgeBand> bands = {{"young", 0, 144}, {"old", 144, 216}};
    std::vector<Feature> feats = {
        step(0, 1, {"young", "old"}, {180, 144.5}, 3),
        step(0, 2, {"young", "old"}, {200, 160}, 4),
        step(1, 1, {"young", "old"}, {70, 85}, 3),
        step(1, 2, {"young", "old"}, {50, 65}, 5),
        step(2, 1, {kAllAges}, {8}, 5),
        indicator(3, 7),
    };
    return ScoreDefinition::build("toy", vars, bands, feats);
}

// SOFA-like: platelets with two down-steps sharing one threshold per step,
// plus an OR-group over pH and bicarbonate.
inline ScoreDefinition or_definition(OrWeightSplit split = OrWeightSplit::Full)
{
    std::vector<RawVariable> vars = {
        variable("platelets", VariableKind::Min, 0, 1000, 250),
        variable("ph", VariableKind::Min, 6.5, 7.8, 7.4),
        variable("tco2", VariableKind::Min, 0, 50, 24),
    };
    std::vector<Feature> feats = {
        step(0, 1, {kAllAges}, {150}, 2),
        step(0, 2, {kAllAges}, {100}, 2),
        step(1, 1, {kAllAges}, {7.0}, 6, "acidosis"),
        step(2, 1, {kAllAges}, {5}, 6, "acidosis"),
    };
    return ScoreDefinition::build("or", vars, {}, feats, split);
}

inline PatientRecord record(std::string id, int age, int y, std::vector<std::optional<double>> values)
{
    return PatientRecord{std::move(id), age, y > 0 ? Outcome::Died : Outcome::Survived, std::move(values)};
}

// Values spread around the definition's thresholds; each cell missing with
// probability missing.
inline Cohort random_cohort(const ScoreDefinition& def, std::size_t n, Rng& rng, double missing = 0.0)
{
    Cohort out;
    const auto& vars = def.variables();
    int max_age = 216;
    for (const auto& b : def.age_bands()) max_age = std::max(max_age, b.max_age_months);
    for (std::size_t i = 0; i < n; ++i) {
        PatientRecord r;
        r.id = "R" + std::to_string(i);
        r.age_months = static_cast<int>(rng.index(static_cast<std::uint64_t>(max_age)));
        r.outcome = rng.uniform() < 0.5 ? Outcome::Died : Outcome::Survived;
        for (const auto& v : vars) {
            if (rng.uniform() < missing) {
                r.values.push_back(std::nullopt);
            } else if (v.kind == VariableKind::Binary) {
                r.values.push_back(rng.uniform() < 0.3 ? 1.0 : 0.0);
            } else {
                r.values.push_back(rng.uniform(v.range_lo, v.range_hi));
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::filesystem::path data_dir()
{
    if (const char* env = std::getenv("SOFTSCORE_DATA")) return env;
    return std::filesystem::path(__FILE__).parent_path().parent_path() / "data";
}

inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("softscore_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double relative_error(double a, double b)
{
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace testsupport
