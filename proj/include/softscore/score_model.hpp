#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace softscore {

enum class VariableKind { Max, Min, Binary };
enum class StepDirection { Up, Down };

// Label of a threshold shared by every age band.
inline constexpr const char* kAllAges = "*";

struct RawVariable {
    std::string name;
    VariableKind kind = VariableKind::Max;
    std::string unit;
    double range_lo = 0.0;
    double range_hi = 1.0;
    std::optional<double> normal_value;
};

// Half-open age interval [min_age_months, max_age_months).
struct AgeBand {
    std::string label;
    int min_age_months = 0;
    int max_age_months = 0;

    bool contains(int age_months) const
    {
        return age_months >= min_age_months && age_months < max_age_months;
    }
};

// One additive term of the score. Step features carry a logistic transform
// with a slope and one threshold per age band; binary features are indicators.
struct Feature {
    std::string id;
    std::size_t variable = 0;
    bool binary = false;
    StepDirection direction = StepDirection::Up;
    int step_index = 0;
    std::vector<std::string> threshold_bands;  // band labels, or {kAllAges}
    std::vector<double> thresholds;            // hard thresholds, parallel to threshold_bands
    double weight = 1.0;
    std::optional<std::string> or_group;

    // Layout in ScoreParameters, assigned by ScoreDefinition.
    std::size_t slope_index = 0;
    std::size_t threshold_offset = 0;
};

// How an OR-group's point value is carried into the additive soft features.
enum class OrWeightSplit { Full, Even };

// Features of one raw variable, updated together in coordinate descent.
struct Block {
    std::size_t variable = 0;
    std::vector<std::size_t> features;  // ordered by step_index
};

struct ScoreParameters {
    std::vector<double> slopes;
    std::vector<double> thresholds;
    std::vector<double> weights;
    double intercept = 0.0;
};

class ScoreDefinition {
public:
    ScoreDefinition() = default;

    // Validates and derives the parameter layout. Throws ValidationError.
    static ScoreDefinition build(std::string name,
                                 std::vector<RawVariable> variables,
                                 std::vector<AgeBand> age_bands,
                                 std::vector<Feature> features,
                                 OrWeightSplit or_split = OrWeightSplit::Full);

    const std::string& name() const { return name_; }
    const std::vector<RawVariable>& variables() const { return variables_; }
    const std::vector<AgeBand>& age_bands() const { return age_bands_; }
    const std::vector<Feature>& features() const { return features_; }
    OrWeightSplit or_split() const { return or_split_; }

    std::size_t slope_count() const { return slope_count_; }
    std::size_t threshold_count() const { return threshold_count_; }
    std::size_t weight_count() const { return features_.size(); }

    // Step features grouped by raw variable.
    const std::vector<Block>& step_blocks() const { return step_blocks_; }
    // All features (steps and binaries) grouped by raw variable.
    const std::vector<Block>& weight_blocks() const { return weight_blocks_; }

    std::optional<std::size_t> variable_index(const std::string& name) const;
    std::optional<std::size_t> feature_index(const std::string& id) const;
    std::optional<std::size_t> band_index(int age_months) const;
    std::optional<std::size_t> band_index(const std::string& label) const;

    // Index into ScoreParameters::thresholds used for feature j at this age.
    // Throws ValidationError naming the feature when no band applies.
    std::size_t threshold_slot(std::size_t feature, int age_months) const;

    // Feature owning each threshold slot.
    const std::vector<std::size_t>& threshold_owner() const { return threshold_owner_; }

    // a = a_init, t = hard thresholds, w = point values (OR split applied).
    ScoreParameters initial_parameters(double a_init) const;

    // Throws ValidationError if lengths or sign constraints are violated.
    void check_parameters(const ScoreParameters& params) const;

private:
    std::string name_;
    std::vector<RawVariable> variables_;
    std::vector<AgeBand> age_bands_;
    std::vector<Feature> features_;
    OrWeightSplit or_split_ = OrWeightSplit::Full;
    std::size_t slope_count_ = 0;
    std::size_t threshold_count_ = 0;
    std::vector<Block> step_blocks_;
    std::vector<Block> weight_blocks_;
    std::vector<std::size_t> threshold_owner_;
    // Per feature: slot per age band (npos when undefined) or a shared slot.
    std::vector<std::vector<std::size_t>> band_slots_;
};

enum class Outcome : int { Survived = -1, Died = 1 };

inline double label_value(Outcome y) { return static_cast<double>(static_cast<int>(y)); }

struct PatientRecord {
    std::string id;
    int age_months = 0;
    Outcome outcome = Outcome::Survived;
    std::vector<std::optional<double>> values;  // aligned with ScoreDefinition::variables()
};

using Cohort = std::vector<PatientRecord>;

enum class Provenance { Transformed, MissingZero, Binary };

struct FeatureVector {
    std::vector<double> z;
    std::vector<Provenance> provenance;
};

// Logistic soft step. Throws std::invalid_argument for a < 0.
double transform_feature(std::optional<double> x, StepDirection direction, double a, double t);

FeatureVector transform_record(const PatientRecord& record, const ScoreDefinition& def,
                               const ScoreParameters& params);

double linear_score(std::span<const double> z, std::span<const double> weights);
inline double linear_score(const FeatureVector& z, std::span<const double> weights)
{
    return linear_score(std::span<const double>(z.z), weights);
}

double mortality_probability(double score);
double survival_probability(double score);

// Stepwise baseline. OR-groups contribute the largest triggered member weight.
double hard_score(const PatientRecord& record, const ScoreDefinition& def);

// Intercept plus weighted soft features.
double soft_score(const PatientRecord& record, const ScoreDefinition& def,
                  const ScoreParameters& params);

// Warnings for present values outside the variable's physiological range.
std::vector<std::string> range_warnings(std::span<const PatientRecord> cohort,
                                        const ScoreDefinition& def);

}  // namespace softscore
