#include "softscore/score_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "softscore/errors.hpp"
#include "softscore/numeric.hpp"

namespace softscore {

namespace {

constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

bool is_shared(const Feature& f)
{
    return f.threshold_bands.size() == 1 && f.threshold_bands.front() == kAllAges;
}

}  // namespace

ScoreDefinition ScoreDefinition::build(std::string name,
                                       std::vector<RawVariable> variables,
                                       std::vector<AgeBand> age_bands,
                                       std::vector<Feature> features,
                                       OrWeightSplit or_split)
{
    ScoreDefinition def;
    def.name_ = std::move(name);
    def.or_split_ = or_split;

    std::set<std::string> names;
    for (const auto& v : variables) {
        if (v.name.empty()) throw ValidationError("variable with empty name");
        if (!names.insert(v.name).second) throw ValidationError("duplicate variable '" + v.name + "'");
        if (!(v.range_lo < v.range_hi)) {
            throw ValidationError("variable '" + v.name + "': physiological range must satisfy lo < hi");
        }
        if (v.normal_value && (*v.normal_value < v.range_lo || *v.normal_value > v.range_hi)) {
            throw ValidationError("variable '" + v.name + "': normal value outside physiological range");
        }
    }

    std::set<std::string> band_labels;
    for (const auto& b : age_bands) {
        if (b.label.empty() || b.label == kAllAges) {
            throw ValidationError("invalid age band label '" + b.label + "'");
        }
        if (!band_labels.insert(b.label).second) throw ValidationError("duplicate age band '" + b.label + "'");
        if (b.min_age_months < 0 || b.min_age_months >= b.max_age_months) {
            throw ValidationError("age band '" + b.label + "' must satisfy 0 <= min < max");
        }
    }
    {
        auto sorted = age_bands;
        std::sort(sorted.begin(), sorted.end(),
                  [](const AgeBand& a, const AgeBand& b) { return a.min_age_months < b.min_age_months; });
        for (std::size_t i = 1; i < sorted.size(); ++i) {
            if (sorted[i].min_age_months < sorted[i - 1].max_age_months) {
                throw ValidationError("age bands '" + sorted[i - 1].label + "' and '" + sorted[i].label +
                                      "' overlap");
            }
        }
    }

    std::set<std::string> ids;
    for (auto& f : features) {
        if (f.variable >= variables.size()) throw ValidationError("feature refers to unknown variable");
        const auto& var = variables[f.variable];
        f.binary = var.kind == VariableKind::Binary;
        if (f.binary) {
            if (!f.thresholds.empty() || !f.threshold_bands.empty()) {
                throw ValidationError("binary feature on '" + var.name + "' cannot carry thresholds");
            }
            f.id = var.name;
        } else {
            f.direction = var.kind == VariableKind::Max ? StepDirection::Up : StepDirection::Down;
            f.id = var.name + "#" + std::to_string(f.step_index);
            if (f.thresholds.empty() || f.thresholds.size() != f.threshold_bands.size()) {
                throw ValidationError("feature '" + f.id + "' needs one threshold per listed age band");
            }
            std::set<std::string> seen;
            for (const auto& label : f.threshold_bands) {
                if (label == kAllAges) {
                    if (f.threshold_bands.size() != 1) {
                        throw ValidationError("feature '" + f.id + "' mixes '*' with banded thresholds");
                    }
                } else if (!band_labels.count(label)) {
                    throw ValidationError("feature '" + f.id + "' uses unknown age band '" + label + "'");
                }
                if (!seen.insert(label).second) {
                    throw ValidationError("feature '" + f.id + "' repeats age band '" + label + "'");
                }
            }
            for (double t : f.thresholds) {
                if (!std::isfinite(t)) throw ValidationError("feature '" + f.id + "' has a non-finite threshold");
            }
        }
        if (!(f.weight > 0.0) || !std::isfinite(f.weight)) {
            throw ValidationError("feature '" + f.id + "' must have a positive weight");
        }
        if (f.or_group && f.or_group->empty()) f.or_group.reset();
        if (!ids.insert(f.id).second) throw ValidationError("duplicate feature '" + f.id + "'");
    }

    // Parameter layout and band resolution tables.
    def.band_slots_.resize(features.size());
    for (std::size_t j = 0; j < features.size(); ++j) {
        auto& f = features[j];
        if (f.binary) continue;
        f.slope_index = def.slope_count_++;
        f.threshold_offset = def.threshold_count_;
        auto& slots = def.band_slots_[j];
        if (is_shared(f)) {
            slots.assign(1, def.threshold_count_);
        } else {
            slots.assign(age_bands.size(), npos);
            for (std::size_t k = 0; k < f.threshold_bands.size(); ++k) {
                for (std::size_t b = 0; b < age_bands.size(); ++b) {
                    if (age_bands[b].label == f.threshold_bands[k]) slots[b] = def.threshold_count_ + k;
                }
            }
        }
        for (std::size_t k = 0; k < f.thresholds.size(); ++k) def.threshold_owner_.push_back(j);
        def.threshold_count_ += f.thresholds.size();
    }

    // Blocks by variable, in order of first appearance.
    std::map<std::size_t, std::size_t> step_block_of, weight_block_of;
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto& f = features[j];
        auto [wit, wnew] = weight_block_of.try_emplace(f.variable, def.weight_blocks_.size());
        if (wnew) def.weight_blocks_.push_back({f.variable, {}});
        def.weight_blocks_[wit->second].features.push_back(j);
        if (f.binary) continue;
        auto [sit, snew] = step_block_of.try_emplace(f.variable, def.step_blocks_.size());
        if (snew) def.step_blocks_.push_back({f.variable, {}});
        def.step_blocks_[sit->second].features.push_back(j);
    }
    for (auto* blocks : {&def.step_blocks_, &def.weight_blocks_}) {
        for (auto& block : *blocks) {
            std::stable_sort(block.features.begin(), block.features.end(), [&](std::size_t a, std::size_t b) {
                return features[a].step_index < features[b].step_index;
            });
        }
    }

    for (const auto& block : def.step_blocks_) {
        const auto& first = features[block.features.front()];
        const std::set<std::string> keys(first.threshold_bands.begin(), first.threshold_bands.end());
        for (std::size_t k = 1; k < block.features.size(); ++k) {
            const auto& prev = features[block.features[k - 1]];
            const auto& cur = features[block.features[k]];
            if (std::set<std::string>(cur.threshold_bands.begin(), cur.threshold_bands.end()) != keys) {
                throw ValidationError("features of variable '" + variables[block.variable].name +
                                      "' must list the same age bands");
            }
            for (std::size_t m = 0; m < cur.threshold_bands.size(); ++m) {
                const auto& label = cur.threshold_bands[m];
                const auto pit = std::find(prev.threshold_bands.begin(), prev.threshold_bands.end(), label);
                const double tp = prev.thresholds[static_cast<std::size_t>(pit - prev.threshold_bands.begin())];
                const double tc = cur.thresholds[m];
                const bool ordered = cur.direction == StepDirection::Up ? tc > tp : tc < tp;
                if (!ordered) {
                    throw ValidationError("thresholds of '" + prev.id + "' and '" + cur.id + "' in band '" + label +
                                          "' are not strictly ordered by step");
                }
            }
        }
    }

    def.variables_ = std::move(variables);
    def.age_bands_ = std::move(age_bands);
    def.features_ = std::move(features);
    return def;
}

std::optional<std::size_t> ScoreDefinition::variable_index(const std::string& name) const
{
    for (std::size_t i = 0; i < variables_.size(); ++i) {
        if (variables_[i].name == name) return i;
    }
    return std::nullopt;
}

std::optional<std::size_t> ScoreDefinition::feature_index(const std::string& id) const
{
    for (std::size_t i = 0; i < features_.size(); ++i) {
        if (features_[i].id == id) return i;
    }
    return std::nullopt;
}

std::optional<std::size_t> ScoreDefinition::band_index(int age_months) const
{
    for (std::size_t b = 0; b < age_bands_.size(); ++b) {
        if (age_bands_[b].contains(age_months)) return b;
    }
    return std::nullopt;
}

std::optional<std::size_t> ScoreDefinition::band_index(const std::string& label) const
{
    for (std::size_t b = 0; b < age_bands_.size(); ++b) {
        if (age_bands_[b].label == label) return b;
    }
    return std::nullopt;
}

std::size_t ScoreDefinition::threshold_slot(std::size_t feature, int age_months) const
{
    const auto& slots = band_slots_.at(feature);
    if (features_[feature].binary) {
        throw std::invalid_argument("binary feature '" + features_[feature].id + "' has no threshold");
    }
    if (slots.size() == 1 && is_shared(features_[feature])) return slots.front();
    const auto band = band_index(age_months);
    if (!band || slots[*band] == npos) {
        throw ValidationError("feature '" + features_[feature].id + "' has no threshold for age " +
                              std::to_string(age_months) + " months");
    }
    return slots[*band];
}

ScoreParameters ScoreDefinition::initial_parameters(double a_init) const
{
    ScoreParameters p;
    p.slopes.assign(slope_count_, a_init);
    p.thresholds.reserve(threshold_count_);
    std::map<std::string, int> group_size;
    for (const auto& f : features_) {
        if (f.or_group) ++group_size[*f.or_group];
    }
    for (const auto& f : features_) {
        p.thresholds.insert(p.thresholds.end(), f.thresholds.begin(), f.thresholds.end());
        double w = f.weight;
        if (f.or_group && or_split_ == OrWeightSplit::Even) w /= group_size[*f.or_group];
        p.weights.push_back(w);
    }
    return p;
}

void ScoreDefinition::check_parameters(const ScoreParameters& params) const
{
    if (params.slopes.size() != slope_count_ || params.thresholds.size() != threshold_count_ ||
        params.weights.size() != features_.size()) {
        throw ValidationError("parameter vector lengths do not match score definition '" + name_ + "'");
    }
    for (double a : params.slopes) {
        if (!(a >= 0.0) || !std::isfinite(a)) throw ValidationError("slopes must be finite and non-negative");
    }
    for (double w : params.weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("weights must be finite and positive");
    }
    for (double t : params.thresholds) {
        if (!std::isfinite(t)) throw ValidationError("thresholds must be finite");
    }
    if (!std::isfinite(params.intercept)) throw ValidationError("intercept must be finite");
}

double transform_feature(std::optional<double> x, StepDirection direction, double a, double t)
{
    if (!(a >= 0.0)) throw std::invalid_argument("transform_feature: slope must be non-negative");
    if (!x) return 0.0;
    const double up = numeric::sigmoid(a * (*x - t));
    return direction == StepDirection::Up ? up : 1.0 - up;
}

FeatureVector transform_record(const PatientRecord& record, const ScoreDefinition& def,
                               const ScoreParameters& params)
{
    const auto& features = def.features();
    if (record.values.size() != def.variables().size()) {
        throw ValidationError("record '" + record.id + "' does not match the definition's variables");
    }
    FeatureVector out;
    out.z.resize(features.size());
    out.provenance.resize(features.size());
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto& f = features[j];
        const auto& x = record.values[f.variable];
        if (f.binary) {
            out.z[j] = (x && *x == 1.0) ? 1.0 : 0.0;
            out.provenance[j] = x ? Provenance::Binary : Provenance::MissingZero;
            continue;
        }
        const std::size_t slot = def.threshold_slot(j, record.age_months);
        if (!x) {
            out.z[j] = 0.0;
            out.provenance[j] = Provenance::MissingZero;
            continue;
        }
        out.z[j] = transform_feature(x, f.direction, params.slopes[f.slope_index], params.thresholds[slot]);
        out.provenance[j] = Provenance::Transformed;
    }
    return out;
}

double linear_score(std::span<const double> z, std::span<const double> weights)
{
    if (z.size() != weights.size()) throw std::invalid_argument("linear_score: dimension mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) s += weights[j] * z[j];
    return s;
}

double mortality_probability(double score) { return numeric::sigmoid(score); }

double survival_probability(double score) { return 1.0 - mortality_probability(score); }

double hard_score(const PatientRecord& record, const ScoreDefinition& def)
{
    const auto& features = def.features();
    if (record.values.size() != def.variables().size()) {
        throw ValidationError("record '" + record.id + "' does not match the definition's variables");
    }
    double total = 0.0;
    std::map<std::string, double> group_max;
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto& f = features[j];
        bool triggered = false;
        const auto& x = record.values[f.variable];
        if (f.binary) {
            triggered = x && *x == 1.0;
        } else {
            const std::size_t slot = def.threshold_slot(j, record.age_months);
            const double t = f.thresholds[slot - f.threshold_offset];
            if (x) triggered = f.direction == StepDirection::Up ? *x > t : *x < t;
        }
        if (!triggered) continue;
        if (f.or_group) {
            auto& best = group_max[*f.or_group];
            best = std::max(best, f.weight);
        } else {
            total += f.weight;
        }
    }
    for (const auto& [group, w] : group_max) total += w;
    return total;
}

double soft_score(const PatientRecord& record, const ScoreDefinition& def, const ScoreParameters& params)
{
    const auto z = transform_record(record, def, params);
    return params.intercept + linear_score(z, params.weights);
}

std::vector<std::string> range_warnings(std::span<const PatientRecord> cohort, const ScoreDefinition& def)
{
    std::vector<std::string> out;
    const auto& vars = def.variables();
    for (const auto& r : cohort) {
        for (std::size_t v = 0; v < vars.size() && v < r.values.size(); ++v) {
            const auto& x = r.values[v];
            if (!x) continue;
            if (*x < vars[v].range_lo || *x > vars[v].range_hi) {
                out.push_back("record '" + r.id + "': " + vars[v].name + " = " + std::to_string(*x) +
                              " outside physiological range");
            } else if (vars[v].kind == VariableKind::Binary && *x != 0.0 && *x != 1.0) {
                out.push_back("record '" + r.id + "': binary " + vars[v].name + " = " + std::to_string(*x));
            }
        }
    }
    return out;
}

}  // namespace softscore
