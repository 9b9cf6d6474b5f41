#include "softscore/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "design.hpp"
#include "softscore/errors.hpp"
#include "softscore/io.hpp"
#include "softscore/numeric.hpp"
#include "softscore/random.hpp"

namespace softscore {

namespace {

const ValueDistribution* distribution_for(const GeneratorConfig& cfg, std::size_t v, const std::string& band)
{
    const auto& table = cfg.value_distributions[v];
    if (auto it = table.find(band); it != table.end()) return &it->second;
    if (auto it = table.find(kAllAges); it != table.end()) return &it->second;
    return nullptr;
}

double draw_value(Rng& rng, const ValueDistribution& dist, const RawVariable& var)
{
    switch (dist.kind) {
    case ValueDistribution::Kind::Bernoulli:
        return rng.uniform() < dist.first ? 1.0 : 0.0;
    case ValueDistribution::Kind::Uniform: {
        const double lo = std::max(dist.first, var.range_lo), hi = std::min(dist.second, var.range_hi);
        return std::clamp(rng.uniform(lo, hi), var.range_lo, var.range_hi);
    }
    case ValueDistribution::Kind::Normal:
        // Truncation to the physiological range by rejection, clamped as a last resort.
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const double x = dist.first + dist.second * rng.normal();
            if (x >= var.range_lo && x <= var.range_hi) return x;
        }
        return std::clamp(dist.first, var.range_lo, var.range_hi);
    }
    return 0.0;
}

}  // namespace

void GeneratorConfig::validate() const
{
    if (n < 1) throw ValidationError("generator: n must be at least 1");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ValidationError("generator: missing_rate must lie in [0, 1)");
    if (intercept.has_value() == target_prevalence.has_value()) {
        throw ValidationError("generator: give exactly one of intercept or target_prevalence");
    }
    if (target_prevalence && !(*target_prevalence > 0.0 && *target_prevalence < 1.0)) {
        throw ValidationError("generator: target_prevalence must lie in (0, 1)");
    }
    def.check_parameters(true_params);
    const auto& vars = def.variables();
    if (value_distributions.size() != vars.size()) throw ValidationError("generator: one distribution table per variable");
    const auto& bands = def.age_bands();
    if (!age_weights.empty()) {
        if (age_weights.size() != bands.size()) throw ValidationError("generator: one age weight per band");
        double total = 0.0;
        for (double w : age_weights) {
            if (!(w >= 0.0)) throw ValidationError("generator: age weights must be non-negative");
            total += w;
        }
        if (!(total > 0.0)) throw ValidationError("generator: age weights sum to zero");
    }
    if (bands.empty() && !(min_age_months >= 0 && min_age_months < max_age_months)) {
        throw ValidationError("generator: invalid age range");
    }
    for (std::size_t v = 0; v < vars.size(); ++v) {
        const auto& var = vars[v];
        std::vector<std::string> labels;
        for (const auto& b : bands) labels.push_back(b.label);
        if (labels.empty()) labels.push_back(kAllAges);
        for (const auto& [label, dist] : value_distributions[v]) {
            if (label != kAllAges && !def.band_index(label)) {
                throw ValidationError("generator: '" + var.name + "' distribution for unknown band '" + label + "'");
            }
        }
        for (const auto& label : labels) {
            const auto* dist = distribution_for(*this, v, label);
            if (!dist) throw ValidationError("generator: no distribution for '" + var.name + "' in band '" + label + "'");
            const bool binary = var.kind == VariableKind::Binary;
            switch (dist->kind) {
            case ValueDistribution::Kind::Bernoulli:
                if (!binary) throw ValidationError("generator: bernoulli distribution on non-binary '" + var.name + "'");
                if (!(dist->first >= 0.0 && dist->first <= 1.0)) throw ValidationError("generator: bernoulli p outside [0, 1]");
                break;
            case ValueDistribution::Kind::Normal:
                if (binary) throw ValidationError("generator: binary '" + var.name + "' needs a bernoulli distribution");
                if (!(dist->second > 0.0) || !std::isfinite(dist->first)) {
                    throw ValidationError("generator: normal distribution for '" + var.name + "' needs sd > 0");
                }
                break;
            case ValueDistribution::Kind::Uniform:
                if (binary) throw ValidationError("generator: binary '" + var.name + "' needs a bernoulli distribution");
                if (!(std::max(dist->first, var.range_lo) < std::min(dist->second, var.range_hi))) {
                    throw ValidationError("generator: uniform range for '" + var.name +
                                          "' does not intersect the physiological range");
                }
                break;
            }
        }
    }
}

double intercept_for_prevalence(const std::vector<double>& scores, double prevalence)
{
    if (scores.empty()) throw ValidationError("intercept_for_prevalence: no scores");
    auto mean_prob = [&](double b) {
        double total = 0.0;
        for (double s : scores) total += numeric::sigmoid(b + s);
        return total / static_cast<double>(scores.size());
    };
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    double lo = -*hi_it - 60.0, hi = -*lo_it + 60.0;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        (mean_prob(mid) < prevalence ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

SyntheticCohort generate(const GeneratorConfig& config)
{
    config.validate();
    const auto& def = config.def;
    const auto& vars = def.variables();
    const auto& bands = def.age_bands();
    Rng rng(config.seed);

    std::vector<double> cumulative;
    if (!bands.empty()) {
        std::vector<double> weights = config.age_weights.empty() ? std::vector<double>(bands.size(), 1.0) : config.age_weights;
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        double acc = 0.0;
        for (double w : weights) cumulative.push_back(acc += w / total);
    }

    const std::size_t width = std::to_string(config.n).size();
    SyntheticCohort out;
    out.cohort.resize(config.n);
    for (std::size_t i = 0; i < config.n; ++i) {
        auto& r = out.cohort[i];
        std::string num = std::to_string(i + 1);
        r.id = "S" + std::string(width - num.size(), '0') + num;
        std::string band_label = kAllAges;
        if (bands.empty()) {
            r.age_months = config.min_age_months +
                           static_cast<int>(rng.index(static_cast<std::uint64_t>(config.max_age_months - config.min_age_months)));
        } else {
            const double u = rng.uniform();
            std::size_t b = 0;
            while (b + 1 < bands.size() && u >= cumulative[b]) ++b;
            while (b > 0 && !config.age_weights.empty() && config.age_weights[b] == 0.0) --b;
            const auto& band = bands[b];
            band_label = band.label;
            r.age_months = band.min_age_months +
                           static_cast<int>(rng.index(static_cast<std::uint64_t>(band.max_age_months - band.min_age_months)));
        }
        r.values.resize(vars.size());
        for (std::size_t v = 0; v < vars.size(); ++v) {
            r.values[v] = draw_value(rng, *distribution_for(config, v, band_label), vars[v]);
        }
        for (std::size_t v = 0; v < vars.size(); ++v) {
            if (rng.uniform() < config.missing_rate) r.values[v].reset();
        }
    }

    // Scores on the masked values, so missing cells contribute zero.
    const detail::Design design(def, out.cohort);
    ScoreParameters no_offset = config.true_params;
    no_offset.intercept = 0.0;
    const auto z = detail::feature_matrix(design, def, no_offset);
    const auto scores = detail::scores_from(design, z, no_offset);

    out.intercept = config.intercept ? *config.intercept : intercept_for_prevalence(scores, *config.target_prevalence);
    out.true_probability.resize(config.n);
    for (std::size_t i = 0; i < config.n; ++i) {
        const double p = mortality_probability(out.intercept + scores[i]);
        out.true_probability[i] = p;
        out.cohort[i].outcome = rng.uniform() < p ? Outcome::Died : Outcome::Survived;
    }
    return out;
}

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where)
{
    if (!obj.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ValidationError(where + ": unknown key '" + key + "'");
        }
    }
}

double number(const json& v, const std::string& where)
{
    if (!v.is_number()) throw ValidationError(where + ": expected a number");
    return v.get<double>();
}

ValueDistribution parse_distribution(const json& d, const std::string& where)
{
    check_keys(d, {"dist", "mean", "sd", "lo", "hi", "p"}, where);
    if (!d.contains("dist") || !d["dist"].is_string()) throw ValidationError(where + ": missing 'dist'");
    const auto kind = d["dist"].get<std::string>();
    auto field = [&](const char* k) {
        if (!d.contains(k)) throw ValidationError(where + ": missing '" + k + "'");
        return number(d[k], where + "." + k);
    };
    if (kind == "normal") return ValueDistribution::normal(field("mean"), field("sd"));
    if (kind == "uniform") return ValueDistribution::uniform(field("lo"), field("hi"));
    if (kind == "bernoulli") return ValueDistribution::bernoulli(field("p"));
    throw ValidationError(where + ": unknown distribution '" + kind + "'");
}

}  // namespace

GeneratorConfig generator_config_from_json(const json& doc, const std::filesystem::path& base_dir)
{
    check_keys(doc, {"n", "seed", "score_definition", "true_params", "intercept", "target_prevalence",
                     "value_distributions", "age_distribution", "age_range_months", "missing_rate"},
               "generator config");
    GeneratorConfig cfg;
    if (!doc.contains("n") || !doc["n"].is_number_integer() || doc["n"].get<long long>() < 1) {
        throw ValidationError("generator config: 'n' must be a positive integer");
    }
    cfg.n = doc["n"].get<std::size_t>();
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_unsigned()) throw ValidationError("generator config: 'seed' must be a non-negative integer");
        cfg.seed = doc["seed"].get<std::uint64_t>();
    }
    if (!doc.contains("score_definition")) throw ValidationError("generator config: missing 'score_definition'");
    const auto& sd = doc["score_definition"];
    if (sd.is_string()) {
        std::filesystem::path p = sd.get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        cfg.def = io::load_definition(p);
    } else {
        cfg.def = io::definition_from_json(sd);
    }
    const auto& def = cfg.def;

    cfg.true_params = def.initial_parameters(1.0);
    if (!doc.contains("true_params")) throw ValidationError("generator config: missing 'true_params'");
    const auto& tp = doc["true_params"];
    check_keys(tp, {"slopes", "thresholds", "weights"}, "true_params");
    auto apply_per_feature = [&](const json& node, const std::string& what, auto&& set) {
        if (node.is_number()) {
            for (std::size_t j = 0; j < def.features().size(); ++j) set(j, node.get<double>());
            return;
        }
        if (!node.is_object()) throw ValidationError("true_params." + what + ": expected a number or an object");
        for (const auto& [id, value] : node.items()) {
            const auto j = def.feature_index(id);
            if (!j) throw ValidationError("true_params." + what + ": unknown feature '" + id + "'");
            set(*j, number(value, "true_params." + what + "." + id));
        }
    };
    if (!tp.contains("slopes")) throw ValidationError("true_params: missing 'slopes'");
    apply_per_feature(tp["slopes"], "slopes", [&](std::size_t j, double a) {
        const auto& f = def.features()[j];
        if (!f.binary) cfg.true_params.slopes[f.slope_index] = a;
    });
    if (tp.contains("weights")) {
        apply_per_feature(tp["weights"], "weights", [&](std::size_t j, double w) { cfg.true_params.weights[j] = w; });
    }
    if (tp.contains("thresholds")) {
        const auto& th = tp["thresholds"];
        if (!th.is_object()) throw ValidationError("true_params.thresholds: expected an object");
        for (const auto& [id, bands] : th.items()) {
            const auto j = def.feature_index(id);
            if (!j || def.features()[*j].binary) throw ValidationError("true_params.thresholds: unknown step feature '" + id + "'");
            const auto& f = def.features()[*j];
            if (!bands.is_object()) throw ValidationError("true_params.thresholds." + id + ": expected an object");
            for (const auto& [label, value] : bands.items()) {
                const auto it = std::find(f.threshold_bands.begin(), f.threshold_bands.end(), label);
                if (it == f.threshold_bands.end()) {
                    throw ValidationError("true_params.thresholds." + id + ": feature has no band '" + label + "'");
                }
                cfg.true_params.thresholds[f.threshold_offset + static_cast<std::size_t>(it - f.threshold_bands.begin())] =
                    number(value, "true_params.thresholds." + id + "." + label);
            }
        }
    }

    if (doc.contains("intercept")) cfg.intercept = number(doc["intercept"], "intercept");
    if (doc.contains("target_prevalence")) cfg.target_prevalence = number(doc["target_prevalence"], "target_prevalence");
    if (doc.contains("missing_rate")) cfg.missing_rate = number(doc["missing_rate"], "missing_rate");

    cfg.value_distributions.resize(def.variables().size());
    if (!doc.contains("value_distributions")) throw ValidationError("generator config: missing 'value_distributions'");
    const auto& vd = doc["value_distributions"];
    if (!vd.is_object()) throw ValidationError("value_distributions: expected an object");
    for (const auto& [name, per_band] : vd.items()) {
        const auto v = def.variable_index(name);
        if (!v) throw ValidationError("value_distributions: unknown variable '" + name + "'");
        if (!per_band.is_object()) throw ValidationError("value_distributions." + name + ": expected an object");
        for (const auto& [label, dist] : per_band.items()) {
            cfg.value_distributions[*v][label] = parse_distribution(dist, "value_distributions." + name + "." + label);
        }
    }

    if (doc.contains("age_distribution")) {
        const auto& ad = doc["age_distribution"];
        if (!ad.is_object()) throw ValidationError("age_distribution: expected an object keyed by band label");
        cfg.age_weights.assign(def.age_bands().size(), 0.0);
        for (const auto& [label, w] : ad.items()) {
            const auto b = def.band_index(label);
            if (!b) throw ValidationError("age_distribution: unknown band '" + label + "'");
            cfg.age_weights[*b] = number(w, "age_distribution." + label);
        }
    }
    if (doc.contains("age_range_months")) {
        const auto& ar = doc["age_range_months"];
        if (!ar.is_array() || ar.size() != 2 || !ar[0].is_number_integer() || !ar[1].is_number_integer()) {
            throw ValidationError("age_range_months: expected [min, max] integers");
        }
        cfg.min_age_months = ar[0].get<int>();
        cfg.max_age_months = ar[1].get<int>();
    }
    cfg.validate();
    return cfg;
}

std::string truth_csv(const SyntheticCohort& cohort)
{
    std::string out = "id,true_probability\n";
    for (std::size_t i = 0; i < cohort.cohort.size(); ++i) {
        out += cohort.cohort[i].id + "," + io::format_double(cohort.true_probability[i]) + "\n";
    }
    return out;
}

}  // namespace softscore
