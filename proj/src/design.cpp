#include "design.hpp"

#include "softscore/errors.hpp"
#include "softscore/numeric.hpp"

namespace softscore::detail {

Design::Design(const ScoreDefinition& def, std::span<const PatientRecord> cohort)
    : n(cohort.size()), m(def.weight_count())
{
    const auto& features = def.features();
    y.resize(n);
    x.assign(n * m, 0.0);
    observed.assign(n * m, 0);
    slot.assign(n * m, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = cohort[i];
        if (r.values.size() != def.variables().size()) {
            throw ValidationError("record '" + r.id + "' does not match the definition's variables");
        }
        y[i] = label_value(r.outcome);
        for (std::size_t j = 0; j < m; ++j) {
            const auto& f = features[j];
            const auto& v = r.values[f.variable];
            if (!f.binary) slot[at(i, j)] = def.threshold_slot(j, r.age_months);
            if (v) {
                observed[at(i, j)] = 1;
                x[at(i, j)] = *v;
            }
        }
    }
}

double feature_value(const Design& d, const ScoreDefinition& def, const ScoreParameters& params, std::size_t i,
                     std::size_t j)
{
    const std::size_t k = d.at(i, j);
    if (!d.observed[k]) return 0.0;
    const auto& f = def.features()[j];
    if (f.binary) return d.x[k] == 1.0 ? 1.0 : 0.0;
    return transform_feature(d.x[k], f.direction, params.slopes[f.slope_index], params.thresholds[d.slot[k]]);
}

std::vector<double> feature_matrix(const Design& d, const ScoreDefinition& def, const ScoreParameters& params)
{
    std::vector<double> z(d.n * d.m);
    for (std::size_t i = 0; i < d.n; ++i) {
        for (std::size_t j = 0; j < d.m; ++j) z[d.at(i, j)] = feature_value(d, def, params, i, j);
    }
    return z;
}

std::vector<double> scores_from(const Design& d, std::span<const double> z, const ScoreParameters& params)
{
    std::vector<double> s(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
        s[i] = params.intercept + linear_score(z.subspan(i * d.m, d.m), params.weights);
    }
    return s;
}

double nll_from_scores(const Design& d, std::span<const double> scores)
{
    double total = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) total += numeric::log1p_exp(-d.y[i] * scores[i]);
    return total;
}

std::vector<double> score_residuals(const Design& d, std::span<const double> scores)
{
    std::vector<double> r(d.n);
    for (std::size_t i = 0; i < d.n; ++i) r[i] = -d.y[i] * numeric::sigmoid(-d.y[i] * scores[i]);
    return r;
}

double dz_dslope(const Feature& f, double a, double x, double t)
{
    const double g = (x - t) * numeric::sigmoid_derivative(a * (x - t));
    return f.direction == StepDirection::Up ? g : -g;
}

double dz_dthreshold(const Feature& f, double a, double x, double t)
{
    const double g = -a * numeric::sigmoid_derivative(a * (x - t));
    return f.direction == StepDirection::Up ? g : -g;
}

}  // namespace softscore::detail
