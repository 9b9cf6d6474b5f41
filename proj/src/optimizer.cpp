#include "softscore/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "design.hpp"
#include "softscore/errors.hpp"
#include "softscore/numeric.hpp"

namespace softscore {

using detail::Design;

const char* param_kind_name(ParamKind kind)
{
    switch (kind) {
    case ParamKind::Slopes: return "a";
    case ParamKind::Thresholds: return "t";
    case ParamKind::Weights: return "w";
    case ParamKind::Intercept: return "b";
    }
    return "?";
}

std::vector<ParamKind> parse_param_kinds(const std::string& list)
{
    std::vector<ParamKind> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
        ParamKind k;
        if (item == "a") k = ParamKind::Slopes;
        else if (item == "t") k = ParamKind::Thresholds;
        else if (item == "w") k = ParamKind::Weights;
        else throw ValidationError("unknown parameter kind '" + item + "' (expected a, t, or w)");
        if (std::find(out.begin(), out.end(), k) != out.end()) {
            throw ValidationError("parameter kind '" + item + "' listed twice");
        }
        out.push_back(k);
    }
    if (out.empty()) throw ValidationError("empty parameter list");
    return out;
}

bool OptimizerConfig::optimizes(ParamKind kind) const
{
    return std::find(order.begin(), order.end(), kind) != order.end();
}

void OptimizerConfig::validate(std::size_t weight_count) const
{
    if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("alpha must lie in (0, 0.5)");
    if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("beta must lie in (0, 1)");
    if (beta_thresholds && !(*beta_thresholds > 0.0 && *beta_thresholds < 1.0)) {
        throw ValidationError("beta for thresholds must lie in (0, 1)");
    }
    if (!(prior_lambda >= 0.0)) throw ValidationError("prior lambda must be non-negative");
    if (!(a_init > 0.0)) throw ValidationError("initial slope must be positive");
    if (prior_mu.empty() || (prior_mu.size() != 1 && prior_mu.size() != weight_count)) {
        throw ValidationError("prior mu must be a scalar or one entry per feature");
    }
    if (max_outer_iters < 1) throw ValidationError("max_outer_iters must be at least 1");
    if (!(rel_tol >= 0.0)) throw ValidationError("rel_tol must be non-negative");
    if (max_halvings < 1) throw ValidationError("max_halvings must be at least 1");
    std::set<ParamKind> seen;
    for (auto k : order) {
        if (k == ParamKind::Intercept) throw ValidationError("the intercept is controlled by fit_intercept");
        if (!seen.insert(k).second) throw ValidationError("parameter kind repeated in optimization order");
    }
}

double negative_log_likelihood(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                               const ScoreDefinition& def)
{
    if (cohort.empty()) throw ValidationError("negative log-likelihood of an empty cohort");
    const Design d(def, cohort);
    const auto z = detail::feature_matrix(d, def, params);
    return detail::nll_from_scores(d, detail::scores_from(d, z, params));
}

double log_weight_prior(std::span<const double> weights, const OptimizerConfig& config)
{
    double sum_log = 0.0, quad = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (!(weights[j] > 0.0)) throw ValidationError("weights must be positive under the lognormal prior");
        const double v = std::log(weights[j]);
        sum_log += v;
        const double dv = v - config.prior_mean(j);
        quad += dv * dv;
    }
    return sum_log + config.prior_lambda * quad;
}

double penalized_objective(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                           const ScoreDefinition& def, const OptimizerConfig& config)
{
    const double prior = log_weight_prior(params.weights, config);
    return negative_log_likelihood(params, cohort, def) + prior;
}

std::vector<double> gradient_slopes(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                                    const ScoreDefinition& def)
{
    const Design d(def, cohort);
    const auto z = detail::feature_matrix(d, def, params);
    const auto r = detail::score_residuals(d, detail::scores_from(d, z, params));
    std::vector<double> g(def.slope_count(), 0.0);
    for (std::size_t j = 0; j < d.m; ++j) {
        const auto& f = def.features()[j];
        if (f.binary) continue;
        const double a = params.slopes[f.slope_index];
        double acc = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) {
            const auto k = d.at(i, j);
            if (!d.observed[k]) continue;
            acc += r[i] * detail::dz_dslope(f, a, d.x[k], params.thresholds[d.slot[k]]);
        }
        g[f.slope_index] = params.weights[j] * acc;
    }
    return g;
}

std::vector<double> gradient_thresholds(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                                        const ScoreDefinition& def)
{
    const Design d(def, cohort);
    const auto z = detail::feature_matrix(d, def, params);
    const auto r = detail::score_residuals(d, detail::scores_from(d, z, params));
    std::vector<double> g(def.threshold_count(), 0.0);
    for (std::size_t j = 0; j < d.m; ++j) {
        const auto& f = def.features()[j];
        if (f.binary) continue;
        const double a = params.slopes[f.slope_index];
        for (std::size_t i = 0; i < d.n; ++i) {
            const auto k = d.at(i, j);
            if (!d.observed[k]) continue;
            const auto s = d.slot[k];
            g[s] += params.weights[j] * r[i] * detail::dz_dthreshold(f, a, d.x[k], params.thresholds[s]);
        }
    }
    return g;
}

std::vector<double> gradient_log_weights(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                                         const ScoreDefinition& def, const OptimizerConfig& config)
{
    const std::size_t m = def.weight_count();
    std::vector<double> g(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        const double w = params.weights[j];
        if (!(w > 0.0)) throw ValidationError("weights must be positive for log-domain gradients");
        g[j] = 1.0 + 2.0 * config.prior_lambda * (std::log(w) - config.prior_mean(j));
    }
    if (cohort.empty()) return g;
    const Design d(def, cohort);
    const auto z = detail::feature_matrix(d, def, params);
    const auto r = detail::score_residuals(d, detail::scores_from(d, z, params));
    for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) acc += r[i] * z[d.at(i, j)];
        g[j] += params.weights[j] * acc;
    }
    return g;
}

double gradient_intercept(const ScoreParameters& params, std::span<const PatientRecord> cohort,
                          const ScoreDefinition& def)
{
    const Design d(def, cohort);
    const auto z = detail::feature_matrix(d, def, params);
    const auto r = detail::score_residuals(d, detail::scores_from(d, z, params));
    double acc = 0.0;
    for (double ri : r) acc += ri;
    return acc;
}

double armijo_backtrack(const Objective& f, std::span<const double> x, std::span<const double> direction,
                        double f_x, double decrease, double alpha, double beta, int max_halvings)
{
    std::vector<double> trial(x.size());
    double h = 1.0;
    for (int k = 0; k <= max_halvings; ++k) {
        bool moved = false;
        for (std::size_t i = 0; i < x.size(); ++i) {
            trial[i] = x[i] + h * direction[i];
            moved = moved || trial[i] != x[i];
        }
        // Steps too small to change x cannot make progress.
        if (!moved && decrease > 0.0) return 0.0;
        const double f_trial = f(trial);
        if (f_trial <= f_x - alpha * h * decrease) return h;
        h *= beta;
    }
    return 0.0;
}

double backtracking_step(const Objective& f, std::span<const double> x, std::span<const double> direction,
                         double alpha, double beta, int max_halvings)
{
    if (x.size() != direction.size()) throw std::invalid_argument("backtracking_step: dimension mismatch");
    double norm2 = 0.0;
    for (double di : direction) norm2 += di * di;
    return armijo_backtrack(f, x, direction, f(x), norm2, alpha, beta, max_halvings);
}

std::vector<double> project_slopes(std::span<const double> slopes)
{
    std::vector<double> out(slopes.begin(), slopes.end());
    for (auto& a : out) a = std::max(a, 0.0);
    return out;
}

std::vector<double> isotonic_nondecreasing(std::span<const double> values)
{
    // Pools as (sum, count); each new value merges backwards while it violates order.
    std::vector<double> sums;
    std::vector<std::size_t> counts;
    for (double v : values) {
        sums.push_back(v);
        counts.push_back(1);
        while (sums.size() > 1) {
            const std::size_t last = sums.size() - 1;
            if (sums[last - 1] / counts[last - 1] <= sums[last] / counts[last]) break;
            sums[last - 1] += sums[last];
            counts[last - 1] += counts[last];
            sums.pop_back();
            counts.pop_back();
        }
    }
    std::vector<double> out;
    out.reserve(values.size());
    for (std::size_t b = 0; b < sums.size(); ++b) {
        // Unpooled entries are copied exactly so that feasible input is a fixed point.
        const double mean = counts[b] == 1 ? sums[b] : sums[b] / static_cast<double>(counts[b]);
        out.insert(out.end(), counts[b], mean);
    }
    return out;
}

namespace {

// Threshold slots of one block, one sequence per age band, in step order.
std::vector<std::vector<std::size_t>> block_band_sequences(const ScoreDefinition& def, const Block& block)
{
    const auto& features = def.features();
    const auto& first = features[block.features.front()];
    std::vector<std::vector<std::size_t>> seqs;
    for (const auto& label : first.threshold_bands) {
        std::vector<std::size_t> seq;
        for (auto j : block.features) {
            const auto& f = features[j];
            const auto it = std::find(f.threshold_bands.begin(), f.threshold_bands.end(), label);
            seq.push_back(f.threshold_offset + static_cast<std::size_t>(it - f.threshold_bands.begin()));
        }
        seqs.push_back(std::move(seq));
    }
    return seqs;
}

void project_block_thresholds(const ScoreDefinition& def, const Block& block, std::vector<double>& t)
{
    const bool up = def.features()[block.features.front()].direction == StepDirection::Up;
    for (const auto& seq : block_band_sequences(def, block)) {
        if (seq.size() < 2) continue;
        std::vector<double> vals;
        for (auto s : seq) vals.push_back(up ? t[s] : -t[s]);
        const auto proj = isotonic_nondecreasing(vals);
        for (std::size_t k = 0; k < seq.size(); ++k) t[seq[k]] = up ? proj[k] : -proj[k];
    }
}

}  // namespace

std::vector<double> project_thresholds(std::span<const double> thresholds, const ScoreDefinition& def)
{
    if (thresholds.size() != def.threshold_count()) {
        throw std::invalid_argument("project_thresholds: length does not match definition");
    }
    std::vector<double> t(thresholds.begin(), thresholds.end());
    for (const auto& block : def.step_blocks()) project_block_thresholds(def, block, t);
    return t;
}

bool thresholds_ordered(std::span<const double> thresholds, const ScoreDefinition& def)
{
    for (const auto& block : def.step_blocks()) {
        const bool up = def.features()[block.features.front()].direction == StepDirection::Up;
        for (const auto& seq : block_band_sequences(def, block)) {
            for (std::size_t k = 1; k < seq.size(); ++k) {
                const double prev = thresholds[seq[k - 1]], cur = thresholds[seq[k]];
                if (up ? cur < prev : cur > prev) return false;
            }
        }
    }
    return true;
}

namespace {

// Cyclic block coordinate descent over cached feature values and scores.
class BlockDescent {
public:
    BlockDescent(const ScoreDefinition& def, const Design& design, const OptimizerConfig& config, ScoreParameters p)
        : def_(def), d_(design), cfg_(config), p_(std::move(p)),
          prior_active_(config.optimizes(ParamKind::Weights))
    {
        refresh();
    }

    const ScoreParameters& params() const { return p_; }

    double objective() const { return objective_with(s_, p_.weights); }

    FitTrace run()
    {
        FitTrace trace;
        trace.initial_objective = objective();
        if (!std::isfinite(trace.initial_objective)) throw NumericError("initial objective is not finite");
        report_unobserved(trace);

        double current = trace.initial_objective;
        trace.convergence = "max_iterations";
        for (int iter = 1; iter <= cfg_.max_outer_iters; ++iter) {
            const double start = current;
            if (cfg_.fit_intercept) step_intercept(iter, trace);
            for (auto kind : cfg_.order) {
                const auto& blocks = kind == ParamKind::Weights ? def_.weight_blocks() : def_.step_blocks();
                for (std::size_t b = 0; b < blocks.size(); ++b) {
                    switch (kind) {
                    case ParamKind::Slopes: step_slopes(iter, b, trace); break;
                    case ParamKind::Thresholds: step_thresholds(iter, b, trace); break;
                    case ParamKind::Weights: step_weights(iter, b, trace); break;
                    case ParamKind::Intercept: break;
                    }
                }
            }
            current = objective();
            if (!std::isfinite(current)) throw NumericError("objective became non-finite during fitting");
            trace.cycle_objectives.push_back(current);
            trace.iterations = iter;
            if (start - current < cfg_.rel_tol * std::max(std::abs(start), 1e-300)) {
                trace.convergence = "relative_tolerance";
                break;
            }
        }
        trace.final_objective = current;
        return trace;
    }

private:
    double objective_with(std::span<const double> scores, std::span<const double> weights) const
    {
        double f = detail::nll_from_scores(d_, scores);
        if (prior_active_) f += log_weight_prior(weights, cfg_);
        return f;
    }

    void refresh()
    {
        z_ = detail::feature_matrix(d_, def_, p_);
        s_ = detail::scores_from(d_, z_, p_);
    }

    void report_unobserved(FitTrace& trace) const
    {
        for (std::size_t j = 0; j < d_.m; ++j) {
            bool any = false;
            for (std::size_t i = 0; i < d_.n && !any; ++i) any = d_.observed[d_.at(i, j)] != 0;
            if (!any) {
                trace.warnings.push_back("feature '" + def_.features()[j].id +
                                         "' is missing for every record; its parameters stay at initialization");
            }
        }
    }

    // Runs the line search on a block-local vector and records the outcome.
    // trial(x) must return the objective at the (projected) block values x.
    template <class Trial, class Commit>
    void line_search(int iter, ParamKind kind, std::size_t block, std::span<const double> x,
                     std::span<const double> dir, double beta, Trial&& trial, Commit&& commit, FitTrace& trace)
    {
        double norm2 = 0.0;
        for (double v : dir) norm2 += v * v;
        if (norm2 == 0.0) return;
        const double before = objective();
        const double h = armijo_backtrack(trial, x, dir, before, norm2, cfg_.alpha, beta, cfg_.max_halvings);
        if (h == 0.0) {
            ++trace.stalled_steps;
            return;
        }
        std::vector<double> next(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) next[k] = x[k] + h * dir[k];
        const ScoreParameters saved = p_;
        commit(next);
        refresh();
        const double after = objective();
        if (!(after < before)) {
            // Recomputation from scratch lost the Armijo margin to rounding.
            p_ = saved;
            refresh();
            ++trace.stalled_steps;
            return;
        }
        trace.steps.push_back({iter, kind, block, before, after, h});
    }

    std::vector<double> residuals() const { return detail::score_residuals(d_, s_); }

    void step_intercept(int iter, FitTrace& trace)
    {
        const auto r = residuals();
        double g = 0.0;
        for (double ri : r) g += ri;
        const std::vector<double> x = {p_.intercept};
        const std::vector<double> dir = {-g};
        auto trial = [&](std::span<const double> v) {
            std::vector<double> s(s_);
            const double delta = v[0] - p_.intercept;
            for (auto& si : s) si += delta;
            return objective_with(s, p_.weights);
        };
        auto commit = [&](std::span<const double> v) { p_.intercept = v[0]; };
        line_search(iter, ParamKind::Intercept, 0, x, dir, cfg_.beta, trial, commit, trace);
    }

    // New scores when the k-th feature of `block` takes value zfun(i, k) with weight weights[k].
    template <class ZFun>
    std::vector<double> rescored(const Block& block, std::span<const double> weights, ZFun&& zfun) const
    {
        std::vector<double> s(s_);
        for (std::size_t i = 0; i < d_.n; ++i) {
            double delta = 0.0;
            for (std::size_t k = 0; k < block.features.size(); ++k) {
                const auto j = block.features[k];
                delta += weights[k] * zfun(i, k) - p_.weights[j] * z_[d_.at(i, j)];
            }
            s[i] += delta;
        }
        return s;
    }

    void step_slopes(int iter, std::size_t b, FitTrace& trace)
    {
        const auto& block = def_.step_blocks()[b];
        const auto& features = def_.features();
        const auto r = residuals();
        std::vector<double> x, dir, w;
        for (auto j : block.features) {
            const auto& f = features[j];
            const double a = p_.slopes[f.slope_index];
            double acc = 0.0;
            for (std::size_t i = 0; i < d_.n; ++i) {
                const auto k = d_.at(i, j);
                if (d_.observed[k]) acc += r[i] * detail::dz_dslope(f, a, d_.x[k], p_.thresholds[d_.slot[k]]);
            }
            double dj = -p_.weights[j] * acc;
            // Coordinates on the boundary of A stay there.
            if (a <= 0.0 && dj < 0.0) dj = 0.0;
            x.push_back(a);
            dir.push_back(dj);
            w.push_back(p_.weights[j]);
        }
        auto values_at = [&](std::span<const double> v) {
            return [&, a = project_slopes(v)](std::size_t i, std::size_t pos) {
                const auto j = block.features[pos];
                const auto k = d_.at(i, j);
                if (!d_.observed[k]) return 0.0;
                return transform_feature(d_.x[k], features[j].direction, a[pos], p_.thresholds[d_.slot[k]]);
            };
        };
        auto trial = [&](std::span<const double> v) { return objective_with(rescored(block, w, values_at(v)), p_.weights); };
        auto commit = [&](std::span<const double> v) {
            const auto a = project_slopes(v);
            for (std::size_t k = 0; k < block.features.size(); ++k) p_.slopes[features[block.features[k]].slope_index] = a[k];
        };
        line_search(iter, ParamKind::Slopes, b, x, dir, cfg_.beta, trial, commit, trace);
    }

    void step_thresholds(int iter, std::size_t b, FitTrace& trace)
    {
        const auto& block = def_.step_blocks()[b];
        const auto& features = def_.features();
        const auto r = residuals();
        std::vector<std::size_t> slots;
        for (auto j : block.features) {
            const auto& f = features[j];
            for (std::size_t k = 0; k < f.thresholds.size(); ++k) slots.push_back(f.threshold_offset + k);
        }
        std::vector<double> grad(def_.threshold_count(), 0.0);
        for (auto j : block.features) {
            const auto& f = features[j];
            const double a = p_.slopes[f.slope_index];
            for (std::size_t i = 0; i < d_.n; ++i) {
                const auto k = d_.at(i, j);
                if (!d_.observed[k]) continue;
                const auto s = d_.slot[k];
                grad[s] += p_.weights[j] * r[i] * detail::dz_dthreshold(f, a, d_.x[k], p_.thresholds[s]);
            }
        }
        std::vector<double> x, dir, w;
        for (auto s : slots) {
            x.push_back(p_.thresholds[s]);
            dir.push_back(-grad[s]);
        }
        for (auto j : block.features) w.push_back(p_.weights[j]);
        auto projected = [&](std::span<const double> v) {
            std::vector<double> t(p_.thresholds);
            for (std::size_t k = 0; k < slots.size(); ++k) t[slots[k]] = v[k];
            project_block_thresholds(def_, block, t);
            return t;
        };
        auto trial = [&](std::span<const double> v) {
            const auto t = projected(v);
            auto zfun = [&](std::size_t i, std::size_t pos) {
                const auto j = block.features[pos];
                const auto k = d_.at(i, j);
                if (!d_.observed[k]) return 0.0;
                const auto& f = features[j];
                return transform_feature(d_.x[k], f.direction, p_.slopes[f.slope_index], t[d_.slot[k]]);
            };
            return objective_with(rescored(block, w, zfun), p_.weights);
        };
        auto commit = [&](std::span<const double> v) { p_.thresholds = projected(v); };
        line_search(iter, ParamKind::Thresholds, b, x, dir, cfg_.beta_thresholds.value_or(cfg_.beta), trial, commit,
                    trace);
    }

    void step_weights(int iter, std::size_t b, FitTrace& trace)
    {
        const auto& block = def_.weight_blocks()[b];
        const auto r = residuals();
        std::vector<double> x, dir;
        for (auto j : block.features) {
            const double w = p_.weights[j];
            const double v = std::log(w);
            double acc = 0.0;
            for (std::size_t i = 0; i < d_.n; ++i) acc += r[i] * z_[d_.at(i, j)];
            double g = w * acc;
            if (prior_active_) g += 1.0 + 2.0 * cfg_.prior_lambda * (v - cfg_.prior_mean(j));
            x.push_back(v);
            dir.push_back(-g);
        }
        auto trial = [&](std::span<const double> v) {
            std::vector<double> w(v.size());
            for (std::size_t k = 0; k < v.size(); ++k) w[k] = std::exp(v[k]);
            std::vector<double> all(p_.weights);
            for (std::size_t k = 0; k < v.size(); ++k) all[block.features[k]] = w[k];
            auto zfun = [&](std::size_t i, std::size_t pos) { return z_[d_.at(i, block.features[pos])]; };
            return objective_with(rescored(block, w, zfun), all);
        };
        auto commit = [&](std::span<const double> v) {
            for (std::size_t k = 0; k < v.size(); ++k) p_.weights[block.features[k]] = std::exp(v[k]);
        };
        line_search(iter, ParamKind::Weights, b, x, dir, cfg_.beta, trial, commit, trace);
    }

    const ScoreDefinition& def_;
    const Design& d_;
    const OptimizerConfig& cfg_;
    ScoreParameters p_;
    bool prior_active_;
    std::vector<double> z_;
    std::vector<double> s_;
};

void check_fit_inputs(std::span<const PatientRecord> cohort)
{
    if (cohort.empty()) throw ValidationError("cannot fit on an empty cohort");
    bool pos = false, neg = false;
    for (const auto& r : cohort) (r.outcome == Outcome::Died ? pos : neg) = true;
    if (!pos || !neg) throw ValidationError("cohort must contain both outcomes to fit");
}

}  // namespace

FitResult fit_from(std::span<const PatientRecord> cohort, const ScoreDefinition& def, const OptimizerConfig& config,
                   ScoreParameters initial)
{
    config.validate(def.weight_count());
    check_fit_inputs(cohort);
    def.check_parameters(initial);
    const Design d(def, cohort);
    BlockDescent engine(def, d, config, std::move(initial));
    FitResult result;
    result.trace = engine.run();
    result.params = engine.params();
    def.check_parameters(result.params);
    return result;
}

FitResult fit(std::span<const PatientRecord> cohort, const ScoreDefinition& def, const OptimizerConfig& config)
{
    config.validate(def.weight_count());
    return fit_from(cohort, def, config, def.initial_parameters(config.a_init));
}

}  // namespace softscore
