#include "softscore/imputation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "softscore/errors.hpp"
#include "softscore/numeric.hpp"
#include "softscore/optimizer.hpp"

namespace softscore {

ImputationMethod ImputationMethod::parse(const std::string& name, int k)
{
    if (name == "knn") {
        if (k < 1) throw ValidationError("knn imputation needs k >= 1");
        return knn(k);
    }
    if (name == "mean") return mean();
    if (name == "normal") return normal();
    throw ValidationError("unknown imputation method '" + name + "' (expected knn, mean, normal)");
}

Standardization standardization(std::span<const PatientRecord> cohort, std::size_t variables)
{
    Standardization z;
    z.mean.assign(variables, 0.0);
    z.sd.assign(variables, 1.0);
    for (std::size_t v = 0; v < variables; ++v) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& r : cohort) {
            if (r.values[v]) {
                sum += *r.values[v];
                ++count;
            }
        }
        if (count == 0) continue;
        const double mean = sum / static_cast<double>(count);
        double ss = 0.0;
        for (const auto& r : cohort) {
            if (r.values[v]) ss += (*r.values[v] - mean) * (*r.values[v] - mean);
        }
        const double sd = std::sqrt(ss / static_cast<double>(count));
        z.mean[v] = mean;
        z.sd[v] = sd > 0.0 ? sd : 1.0;
    }
    return z;
}

double knn_distance(const PatientRecord& a, const PatientRecord& b, const Standardization& z)
{
    double ss = 0.0;
    std::size_t common = 0;
    for (std::size_t v = 0; v < a.values.size(); ++v) {
        if (!a.values[v] || !b.values[v]) continue;
        const double d = (*a.values[v] - *b.values[v]) / z.sd[v];
        ss += d * d;
        ++common;
    }
    if (common == 0) return std::numeric_limits<double>::infinity();
    return std::sqrt(ss) / static_cast<double>(common);
}

namespace {

double finish_value(const RawVariable& var, double value)
{
    if (var.kind == VariableKind::Binary) return value >= 0.5 ? 1.0 : 0.0;
    return value;
}

}  // namespace

Cohort impute(std::span<const PatientRecord> cohort, const ScoreDefinition& def, const ImputationMethod& method)
{
    const auto& vars = def.variables();
    const std::size_t nv = vars.size();
    Cohort out(cohort.begin(), cohort.end());
    for (const auto& r : cohort) {
        if (r.values.size() != nv) throw ValidationError("record '" + r.id + "' does not match the definition's variables");
    }

    std::vector<std::size_t> observers(nv, 0);
    std::vector<double> column_mean(nv, 0.0);
    bool any_missing = false;
    for (std::size_t v = 0; v < nv; ++v) {
        double sum = 0.0;
        for (const auto& r : cohort) {
            if (r.values[v]) {
                sum += *r.values[v];
                ++observers[v];
            } else {
                any_missing = true;
            }
        }
        if (observers[v] > 0) column_mean[v] = sum / static_cast<double>(observers[v]);
    }
    if (!any_missing) return out;
    for (std::size_t v = 0; v < nv; ++v) {
        if (observers[v] == 0 && method.kind != ImputationMethod::Kind::Normal) {
            throw ValidationError("variable '" + vars[v].name + "' is not observed in any record");
        }
    }

    switch (method.kind) {
    case ImputationMethod::Kind::Mean:
        for (auto& r : out) {
            for (std::size_t v = 0; v < nv; ++v) {
                if (!r.values[v]) r.values[v] = finish_value(vars[v], column_mean[v]);
            }
        }
        return out;
    case ImputationMethod::Kind::Normal:
        for (auto& r : out) {
            for (std::size_t v = 0; v < nv; ++v) {
                if (r.values[v]) continue;
                if (!vars[v].normal_value) {
                    throw ValidationError("variable '" + vars[v].name + "' has no normal value for imputation");
                }
                r.values[v] = *vars[v].normal_value;
            }
        }
        return out;
    case ImputationMethod::Kind::Knn:
        break;
    }

    if (method.k < 1) throw ValidationError("knn imputation needs k >= 1");
    const auto k = static_cast<std::size_t>(method.k);
    const auto scaling = standardization(cohort, nv);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& query = cohort[i];
        if (std::all_of(query.values.begin(), query.values.end(), [](const auto& x) { return x.has_value(); })) continue;
        ranked.clear();
        for (std::size_t j = 0; j < cohort.size(); ++j) {
            if (j != i) ranked.emplace_back(knn_distance(query, cohort[j], scaling), j);
        }
        std::sort(ranked.begin(), ranked.end());
        for (std::size_t v = 0; v < nv; ++v) {
            if (query.values[v]) continue;
            // Nearest k among the records that observe v.
            double sum = 0.0;
            std::size_t used = 0;
            for (const auto& [dist, j] : ranked) {
                if (used == k) break;
                if (!cohort[j].values[v]) continue;
                sum += *cohort[j].values[v];
                ++used;
            }
            if (used < k) {
                throw ValidationError("only " + std::to_string(used) + " records observe '" + vars[v].name +
                                      "', fewer than k = " + std::to_string(k));
            }
            out[i].values[v] = finish_value(vars[v], sum / static_cast<double>(k));
        }
    }
    return out;
}

double ridge_objective(std::span<const double> x, std::size_t p, std::span<const int> labels, double lambda,
                       std::span<const double> beta, double intercept)
{
    const std::size_t n = labels.size();
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = intercept;
        for (std::size_t j = 0; j < p; ++j) s += x[i * p + j] * beta[j];
        f += numeric::log1p_exp(-labels[i] * s);
    }
    for (double b : beta) f += lambda * b * b;
    return f;
}

std::vector<double> ridge_gradient(std::span<const double> x, std::size_t p, std::span<const int> labels,
                                   double lambda, std::span<const double> beta, double intercept)
{
    const std::size_t n = labels.size();
    std::vector<double> g(p + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = intercept;
        for (std::size_t j = 0; j < p; ++j) s += x[i * p + j] * beta[j];
        const double y = labels[i];
        const double r = -y * numeric::sigmoid(-y * s);
        for (std::size_t j = 0; j < p; ++j) g[j] += r * x[i * p + j];
        g[p] += r;
    }
    for (std::size_t j = 0; j < p; ++j) g[j] += 2.0 * lambda * beta[j];
    return g;
}

RidgeFit ridge_logistic_fit(std::span<const double> x, std::size_t p, std::span<const int> labels, double lambda)
{
    const std::size_t n = labels.size();
    if (x.size() != n * p) throw std::invalid_argument("ridge_logistic_fit: design size mismatch");
    if (!(lambda >= 0.0)) throw ValidationError("ridge penalty must be non-negative");
    bool pos = false, neg = false;
    for (int y : labels) {
        if (y == 1) pos = true;
        else if (y == -1) neg = true;
        else throw ValidationError("labels must be +1 or -1");
    }
    if (!pos || !neg) throw ValidationError("ridge baseline needs both outcome classes");

    auto objective = [&](std::span<const double> theta) {
        return ridge_objective(x, p, labels, lambda, theta.first(p), theta[p]);
    };
    auto gradient = [&](std::span<const double> theta) {
        return ridge_gradient(x, p, labels, lambda, theta.first(p), theta[p]);
    };
    auto norm = [](const std::vector<double>& g) {
        double s = 0.0;
        for (double v : g) s += v * v;
        return std::sqrt(s);
    };

    RidgeFit fit;
    std::vector<double> theta(p + 1, 0.0);
    double f = objective(theta);
    auto g = gradient(theta);
    fit.objective_trace.push_back(f);
    constexpr int max_iters = 200;
    constexpr double gtol = 1e-10;
    Eigen::MatrixXd hess(p + 1, p + 1);
    Eigen::VectorXd rhs(p + 1);
    for (int iter = 0; iter < max_iters && norm(g) >= gtol; ++iter) {
        // Newton direction: H = X'WX + 2 lambda I (intercept unpenalized).
        hess.setZero();
        for (std::size_t i = 0; i < n; ++i) {
            double s = theta[p];
            for (std::size_t j = 0; j < p; ++j) s += x[i * p + j] * theta[j];
            const double w = numeric::sigmoid_derivative(s);
            for (std::size_t a = 0; a <= p; ++a) {
                const double xa = a < p ? x[i * p + a] : 1.0;
                for (std::size_t b = 0; b <= a; ++b) hess(a, b) += w * xa * (b < p ? x[i * p + b] : 1.0);
            }
        }
        for (std::size_t j = 0; j < p; ++j) hess(j, j) += 2.0 * lambda;
        for (std::size_t a = 0; a <= p; ++a) {
            hess(a, a) += 1e-12;
            for (std::size_t b = 0; b < a; ++b) hess(b, a) = hess(a, b);
            rhs(a) = -g[a];
        }
        const Eigen::VectorXd step = hess.ldlt().solve(rhs);
        std::vector<double> dir(step.data(), step.data() + p + 1);
        double decrease = 0.0;
        for (std::size_t j = 0; j <= p; ++j) decrease -= g[j] * dir[j];
        if (!(decrease > 0.0)) break;

        double h = armijo_backtrack(objective, theta, dir, f, decrease, 0.2, 0.5);
        std::vector<double> next(p + 1);
        auto take = [&](double len) {
            for (std::size_t j = 0; j <= p; ++j) next[j] = theta[j] + len * dir[j];
        };
        if (h > 0.0) {
            take(h);
        } else {
            // Within rounding of the optimum the objective no longer resolves
            // the decrease; a full step is kept if it still shrinks the gradient.
            take(1.0);
            if (!(objective(next) <= f) || !(norm(gradient(next)) < norm(g))) break;
        }
        const double f_next = objective(next);
        if (!(f_next <= f)) break;
        theta = next;
        f = f_next;
        g = gradient(theta);
        fit.objective_trace.push_back(f);
        fit.iterations = iter + 1;
    }
    fit.beta.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(p));
    fit.intercept = theta[p];
    return fit;
}

double RidgeBaseline::score(const PatientRecord& record) const
{
    double s = model.intercept;
    for (std::size_t v = 0; v < model.beta.size(); ++v) {
        if (!record.values[v]) throw ValidationError("ridge baseline needs complete records ('" + record.id + "')");
        s += model.beta[v] * (*record.values[v] - scaling.mean[v]) / scaling.sd[v];
    }
    return s;
}

RidgeBaseline fit_ridge_baseline(std::span<const PatientRecord> cohort, double lambda)
{
    if (cohort.empty()) throw ValidationError("ridge baseline on an empty cohort");
    const std::size_t p = cohort.front().values.size();
    RidgeBaseline out;
    out.scaling = standardization(cohort, p);
    std::vector<double> x(cohort.size() * p);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& r = cohort[i];
        for (std::size_t v = 0; v < p; ++v) {
            if (!r.values[v]) throw ValidationError("ridge baseline needs complete records ('" + r.id + "')");
            x[i * p + v] = (*r.values[v] - out.scaling.mean[v]) / out.scaling.sd[v];
        }
    }
    std::vector<int> labels;
    for (const auto& r : cohort) labels.push_back(static_cast<int>(r.outcome));
    out.model = ridge_logistic_fit(x, p, labels, lambda);
    return out;
}

}  // namespace softscore
